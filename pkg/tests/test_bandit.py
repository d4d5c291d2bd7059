"""Unit and property tests for the LinUCB bandit core."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metareason.bandit import (
    BanditConfig,
    ConfigError,
    DimensionError,
    LinUcbBandit,
    NoActiveArmsError,
    SnapshotError,
    UnknownArmError,
    init_bandit,
)


def batch_ridge_theta(ridge: float, xs: list, rewards: list, dim: int) -> np.ndarray:
    """Independent oracle: closed-form ridge regression over the history."""
    if not xs:
        return np.zeros(dim)
    X = np.stack(xs)
    r = np.asarray(rewards)
    return np.linalg.solve(ridge * np.eye(dim) + X.T @ X, X.T @ r)


def greedy_config(dim, **kw):
    defaults = dict(explore_schedule="none", retire_threshold=-1.0)
    defaults.update(kw)
    return BanditConfig(dim=dim, **defaults)


class TestInit:
    def test_identity_prior(self):
        b = init_bandit(BanditConfig(dim=2, ridge=1.0), 3)
        assert len(b.arm_ids) == 3
        for arm_id in b.arm_ids:
            arm = b.stats(arm_id)
            np.testing.assert_array_equal(arm.A, np.eye(2))
            np.testing.assert_array_equal(arm.b, np.zeros(2))
            assert arm.pull_count == 0
        assert b.round == 0

    def test_inverse_of_scaled_prior(self):
        b = init_bandit(BanditConfig(dim=2, ridge=0.5), 1)
        np.testing.assert_allclose(b.stats(0).A_inv, 2.0 * np.eye(2))

    def test_zero_dim_rejected(self):
        with pytest.raises(ConfigError):
            init_bandit(BanditConfig(dim=0), 1)

    def test_bad_ridge_rejected(self):
        with pytest.raises(ConfigError):
            init_bandit(BanditConfig(dim=2, ridge=0.0), 1)

    def test_zero_arms_rejected(self):
        with pytest.raises(ConfigError):
            init_bandit(BanditConfig(dim=2), 0)


class TestScore:
    def test_fresh_arm_bonus_only(self):
        b = init_bandit(BanditConfig(dim=2, exploration=0.2, ridge=1.0), 1)
        assert b.score(0, [3.0, 4.0]) == pytest.approx(1.0, rel=1e-12)

    def test_zero_exploration_is_estimate(self):
        b = init_bandit(greedy_config(2, exploration=0.0), 1)
        b.update(0, [1.0, 0.0], 0.5)
        x = [0.3, 0.7]
        assert b.score(0, x) == pytest.approx(float(np.dot(x, b.stats(0).theta)), abs=1e-15)

    def test_five_updates_matches_direct_assembly(self):
        # independent oracle: assemble A = I + 5 xx', b = 5x, solve directly
        b = init_bandit(greedy_config(2, exploration=0.0), 1)
        x = np.array([1.0, 0.0])
        for _ in range(5):
            b.update(0, x, 1.0)
        direct = np.linalg.solve(np.eye(2) + 5 * np.outer(x, x), 5 * x)
        np.testing.assert_allclose(b.stats(0).theta, direct, atol=1e-12)
        assert b.score(0, x) == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_unknown_arm(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(UnknownArmError):
            b.score(7, [1.0, 0.0])

    def test_retired_arm_not_scorable(self):
        b = init_bandit(BanditConfig(dim=2, retire_threshold=0.3, retire_min_pulls=1), 2)
        b.update(0, [1.0, 0.0], 0.0)
        assert b.stats(0).retired
        with pytest.raises(UnknownArmError):
            b.score(0, [1.0, 0.0])

    def test_dimension_mismatch(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(DimensionError):
            b.score(0, [1.0, 2.0, 3.0])

    def test_non_finite_context(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(ValueError):
            b.score(0, [np.nan, 0.0])


class TestSelect:
    def test_tie_break_lowest_id(self):
        b = init_bandit(greedy_config(2, exploration=0.2), 2)
        assert b.select([1.0, 1.0]) == 0

    def test_trained_arm_beats_fresh_under_greedy(self):
        b = init_bandit(greedy_config(2, exploration=0.0), 2)
        x = [1.0, 0.0]
        for _ in range(3):
            b.update(1, x, 1.0)
        assert b.select(x) == 1

    def test_retired_arm_never_selected(self):
        b = init_bandit(
            BanditConfig(dim=2, retire_threshold=0.3, retire_min_pulls=1,
                         explore_schedule="none"),
            2,
        )
        x = [1.0, 0.0]
        b.update(0, x, 0.0)  # retires arm 0
        assert b.stats(0).retired
        for _ in range(50):
            assert b.select(x) == 1
            b.update(1, x, 0.9)

    def test_all_retired_raises(self):
        b = init_bandit(BanditConfig(dim=2, retire_threshold=0.5, retire_min_pulls=1), 1)
        b.update(0, [1.0, 0.0], 0.0)
        with pytest.raises(NoActiveArmsError):
            b.select([1.0, 0.0])

    def test_forced_exploration_only_fresh_arms(self):
        cfg = BanditConfig(dim=2, explore_schedule="constant", explore_epsilon=1.0,
                           retire_threshold=-1.0)
        b = init_bandit(cfg, 3, rng_seed=123)
        x = [1.0, 0.0]
        picks = set()
        for _ in range(30):
            sel = b.select_detail(x)
            assert sel.forced
            assert b.stats(sel.arm).pull_count == 0
            picks.add(sel.arm)
            b.update(2 if sel.arm != 2 else sel.arm, x, 0.5)  # keep arm 0/1 fresh sometimes
            if all(b.stats(i).pull_count > 0 for i in b.arm_ids):
                break
        # once every arm has been pulled, epsilon never forces again
        if all(b.stats(i).pull_count > 0 for i in b.arm_ids):
            assert not b.select_detail(x).forced

    def test_selection_does_not_mutate(self):
        b = init_bandit(BanditConfig(dim=2), 2, rng_seed=5)
        before = b.snapshot()
        for _ in range(5):
            b.select([0.5, 0.5])
        assert b.snapshot() == before


class TestUpdate:
    def test_single_step_algebra(self):
        b = init_bandit(BanditConfig(dim=2, ridge=1.0), 1)
        b.update(0, [1.0, 0.0], 0.5)
        arm = b.stats(0)
        np.testing.assert_allclose(arm.A, [[2.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(arm.b, [0.5, 0.0])
        np.testing.assert_allclose(arm.theta, [0.25, 0.0], atol=1e-15)
        assert arm.pull_count == 1 and b.round == 1

    def test_matches_batch_ridge(self):
        rng = np.random.default_rng(3)
        b = init_bandit(greedy_config(4), 1)
        xs, rs = [], []
        for _ in range(300):
            x = rng.standard_normal(4)
            r = float(rng.uniform(-1, 1))
            b.update(0, x, r)
            xs.append(x)
            rs.append(r)
        oracle = batch_ridge_theta(1.0, xs, rs, 4)
        np.testing.assert_allclose(b.stats(0).theta, oracle, atol=1e-9)

    def test_retires_after_low_mean(self):
        b = init_bandit(BanditConfig(dim=2, retire_threshold=0.3, retire_min_pulls=5), 1)
        for i in range(5):
            assert not b.stats(0).retired
            b.update(0, [1.0, 0.0], 0.1)
        assert b.stats(0).retired
        assert b.stats(0).pull_count == 5

    def test_reward_clamped(self):
        b = init_bandit(greedy_config(2), 1)
        b.update(0, [1.0, 0.0], 10.0)
        assert b.stats(0).reward_sum == 1.0

    def test_non_finite_reward(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(ValueError):
            b.update(0, [1.0, 0.0], float("inf"))

    def test_unknown_arm(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(UnknownArmError):
            b.update(9, [1.0, 0.0], 0.5)

    def test_inverse_recompute_interval(self):
        cfg = greedy_config(3, recompute_interval=16)
        b = init_bandit(cfg, 1)
        rng = np.random.default_rng(0)
        for _ in range(64):
            b.update(0, rng.standard_normal(3), float(rng.uniform(-1, 1)))
            assert b.inverse_drift() <= 1e-6


class TestAddArm:
    def test_id_assignment_and_prior(self):
        b = init_bandit(BanditConfig(dim=2, ridge=2.0), 3)
        new_id = b.add_arm()
        assert new_id == 3
        np.testing.assert_allclose(b.stats(3).A_inv, np.eye(2) / 2.0)

    def test_new_arm_score_is_scaled_norm(self):
        cfg = BanditConfig(dim=3, exploration=0.7, ridge=4.0)
        b = init_bandit(cfg, 1)
        b.add_arm()
        x = np.array([1.0, 2.0, -2.0])
        expected = 0.7 * np.sqrt(float(x @ x) / 4.0)
        assert b.score(1, x) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(min_value=0, max_value=60), st.integers(min_value=1, max_value=40))
    def test_pull_count_bounded_by_age(self, warmup, extra):
        rng = np.random.default_rng(warmup * 131 + extra)
        b = init_bandit(greedy_config(2), 2, rng_seed=1)
        for _ in range(warmup):
            b.update(int(rng.integers(2)), rng.standard_normal(2), float(rng.uniform(-1, 1)))
        created = b.round
        new_arm = b.add_arm(created_at_round=created)
        for _ in range(extra):
            b.update(int(rng.integers(len(b.arm_ids))), rng.standard_normal(2),
                     float(rng.uniform(-1, 1)))
            arm = b.stats(new_arm)
            assert arm.pull_count <= b.round - arm.created_at_round + 1


class TestSnapshot:
    def test_fresh_roundtrip_scores_identical(self):
        b = init_bandit(BanditConfig(dim=3, exploration=0.4), 3, rng_seed=9)
        restored = LinUcbBandit.restore(b.snapshot())
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.standard_normal(3)
            for arm_id in b.arm_ids:
                assert b.score(arm_id, x) == restored.score(arm_id, x)

    def test_roundtrip_bit_equivalent(self):
        rng = np.random.default_rng(10)
        b = init_bandit(greedy_config(4), 3, rng_seed=77)
        for _ in range(500):
            b.update(int(rng.integers(3)), rng.standard_normal(4), float(rng.uniform(-1, 1)))
        snap = b.snapshot()
        assert LinUcbBandit.restore(snap).snapshot() == snap

    def test_restore_midrun_preserves_selection_sequence(self):
        cfg = BanditConfig(dim=4, explore_schedule="inverse_round", retire_threshold=-1.0)
        b = init_bandit(cfg, 3, rng_seed=41)
        rng = np.random.default_rng(8)
        for _ in range(500):
            x = rng.standard_normal(4)
            b.update(b.select(x), x, float(rng.uniform(-1, 1)))
        twin = LinUcbBandit.restore(b.snapshot())
        replay_rng = np.random.default_rng(9)
        for _ in range(200):
            x = replay_rng.standard_normal(4)
            a1, a2 = b.select(x), twin.select(x)
            assert a1 == a2
            r = float(replay_rng.uniform(-1, 1))
            b.update(a1, x, r)
            twin.update(a2, x, r)

    def test_truncated_bytes_rejected(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        with pytest.raises(SnapshotError):
            LinUcbBandit.restore(b.snapshot()[:40])

    def test_wrong_version_rejected(self):
        b = init_bandit(BanditConfig(dim=2), 1)
        doc = b.snapshot().decode().replace('"version": 1', '"version": 99')
        with pytest.raises(SnapshotError):
            LinUcbBandit.restore(doc.encode())

    def test_garbage_rejected(self):
        with pytest.raises(SnapshotError):
            LinUcbBandit.restore(b"not json at all")


class TestProperties:
    def test_scale_covariance_of_greedy_argmax(self):
        # scaling all rewards by a positive constant preserves the argmax
        rng = np.random.default_rng(6)
        for trial in range(20):
            scale = float(rng.uniform(0.1, 9.0))
            b1 = init_bandit(greedy_config(3, exploration=0.0), 3)
            b2 = init_bandit(greedy_config(3, exploration=0.0), 3)
            for _ in range(40):
                arm = int(rng.integers(3))
                x = rng.standard_normal(3)
                r = float(rng.uniform(-0.1, 0.1))
                b1.update(arm, x, r)
                b2.update(arm, x, r * scale)
            for _ in range(10):
                probe = rng.standard_normal(3)
                assert b1.select(probe) == b2.select(probe)

    def test_inverse_fidelity_long_run(self):
        rng = np.random.default_rng(12)
        b = init_bandit(greedy_config(8), 2)
        for i in range(2000):
            b.update(int(rng.integers(2)), rng.standard_normal(8), float(rng.uniform(-1, 1)))
            if i % 100 == 0:
                assert b.inverse_drift() <= 1e-6
        assert b.inverse_drift() <= 1e-6

    @given(st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
                    min_size=1, max_size=40))
    def test_theta_matches_ridge_for_any_reward_sequence(self, rewards):
        b = init_bandit(greedy_config(2), 1)
        rng = np.random.default_rng(len(rewards))
        xs = []
        for r in rewards:
            x = rng.standard_normal(2)
            b.update(0, x, r)
            xs.append(x)
        oracle = batch_ridge_theta(1.0, xs, rewards, 2)
        np.testing.assert_allclose(b.stats(0).theta, oracle, atol=1e-9)

    def test_epsilon_inverse_round_decays(self):
        cfg = BanditConfig(dim=2, explore_schedule="inverse_round", retire_threshold=-1.0)
        b = init_bandit(cfg, 1, rng_seed=0)
        assert b._epsilon() == 1.0
        for k in range(1, 6):
            b.update(0, [1.0, 0.0], 0.5)
            assert b._epsilon() == pytest.approx(1.0 / (k + 1))
