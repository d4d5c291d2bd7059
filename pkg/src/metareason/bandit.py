"""Disjoint-model LinUCB contextual bandit with a growing arm set.

Each arm keeps its own ridge-regularized design matrix ``A`` and response
vector ``b``; the coefficient estimate is ``theta = A^-1 b`` and arms are
scored as ``x' theta + exploration * sqrt(x' A^-1 x)``. The inverse is
maintained incrementally with Sherman-Morrison rank-1 updates and rebuilt
from ``A`` by a direct solve every ``recompute_interval`` pulls to bound
float drift.

Arms can be appended at any time with a neutral prior (zero estimate,
identity-scaled design matrix), optionally force-explored on a decaying
epsilon schedule while they have never been pulled, and retired once their
empirical mean reward stays below ``retire_threshold``.

Concurrency: single writer. A bandit instance may be handed between
threads but must not receive concurrent ``update`` calls; score/select on
a snapshot-restored copy is safe anywhere.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_VERSION = 1

EXPLORE_SCHEDULES = ("inverse_round", "constant", "none")


class BanditError(Exception):
    """Base class for bandit failures."""


class ConfigError(BanditError, ValueError):
    """Invalid bandit configuration."""


class UnknownArmError(BanditError, LookupError):
    """Arm id is not present or not selectable."""


class DimensionError(BanditError, ValueError):
    """Context vector does not match the configured dimension."""


class NoActiveArmsError(BanditError, RuntimeError):
    """Every arm has been retired; nothing can be selected."""


class SnapshotError(BanditError, ValueError):
    """Snapshot bytes are malformed or from an unsupported version."""


@dataclass(frozen=True)
class BanditConfig:
    """Hyperparameters shared by every arm of one bandit instance.

    ``exploration`` is the UCB bonus coefficient (0 disables the bonus),
    ``ridge`` the prior scale used to initialize ``A = ridge * I``.
    """

    dim: int
    exploration: float = 0.2
    ridge: float = 1.0
    explore_schedule: str = "inverse_round"
    explore_epsilon: float = 0.1
    retire_threshold: float = 0.3
    retire_min_pulls: int = 5
    recompute_interval: int = 256

    def validate(self) -> None:
        if self.dim <= 0:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.exploration < 0:
            raise ConfigError(f"exploration must be >= 0, got {self.exploration}")
        if self.ridge <= 0:
            raise ConfigError(f"ridge must be positive, got {self.ridge}")
        if self.explore_schedule not in EXPLORE_SCHEDULES:
            raise ConfigError(f"unknown explore_schedule {self.explore_schedule!r}")
        if not 0.0 <= self.explore_epsilon <= 1.0:
            raise ConfigError(f"explore_epsilon must be in [0, 1], got {self.explore_epsilon}")
        if self.retire_min_pulls < 1:
            raise ConfigError(f"retire_min_pulls must be >= 1, got {self.retire_min_pulls}")
        if self.recompute_interval < 1:
            raise ConfigError(f"recompute_interval must be >= 1, got {self.recompute_interval}")


@dataclass
class ArmStats:
    """Per-arm sufficient statistics. ``A_inv`` mirrors ``inv(A)``."""

    A: np.ndarray
    A_inv: np.ndarray
    b: np.ndarray
    pull_count: int = 0
    reward_sum: float = 0.0
    created_at_round: int = 0
    retired: bool = False

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.pull_count if self.pull_count else 0.0


@dataclass(frozen=True)
class Selection:
    """Outcome of one selection: chosen arm plus tracing detail."""

    arm: int
    forced: bool
    scores: dict[int, float] = field(default_factory=dict)


def _fresh_arm(config: BanditConfig, created_at_round: int) -> ArmStats:
    d = config.dim
    return ArmStats(
        A=config.ridge * np.eye(d),
        A_inv=(1.0 / config.ridge) * np.eye(d),
        b=np.zeros(d),
        created_at_round=created_at_round,
    )


class LinUcbBandit:
    """LinUCB bandit state: arms, global round counter and RNG seed.

    Randomness (the forced-exploration coin and the uniform pick among
    never-pulled arms) is drawn from a generator keyed on
    ``(rng_seed, round)``, so behavior is a pure function of serialized
    state and survives snapshot/restore exactly.
    """

    def __init__(self, config: BanditConfig, initial_arms: int = 1, rng_seed: int = 0):
        config.validate()
        if initial_arms < 1:
            raise ConfigError(f"initial_arms must be >= 1, got {initial_arms}")
        self.config = config
        self.rng_seed = int(rng_seed) & 0xFFFFFFFFFFFFFFFF
        self.round = 0
        self.arms: dict[int, ArmStats] = {
            i: _fresh_arm(config, 0) for i in range(initial_arms)
        }

    # -- queries ---------------------------------------------------------

    @property
    def arm_ids(self) -> list[int]:
        return list(self.arms)

    @property
    def active_arm_ids(self) -> list[int]:
        return [i for i, a in self.arms.items() if not a.retired]

    def stats(self, arm_id: int) -> ArmStats:
        try:
            return self.arms[arm_id]
        except KeyError:
            raise UnknownArmError(f"unknown arm {arm_id}") from None

    def _context(self, x) -> np.ndarray:
        v = np.asarray(x, dtype=np.float64).ravel()
        if v.size != self.config.dim:
            raise DimensionError(
                f"context has dimension {v.size}, bandit expects {self.config.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("context vector contains non-finite entries")
        return v

    def score(self, arm_id: int, x) -> float:
        """UCB score: estimated reward plus exploration bonus."""
        arm = self.stats(arm_id)
        if arm.retired:
            raise UnknownArmError(f"arm {arm_id} is retired")
        v = self._context(x)
        estimate = float(v @ arm.theta)
        bonus = math.sqrt(max(0.0, float(v @ (arm.A_inv @ v))))
        return estimate + self.config.exploration * bonus

    def _epsilon(self) -> float:
        schedule = self.config.explore_schedule
        if schedule == "inverse_round":
            return 1.0 / (self.round + 1)
        if schedule == "constant":
            return self.config.explore_epsilon
        return 0.0

    def select_detail(self, x) -> Selection:
        """Pick an arm for context ``x`` without mutating any state.

        A never-pulled arm is force-explored with probability epsilon (per
        the configured schedule); otherwise the highest-scoring active arm
        wins, ties broken by lowest id.
        """
        v = self._context(x)
        active = self.active_arm_ids
        if not active:
            raise NoActiveArmsError("all arms are retired")

        eps = self._epsilon()
        if eps > 0.0:
            fresh = [i for i in active if self.arms[i].pull_count == 0]
            if fresh:
                rng = np.random.default_rng([self.rng_seed, self.round])
                if rng.random() < eps:
                    pick = fresh[int(rng.integers(len(fresh)))]
                    return Selection(arm=pick, forced=True)

        scores: dict[int, float] = {}
        best_id = active[0]
        best_score = -math.inf
        for arm_id in active:
            s = self.score(arm_id, v)
            scores[arm_id] = s
            if s > best_score:
                best_score = s
                best_id = arm_id
        return Selection(arm=best_id, forced=False, scores=scores)

    def select(self, x) -> int:
        return self.select_detail(x).arm

    # -- mutation --------------------------------------------------------

    def update(self, arm_id: int, x, reward: float) -> None:
        """Fold one (context, reward) observation into an arm.

        Rewards are clamped to [-1, 1] before entering the statistics so a
        runaway evaluator cannot blow up the coefficient estimates.
        """
        arm = self.stats(arm_id)
        v = self._context(x)
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        r = min(1.0, max(-1.0, float(reward)))

        arm.A += np.outer(v, v)
        av = arm.A_inv @ v
        denom = 1.0 + float(v @ av)
        if denom > 1e-12:
            arm.A_inv -= np.outer(av, av) / denom
        else:
            arm.A_inv = np.linalg.inv(arm.A)
        arm.b += r * v
        arm.pull_count += 1
        arm.reward_sum += r
        self.round += 1

        if arm.pull_count % self.config.recompute_interval == 0:
            arm.A_inv = np.linalg.inv(arm.A)

        if (
            not arm.retired
            and arm.pull_count >= self.config.retire_min_pulls
            and arm.mean_reward < self.config.retire_threshold
        ):
            arm.retired = True

    def add_arm(self, created_at_round: int | None = None) -> int:
        """Append an arm with a neutral prior; returns its id."""
        new_id = max(self.arms) + 1 if self.arms else 0
        at = self.round if created_at_round is None else int(created_at_round)
        self.arms[new_id] = _fresh_arm(self.config, at)
        return new_id

    # -- diagnostics -----------------------------------------------------

    def inverse_drift(self) -> float:
        """Max-norm of ``A @ A_inv - I`` over all arms (0 when exact)."""
        eye = np.eye(self.config.dim)
        worst = 0.0
        for arm in self.arms.values():
            worst = max(worst, float(np.max(np.abs(arm.A @ arm.A_inv - eye))))
        return worst

    # -- persistence -----------------------------------------------------

    def snapshot(self) -> bytes:
        """Serialize to a self-describing UTF-8 JSON document."""
        doc = {
            "version": SNAPSHOT_VERSION,
            "config": {
                "dim": self.config.dim,
                "exploration": self.config.exploration,
                "ridge": self.config.ridge,
                "explore_schedule": self.config.explore_schedule,
                "explore_epsilon": self.config.explore_epsilon,
                "retire_threshold": self.config.retire_threshold,
                "retire_min_pulls": self.config.retire_min_pulls,
                "recompute_interval": self.config.recompute_interval,
            },
            "round": self.round,
            "rng_seed": self.rng_seed,
            "arms": [
                {
                    "id": arm_id,
                    "created_at_round": arm.created_at_round,
                    "retired": arm.retired,
                    "pull_count": arm.pull_count,
                    "reward_sum": arm.reward_sum,
                    "A": [float(v) for v in arm.A.ravel()],
                    "b": [float(v) for v in arm.b],
                }
                for arm_id, arm in self.arms.items()
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2).encode("utf-8")

    @classmethod
    def restore(cls, data: bytes) -> "LinUcbBandit":
        """Rebuild a bandit from snapshot bytes; ``A_inv`` is re-derived."""
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"unreadable snapshot: {exc}") from exc
        if not isinstance(doc, dict):
            raise SnapshotError("snapshot root must be an object")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {doc.get('version')!r}")
        try:
            cfg = BanditConfig(**doc["config"])
            cfg.validate()
            bandit = cls.__new__(cls)
            bandit.config = cfg
            bandit.round = int(doc["round"])
            bandit.rng_seed = int(doc["rng_seed"])
            bandit.arms = {}
            d = cfg.dim
            for rec in doc["arms"]:
                a = np.asarray(rec["A"], dtype=np.float64)
                b = np.asarray(rec["b"], dtype=np.float64)
                if a.size != d * d or b.size != d:
                    raise SnapshotError("arm matrix size does not match config dim")
                a = a.reshape(d, d)
                if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                    raise SnapshotError("arm statistics contain non-finite values")
                bandit.arms[int(rec["id"])] = ArmStats(
                    A=a,
                    A_inv=np.linalg.inv(a),
                    b=b,
                    pull_count=int(rec["pull_count"]),
                    reward_sum=float(rec["reward_sum"]),
                    created_at_round=int(rec["created_at_round"]),
                    retired=bool(rec["retired"]),
                )
        except SnapshotError:
            raise
        except (KeyError, TypeError, ValueError, np.linalg.LinAlgError) as exc:
            raise SnapshotError(f"malformed snapshot: {exc}") from exc
        return bandit


def init_bandit(config: BanditConfig, initial_arm_count: int, rng_seed: int = 0) -> LinUcbBandit:
    """Create a bandit with ``initial_arm_count`` neutral-prior arms."""
    return LinUcbBandit(config, initial_arms=initial_arm_count, rng_seed=rng_seed)
