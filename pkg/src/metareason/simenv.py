"""Synthetic contextual-bandit environments and policy benchmark loops.

The environment draws unit-norm contexts clustered around per-arm
directions and pays ``clamp(x' theta_arm + gaussian noise, -1, 1)``.
Environments are immutable; every stochastic call takes an explicit
generator, so parallel runs with distinct seeds never interact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import GenerationRequest
from .bandit import BanditConfig, LinUcbBandit, UnknownArmError
from .prompts import direct_selection_prompt

POLICIES = ("linucb", "random", "direct")


class ScenarioError(ValueError):
    """Scenario or environment spec is ill-formed."""


@dataclass(frozen=True)
class SyntheticLinearEnv:
    dim: int
    thetas: np.ndarray  # (n_arms, dim) true coefficients
    noise_sigma: float
    centers: np.ndarray  # (n_clusters, dim) context cluster directions
    jitter: float

    @property
    def n_arms(self) -> int:
        return int(self.thetas.shape[0])

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        center = self.centers[int(rng.integers(len(self.centers)))]
        v = center + self.jitter * rng.standard_normal(self.dim)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:  # measure-zero; resample deterministically
            return self.sample_context(rng)
        return v / norm

    def expected_reward(self, arm: int, x: np.ndarray) -> float:
        if not 0 <= arm < self.n_arms:
            raise UnknownArmError(f"env has no arm {arm}")
        return float(np.clip(self.thetas[arm] @ x, -1.0, 1.0))

    def best_arm(self, x: np.ndarray) -> int:
        return int(np.argmax(self.thetas @ x))


def env_step(env: SyntheticLinearEnv, arm: int, x, rng: np.random.Generator) -> float:
    """Noisy reward draw for pulling ``arm`` under context ``x``."""
    if not 0 <= arm < env.n_arms:
        raise UnknownArmError(f"env has no arm {arm}")
    v = np.asarray(x, dtype=np.float64)
    raw = float(env.thetas[arm] @ v) + float(rng.normal(0.0, env.noise_sigma))
    return float(np.clip(raw, -1.0, 1.0))


def make_clustered_env(
    dim: int,
    n_arms: int,
    noise_sigma: float,
    seed: int,
    aligned: float = 0.55,
    shared: float = 0.4,
    jitter: float = 0.15,
) -> SyntheticLinearEnv:
    """Environment where each arm is best near its own context cluster.

    Arm coefficients are ``aligned * w_arm + shared * m`` with ``m`` a
    common direction and ``w_arm`` mutually orthogonal, all orthogonal to
    ``m``; contexts cluster around ``m + w_arm``. The shared component
    keeps every expected reward positive, which benchmark monotonicity
    checks rely on.
    """
    if n_arms + 1 > dim:
        raise ScenarioError(f"need dim >= n_arms + 1, got dim={dim}, n_arms={n_arms}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, n_arms + 1)))
    m = basis[:, 0]
    arm_dirs = basis[:, 1:].T  # (n_arms, dim)
    thetas = aligned * arm_dirs + shared * m
    centers = m + arm_dirs
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return SyntheticLinearEnv(
        dim=dim, thetas=thetas, noise_sigma=noise_sigma, centers=centers, jitter=jitter
    )


def env_from_spec(spec: dict, seed: int) -> SyntheticLinearEnv:
    """Build an environment from a parsed spec mapping.

    Either explicit ``thetas`` (with optional ``centers``) or the
    ``clustered`` generator keyed on ``theta_seed``.
    """
    if not isinstance(spec, dict):
        raise ScenarioError("env spec must be a mapping")
    try:
        dim = int(spec["dim"])
        noise_sigma = float(spec.get("noise_sigma", 0.1))
        if "thetas" in spec:
            thetas = np.asarray(spec["thetas"], dtype=np.float64)
            if thetas.ndim != 2 or thetas.shape[1] != dim:
                raise ScenarioError(f"thetas must be (n_arms, {dim})")
            centers = np.asarray(
                spec.get("centers", thetas / np.linalg.norm(thetas, axis=1, keepdims=True)),
                dtype=np.float64,
            )
            return SyntheticLinearEnv(
                dim=dim,
                thetas=thetas,
                noise_sigma=noise_sigma,
                centers=centers,
                jitter=float(spec.get("jitter", 0.15)),
            )
        return make_clustered_env(
            dim=dim,
            n_arms=int(spec["arms"]),
            noise_sigma=noise_sigma,
            seed=int(spec.get("theta_seed", seed)),
            aligned=float(spec.get("aligned", 0.55)),
            shared=float(spec.get("shared", 0.4)),
            jitter=float(spec.get("jitter", 0.15)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad env spec: {exc}") from exc


@dataclass
class PolicyRun:
    """Per-round record of one policy rollout."""

    policy: str
    seed: int
    rewards: list[float]
    expected: list[float]  # noise-free value of the chosen arm
    oracle_expected: list[float]
    arms: list[int]

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.rewards)

    @property
    def regret(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.oracle_expected) - np.asarray(self.expected))


def _direct_choice(backend, report: str, n_arms: int) -> int:
    """Arm choice parsed from a model reply; scripted under mock backends."""
    prompt = direct_selection_prompt(report, [f"arm {i}" for i in range(n_arms)])
    reply = backend.generate(
        GenerationRequest(system_prompt="", user_prompt=prompt, max_tokens=8, temperature=0.0)
    )
    for token in reply.text.split():
        digits = "".join(ch for ch in token if ch.isdigit())
        if digits:
            return int(digits) % n_arms
    return 0


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Context, noise and policy generators; contexts/noise are shared across
    policies at the same seed so rollouts are directly comparable."""
    return (
        np.random.default_rng([seed, 1]),
        np.random.default_rng([seed, 2]),
        np.random.default_rng([seed, 3]),
    )


def run_policy(
    env: SyntheticLinearEnv,
    policy: str,
    rounds: int,
    seed: int,
    bandit_config: BanditConfig | None = None,
    direct_backend=None,
) -> PolicyRun:
    """Roll one policy on the environment for ``rounds`` steps."""
    if policy not in POLICIES and policy != "oracle":
        raise ScenarioError(f"unknown policy {policy!r}")
    ctx_rng, noise_rng, policy_rng = _streams(seed)
    bandit = None
    if policy == "linucb":
        cfg = bandit_config or BanditConfig(
            dim=env.dim, retire_threshold=-1.0, explore_schedule="none"
        )
        bandit = LinUcbBandit(cfg, initial_arms=env.n_arms, rng_seed=seed)

    rewards: list[float] = []
    expected: list[float] = []
    oracle_expected: list[float] = []
    arms: list[int] = []
    for _ in range(rounds):
        x = env.sample_context(ctx_rng)
        if policy == "linucb":
            arm = bandit.select(x)
        elif policy == "random":
            arm = int(policy_rng.integers(env.n_arms))
        elif policy == "oracle":
            arm = env.best_arm(x)
        else:
            arm = _direct_choice(direct_backend, f"context: {np.round(x, 3).tolist()}", env.n_arms)
        r = env_step(env, arm, x, noise_rng)
        if policy == "linucb":
            bandit.update(arm, x, r)
        rewards.append(r)
        expected.append(env.expected_reward(arm, x))
        oracle_expected.append(env.expected_reward(env.best_arm(x), x))
        arms.append(arm)
    return PolicyRun(
        policy=policy,
        seed=seed,
        rewards=rewards,
        expected=expected,
        oracle_expected=oracle_expected,
        arms=arms,
    )


def run_oracle(env: SyntheticLinearEnv, rounds: int, seed: int) -> PolicyRun:
    """Known-coefficients comparator: always pulls the true best arm."""
    return run_policy(env, "oracle", rounds, seed)
