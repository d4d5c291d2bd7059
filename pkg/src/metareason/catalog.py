"""Strategy catalog: the selectable guidance texts behind bandit arms.

A catalog starts from a curated seed table of diagnosis/strategy pairs
and, in dynamic mode, grows as the meta-level model proposes new guidance
texts. Every strategy maps to exactly one bandit arm and the mapping is
append-only: retirement flags an arm but never deletes it, so the
strategy set at any round is a superset of every earlier round's set.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .backends import GenerationRequest
from .bandit import ConfigError, LinUcbBandit
from .prompts import meta_proposal_prompt

# (diagnosis, strategy) seed pairs, in catalog order. The first three are
# the standard set; the remainder seed the growable variant.
SEED_ROWS: tuple[tuple[str, str], ...] = (
    (
        "Progress is insufficient or the current strategy seems ineffective.",
        "Restart from scratch and propose alternative strategies.",
    ),
    (
        "There are mistakes in intermediate steps.",
        "Backtrack to the point where the error occurred.",
    ),
    (
        "The current approach is working well.",
        "Continue and provide specific suggestions for the next steps.",
    ),
    (
        "Ambiguous or conflicting intermediate results are observed.",
        "Pause to clarify and disambiguate the current reasoning, then reconcile the discrepancies.",
    ),
    (
        "The reasoning process appears overly complex or convoluted.",
        "Simplify by decomposing the task into smaller, manageable sub-tasks.",
    ),
    (
        "Evidence of error propagation or low confidence in certain sub-components.",
        "Perform targeted verification on critical steps and focus on areas with low confidence.",
    ),
    (
        "Repetitive or circular reasoning patterns are detected.",
        "Reset to a previously successful checkpoint and explore alternative solution paths.",
    ),
)

DEFAULT_GUIDANCE_INDEX = 2  # the "continue" row opens every task

CATALOG_MODES = ("fixed_k3", "fixed_k5", "dynamic")

_SEED_COUNT = {"fixed_k3": 3, "fixed_k5": 5, "dynamic": len(SEED_ROWS)}


class ProposalFormatError(ValueError):
    """Meta-model response carries no usable Action field."""


class UnknownStrategyError(LookupError):
    """No strategy registered under this arm id."""


@dataclass(frozen=True)
class CatalogConfig:
    mode: str = "dynamic"
    dedup_similarity_threshold: float = 0.90
    max_arms: int = 32

    def validate(self) -> None:
        if self.mode not in CATALOG_MODES:
            raise ConfigError(f"unknown catalog mode {self.mode!r}")
        if not 0.0 <= self.dedup_similarity_threshold <= 1.0:
            raise ConfigError("dedup_similarity_threshold must be in [0, 1]")
        if self.max_arms < 1:
            raise ConfigError("max_arms must be >= 1")

    @property
    def seed_count(self) -> int:
        return _SEED_COUNT[self.mode]


@dataclass(frozen=True)
class Strategy:
    arm_id: int
    guidance_text: str
    diagnosis_hint: str
    origin: str  # "seed" | "dynamic"
    created_at_round: int


_ACTION_RE = re.compile(r"^\s*-?\s*Action\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def parse_action(text: str) -> str:
    """Extract the Action field from a meta-model response."""
    m = _ACTION_RE.search(text)
    if not m:
        raise ProposalFormatError("response has no Action field")
    action = (m.group(1) + text[m.end():]).strip()
    if not action:
        raise ProposalFormatError("Action field is empty")
    return action


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


class StrategyCatalog:
    """Owns the arm_id -> strategy mapping and proposal dedup.

    After seeding, arm creation goes through this class so the bijection
    between catalog entries and bandit arms holds by construction.
    """

    def __init__(self, config: CatalogConfig):
        config.validate()
        self.config = config
        self._strategies: dict[int, Strategy] = {}
        self._embeddings: dict[int, np.ndarray] = {}

    # -- seeding ---------------------------------------------------------

    def seed(self, bandit: LinUcbBandit) -> None:
        """Bind the seed strategies onto a freshly initialized bandit.

        The bandit must carry exactly one untouched arm per seed row
        (ids 0..K-1). Re-seeding an already seeded catalog is a no-op.
        """
        if self._strategies:
            return
        rows = SEED_ROWS[: self.config.seed_count]
        expected = list(range(len(rows)))
        if bandit.arm_ids != expected:
            raise ConfigError(
                f"seeding needs a fresh bandit with arms {expected}, got {bandit.arm_ids}"
            )
        for arm_id in expected:
            if bandit.stats(arm_id).pull_count != 0:
                raise ConfigError(f"arm {arm_id} already has pulls; cannot seed over it")
        for arm_id, (diagnosis, guidance) in zip(expected, rows):
            self._strategies[arm_id] = Strategy(
                arm_id=arm_id,
                guidance_text=guidance,
                diagnosis_hint=diagnosis,
                origin="seed",
                created_at_round=0,
            )

    @property
    def growth_enabled(self) -> bool:
        return self.config.mode == "dynamic"

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._strategies)

    @property
    def arm_ids(self) -> list[int]:
        return list(self._strategies)

    def get(self, arm_id: int) -> Strategy:
        try:
            return self._strategies[arm_id]
        except KeyError:
            raise UnknownStrategyError(f"no strategy for arm {arm_id}") from None

    def default_guidance(self) -> Strategy:
        """Opening guidance used before any bandit selection exists."""
        return self.get(DEFAULT_GUIDANCE_INDEX)

    def guidance_prompt_text(self, strategy: Strategy) -> str:
        """Feedback block injected into the step-generation prompt."""
        if strategy.diagnosis_hint:
            return f"{strategy.guidance_text} (Applies when: {strategy.diagnosis_hint})"
        return strategy.guidance_text

    # -- growth ----------------------------------------------------------

    def _embedding(self, arm_id: int, embedder) -> np.ndarray:
        cached = self._embeddings.get(arm_id)
        if cached is None:
            cached = np.asarray(
                embedder.embed(self._strategies[arm_id].guidance_text).vector
            )
            self._embeddings[arm_id] = cached
        return cached

    def propose(
        self,
        report_text: str,
        meta_backend,
        embedder,
        bandit: LinUcbBandit,
        max_tokens: int = 256,
        temperature: float = 0.7,
        top_p: float = 1.0,
    ) -> Strategy | None:
        """Ask the meta model for a new strategy; register it unless duplicate.

        Returns the new strategy, or None when growth is disabled, the
        catalog is full, or the proposal duplicates an existing guidance
        (cosine similarity at or above the dedup threshold).
        """
        if not self.growth_enabled or len(self._strategies) >= self.config.max_arms:
            return None
        response = meta_backend.generate(
            GenerationRequest(
                system_prompt="",
                user_prompt=meta_proposal_prompt(report_text),
                max_tokens=max_tokens,
                temperature=temperature,
                top_p=top_p,
            )
        )
        candidate = parse_action(response.text)
        vec = np.asarray(embedder.embed(candidate).vector)
        for arm_id in self._strategies:
            if _cosine(vec, self._embedding(arm_id, embedder)) >= self.config.dedup_similarity_threshold:
                return None
        arm_id = bandit.add_arm()
        strategy = Strategy(
            arm_id=arm_id,
            guidance_text=candidate,
            diagnosis_hint="",
            origin="dynamic",
            created_at_round=bandit.round,
        )
        self._strategies[arm_id] = strategy
        self._embeddings[arm_id] = vec
        return strategy

    # -- export ----------------------------------------------------------

    def export_records(self, bandit: LinUcbBandit) -> list[dict]:
        """Rows for the trace file: one per strategy, in arm order."""
        rows = []
        for arm_id, strategy in self._strategies.items():
            stats = bandit.stats(arm_id) if arm_id in bandit.arms else None
            rows.append(
                {
                    "arm_id": arm_id,
                    "origin": strategy.origin,
                    "created_at_round": strategy.created_at_round,
                    "retired": bool(stats.retired) if stats else False,
                    "guidance_text": strategy.guidance_text,
                    "diagnosis_hint": strategy.diagnosis_hint,
                }
            )
        return rows


def build_bandit_and_catalog(
    bandit_config, catalog_config: CatalogConfig, rng_seed: int = 0
) -> tuple[LinUcbBandit, StrategyCatalog]:
    """Construct a bandit sized for the catalog mode and seed the catalog."""
    catalog = StrategyCatalog(catalog_config)
    bandit = LinUcbBandit(bandit_config, initial_arms=catalog_config.seed_count, rng_seed=rng_seed)
    catalog.seed(bandit)
    return bandit, catalog
