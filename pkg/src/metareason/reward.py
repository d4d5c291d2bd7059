"""Composite reward scoring for reasoning progress.

The score blends an evaluator's correctness/adherence judgments into a
progress term, subtracts a step-count cost, and mixes the two:

    progress         = correctness_weight * C_c + adherence_weight * C_a
    resource_penalty = -step_cost * n_steps
    total            = progress_weight * progress
                       + (1 - progress_weight) * resource_penalty

The evaluator is an LLM that must answer in a strict JSON shape (keys
``C_c``, ``C_a``, ``S_p``, ``R_u``, ``R``, ``brief_rationale``). It is
trusted only for the two judgment scores; the derived totals are always
recomputed locally and the embedded ones merely checked for consistency.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

CONSISTENCY_TOL = 1e-6


class EvaluatorFormatError(ValueError):
    """Evaluator response does not match the strict output schema."""


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the composite reward; the two blend weights must sum to 1."""

    correctness_weight: float = 0.5
    adherence_weight: float = 0.5
    step_cost: float = 0.1
    progress_weight: float = 0.8

    def __post_init__(self) -> None:
        for name in ("correctness_weight", "adherence_weight", "progress_weight"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if abs(self.correctness_weight + self.adherence_weight - 1.0) > 1e-9:
            raise ValueError(
                "correctness_weight + adherence_weight must equal 1, got "
                f"{self.correctness_weight} + {self.adherence_weight}"
            )
        if self.step_cost < 0.0:
            raise ValueError(f"step_cost must be >= 0, got {self.step_cost}")


@dataclass(frozen=True)
class TrainingRewardWeights:
    """Alternate four-component scoring mix; components must sum to 1."""

    objective_completion: float = 0.40
    progress_quality: float = 0.30
    efficiency: float = 0.15
    strategy_alignment: float = 0.15

    def __post_init__(self) -> None:
        total = (
            self.objective_completion
            + self.progress_quality
            + self.efficiency
            + self.strategy_alignment
        )
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"training reward weights must sum to 1, got {total}")


@dataclass(frozen=True)
class EvaluatorScores:
    correctness: float
    adherence: float
    rationale: str = ""

    def __post_init__(self) -> None:
        for name, v in (("correctness", self.correctness), ("adherence", self.adherence)):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class RewardBreakdown:
    progress: float
    resource_penalty: float
    total: float
    n_steps: int


@dataclass(frozen=True)
class ParsedEvaluation:
    scores: EvaluatorScores
    breakdown: RewardBreakdown
    recomputed: bool


def compute_reward(
    scores: EvaluatorScores, n_steps: int, weights: RewardWeights | None = None
) -> RewardBreakdown:
    """Deterministic composite reward from judgment scores and step count."""
    w = weights or RewardWeights()
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    progress = w.correctness_weight * scores.correctness + w.adherence_weight * scores.adherence
    penalty = -w.step_cost * n_steps
    total = w.progress_weight * progress + (1.0 - w.progress_weight) * penalty
    return RewardBreakdown(progress=progress, resource_penalty=penalty, total=total, n_steps=n_steps)


def compute_training_reward(
    components, weights: TrainingRewardWeights | None = None
) -> float:
    """Weighted mix of the four training-style progress components."""
    w = weights or TrainingRewardWeights()
    vals = tuple(float(c) for c in components)
    if len(vals) != 4:
        raise ValueError(f"expected 4 components, got {len(vals)}")
    for c in vals:
        if not (math.isfinite(c) and 0.0 <= c <= 1.0):
            raise ValueError(f"component out of [0, 1]: {c}")
    return (
        w.objective_completion * vals[0]
        + w.progress_quality * vals[1]
        + w.efficiency * vals[2]
        + w.strategy_alignment * vals[3]
    )


def training_components(
    scores: EvaluatorScores, n_steps: int, weights: RewardWeights
) -> tuple[float, float, float, float]:
    """Map the strict evaluator output onto the four training components.

    Efficiency is the step penalty folded back into [0, 1]; alignment
    reuses the adherence judgment since the wire schema carries no
    separate alignment score.
    """
    progress = (
        weights.correctness_weight * scores.correctness
        + weights.adherence_weight * scores.adherence
    )
    efficiency = max(0.0, 1.0 - weights.step_cost * n_steps)
    return (scores.correctness, progress, efficiency, scores.adherence)


_FENCE_RE = re.compile(r"\A```[a-zA-Z0-9_-]*\r?\n(.*?)\r?\n?```\Z", re.DOTALL)


def _strip_fences(text: str) -> str:
    stripped = text.strip()
    m = _FENCE_RE.match(stripped)
    return m.group(1).strip() if m else stripped


def _require_number(obj: dict, key: str) -> float:
    if key not in obj:
        raise EvaluatorFormatError(f"missing field {key!r}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvaluatorFormatError(f"field {key!r} is not numeric: {v!r}")
    if not math.isfinite(float(v)):
        raise EvaluatorFormatError(f"field {key!r} is not finite: {v!r}")
    return float(v)


def parse_evaluator_output(
    raw_text: str, n_steps: int, weights: RewardWeights | None = None
) -> ParsedEvaluation:
    """Parse the strict evaluator JSON and recompute its derived totals.

    Tolerates surrounding whitespace and a single code fence, nothing
    else. The embedded ``S_p``/``R_u``/``R`` fields are compared against
    local recomputation from ``C_c``/``C_a``; on any disagreement beyond
    ``CONSISTENCY_TOL`` the local values win and ``recomputed`` is set.
    """
    w = weights or RewardWeights()
    payload = _strip_fences(raw_text)
    if not payload:
        raise EvaluatorFormatError("empty evaluator response")
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise EvaluatorFormatError(f"no parseable JSON object: {exc}") from exc
    if not isinstance(obj, dict):
        raise EvaluatorFormatError(f"expected a JSON object, got {type(obj).__name__}")

    c_c = _require_number(obj, "C_c")
    c_a = _require_number(obj, "C_a")
    if "brief_rationale" not in obj:
        raise EvaluatorFormatError("missing field 'brief_rationale'")
    rationale = obj["brief_rationale"]
    if not isinstance(rationale, str):
        raise EvaluatorFormatError("field 'brief_rationale' must be a string")
    if not (0.0 <= c_c <= 1.0 and 0.0 <= c_a <= 1.0):
        raise EvaluatorFormatError(f"scores out of [0, 1]: C_c={c_c}, C_a={c_a}")

    scores = EvaluatorScores(correctness=c_c, adherence=c_a, rationale=rationale)
    local = compute_reward(scores, n_steps, w)
    recomputed = False
    for key, expected in (("S_p", local.progress), ("R_u", local.resource_penalty), ("R", local.total)):
        embedded = _require_number(obj, key)
        if abs(embedded - expected) > CONSISTENCY_TOL:
            recomputed = True
    return ParsedEvaluation(scores=scores, breakdown=local, recomputed=recomputed)


def parse_score_only_output(
    raw_text: str, n_steps: int, weights: RewardWeights | None = None
) -> ParsedEvaluation:
    """Parse the terse evaluator mode: a bare correctness score in [0, 1].

    The single judgment stands in for both correctness and adherence.
    """
    payload = _strip_fences(raw_text)
    try:
        value = float(payload)
    except ValueError as exc:
        raise EvaluatorFormatError(f"expected a bare score, got {raw_text!r}") from exc
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise EvaluatorFormatError(f"score out of [0, 1]: {value}")
    scores = EvaluatorScores(correctness=value, adherence=value)
    return ParsedEvaluation(
        scores=scores,
        breakdown=compute_reward(scores, n_steps, weights or RewardWeights()),
        recomputed=False,
    )


def render_evaluation(parsed: ParsedEvaluation) -> str:
    """Serialize back to the strict wire shape (authoritative totals)."""
    return json.dumps(
        {
            "C_c": parsed.scores.correctness,
            "C_a": parsed.scores.adherence,
            "S_p": parsed.breakdown.progress,
            "R_u": parsed.breakdown.resource_penalty,
            "R": parsed.breakdown.total,
            "brief_rationale": parsed.scores.rationale,
        },
        sort_keys=True,
    )
