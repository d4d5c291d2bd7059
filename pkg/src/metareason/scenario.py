"""Scripted end-to-end worlds for exercising the full round loop offline.

A scenario defines named contexts (each with a fixed progress-report
text), a schedule assigning a context to every (task, round), a score
table mapping (context, strategy keyword) to evaluator judgments, and a
termination rule. The scripted backends close over shared world state:
the reporter emits the scheduled context text, the generator notes which
guidance it was given, and the evaluator pays out the scripted scores for
that (context, guidance) pair in the strict JSON wire shape.

Everything is deterministic given the run seed, so scenario runs replay
byte-identically.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .backends import (
    BackendSuite,
    EmbeddingResponse,
    GenerationRequest,
    GenerationResponse,
    approx_token_count,
    hash_embedding,
)
from .catalog import build_bandit_and_catalog
from .config import DEFAULT_CONFIG, build_orchestrator_config, deep_merge
from .features import FeatureProjector
from .orchestrator import OrchestratorConfig, ReasoningTrace, run_task
from .reward import EvaluatorScores, ParsedEvaluation, compute_reward, render_evaluation
from .simenv import ScenarioError

SCHEDULE_KINDS = ("fixed", "cycle_rounds", "cycle_tasks", "random")
TERMINATION_KINDS = ("never", "at_round")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    contexts: dict[str, str]
    schedule_kind: str
    schedule_order: tuple[str, ...]
    scores: dict[str, dict[str, tuple[float, float]]]
    termination_kind: str = "never"
    termination_round: int = 0
    termination_answer: str = "done"
    tasks: int = 1
    task_text: str = ""
    proposals: tuple[str, ...] = ()
    config_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.contexts:
            raise ScenarioError("scenario needs at least one context")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ScenarioError(f"unknown schedule kind {self.schedule_kind!r}")
        if not self.schedule_order:
            raise ScenarioError("schedule order is empty")
        for name in self.schedule_order:
            if name not in self.contexts:
                raise ScenarioError(f"schedule references unknown context {name!r}")
        for ctx, table in self.scores.items():
            if ctx not in self.contexts:
                raise ScenarioError(f"scores reference unknown context {ctx!r}")
            for key, pair in table.items():
                if len(pair) != 2 or not all(0.0 <= v <= 1.0 for v in pair):
                    raise ScenarioError(f"scores[{ctx!r}][{key!r}] must be two values in [0, 1]")
        if self.termination_kind not in TERMINATION_KINDS:
            raise ScenarioError(f"unknown termination kind {self.termination_kind!r}")
        if self.termination_kind == "at_round" and self.termination_round < 1:
            raise ScenarioError("termination round must be >= 1")
        if self.tasks < 1:
            raise ScenarioError("tasks must be >= 1")


def load_scenario(source) -> ScenarioSpec:
    """Build a spec from a mapping or a YAML file with a ``scenario`` root."""
    if isinstance(source, (str, Path)):
        try:
            doc = yaml.safe_load(Path(source).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ScenarioError(f"cannot load scenario {source}: {exc}") from exc
    else:
        doc = source
    if not isinstance(doc, dict) or "scenario" not in doc:
        raise ScenarioError("scenario document must have a 'scenario' root key")
    raw = doc["scenario"]
    if not isinstance(raw, dict):
        raise ScenarioError("'scenario' must be a mapping")
    try:
        schedule = raw.get("schedule", {})
        termination = raw.get("termination", {})
        scores = {
            str(ctx): {str(k): (float(p[0]), float(p[1])) for k, p in table.items()}
            for ctx, table in raw.get("scores", {}).items()
        }
        spec = ScenarioSpec(
            name=str(raw.get("name", "scenario")),
            contexts={str(k): str(v) for k, v in raw.get("contexts", {}).items()},
            schedule_kind=str(schedule.get("kind", "fixed")),
            schedule_order=tuple(str(v) for v in schedule.get("order", list(raw.get("contexts", {})))),
            scores=scores,
            termination_kind=str(termination.get("kind", "never")),
            termination_round=int(termination.get("round", 0)),
            termination_answer=str(termination.get("answer", "done")),
            tasks=int(raw.get("tasks", 1)),
            task_text=str(raw.get("task_text", "")),
            proposals=tuple(str(p) for p in raw.get("proposals", [])),
            config_overrides=dict(raw.get("config", {})),
        )
    except (TypeError, ValueError, AttributeError, IndexError) as exc:
        raise ScenarioError(f"ill-formed scenario: {exc}") from exc
    spec.validate()
    return spec


_FEEDBACK_RE = re.compile(r"<meta_reasoner_feedback>\n(.*?)\n</meta_reasoner_feedback>", re.DOTALL)


def _mk_response(prompt: str, text: str) -> GenerationResponse:
    return GenerationResponse(
        text=text,
        prompt_tokens=approx_token_count(prompt),
        completion_tokens=approx_token_count(text),
        latency_ms=0.0,
        model_id="scenario",
    )


class ScenarioWorld:
    """Shared mutable state behind one scenario's scripted backends."""

    def __init__(self, spec: ScenarioSpec, config: OrchestratorConfig, seed: int,
                 embed_dim: int = 1536):
        spec.validate()
        self.spec = spec
        self.config = config
        self.seed = seed
        self.embed_dim = embed_dim
        self.task_idx = 0
        self.step_count = 0
        self.last_strategy_key = ""
        self._proposal_cursor = 0
        # longest keys first so e.g. "restart" cannot shadow a longer key
        self._score_keys = sorted(
            {k for table in spec.scores.values() for k in table if k != "default"},
            key=lambda k: (-len(k), k),
        )

    # -- world clock -----------------------------------------------------

    def start_task(self, task_idx: int) -> None:
        self.task_idx = task_idx
        self.step_count = 0
        self.last_strategy_key = ""

    def context_at(self, task_idx: int, round_no: int) -> str:
        order = self.spec.schedule_order
        kind = self.spec.schedule_kind
        if kind == "fixed":
            return order[0]
        if kind == "cycle_rounds":
            return order[(round_no - 1) % len(order)]
        if kind == "cycle_tasks":
            return order[task_idx % len(order)]
        rng = np.random.default_rng([self.seed, 0x5CED, task_idx, round_no])
        return order[int(rng.integers(len(order)))]

    def _match_key(self, feedback: str) -> str:
        lowered = feedback.lower()
        for key in self._score_keys:
            if key.lower() in lowered:
                return key
        return "default"

    def _score_pair(self, ctx: str, key: str) -> tuple[float, float]:
        table = self.spec.scores.get(ctx, {})
        if key in table:
            return table[key]
        if "default" in table:
            return table["default"]
        return (0.5, 0.5)

    # -- backends --------------------------------------------------------

    def suite(self) -> BackendSuite:
        return BackendSuite(
            generator=_WorldBackend(self, "generator"),
            reporter=_WorldBackend(self, "reporter"),
            meta=_WorldBackend(self, "meta"),
            evaluator=_WorldBackend(self, "evaluator"),
            embedder=_WorldBackend(self, "embedder"),
        )

    def respond(self, role: str, request: GenerationRequest) -> str:
        if role == "reporter":
            ctx = self.context_at(self.task_idx, self.step_count + 1)
            return self.spec.contexts[ctx]
        if role == "generator":
            m = _FEEDBACK_RE.search(request.user_prompt)
            self.last_strategy_key = self._match_key(m.group(1) if m else "")
            self.step_count += 1
            text = f"Round {self.step_count}: attempt guided by [{self.last_strategy_key}]."
            if (
                self.spec.termination_kind == "at_round"
                and self.step_count == self.spec.termination_round
            ):
                text += f" Final answer: \\boxed{{{self.spec.termination_answer}}}"
            return text
        if role == "evaluator":
            ctx = self.context_at(self.task_idx, self.step_count)
            correctness, adherence = self._score_pair(ctx, self.last_strategy_key)
            scores = EvaluatorScores(
                correctness=correctness,
                adherence=adherence,
                rationale=f"scripted {ctx}/{self.last_strategy_key}",
            )
            breakdown = compute_reward(scores, self.step_count, self.config.weights)
            return render_evaluation(ParsedEvaluation(scores, breakdown, False))
        if role == "meta":
            if self._proposal_cursor < len(self.spec.proposals):
                action = self.spec.proposals[self._proposal_cursor]
                self._proposal_cursor += 1
            else:
                # duplicate of a seed guidance; dedup turns it into a no-op
                action = "Continue and provide specific suggestions for the next steps."
            return f"- Reflection: scripted\n- Fact Check: scripted\n- Thought: scripted\n- Action: {action}"
        raise ScenarioError(f"role {role!r} has no scripted completion")


class _WorldBackend:
    def __init__(self, world: ScenarioWorld, role: str):
        self.world = world
        self.role = role

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        text = self.world.respond(self.role, request)
        prompt = request.system_prompt + "\n" + request.user_prompt
        return _mk_response(prompt, text)

    def embed(self, text: str) -> EmbeddingResponse:
        return EmbeddingResponse(
            vector=hash_embedding(text, self.world.embed_dim), model_id="scenario"
        )


@dataclass
class ScenarioResult:
    traces: list[ReasoningTrace]
    metrics: list[dict]
    bandit: object
    catalog: object
    world: ScenarioWorld
    config: OrchestratorConfig


def scenario_run(
    spec: ScenarioSpec,
    seed: int = 0,
    base_overrides: dict | None = None,
    trace_sink_factory=None,
) -> ScenarioResult:
    """Run every scenario task against one shared bandit and catalog.

    ``trace_sink_factory(task_id)`` may supply a per-task event sink
    (e.g. a trace file writer); file emission stays caller-owned.
    """
    merged = deep_merge(DEFAULT_CONFIG, base_overrides or {})
    merged = deep_merge(merged, spec.config_overrides)
    config = build_orchestrator_config(merged)
    bandit, catalog = build_bandit_and_catalog(config.bandit, config.catalog, rng_seed=seed)
    world = ScenarioWorld(spec, config, seed)
    projector = FeatureProjector(config.context_dim, config.projection_seed)
    task = spec.task_text or f"Scripted scenario task: {spec.name}"

    traces: list[ReasoningTrace] = []
    metrics: list[dict] = []
    for task_idx in range(spec.tasks):
        task_id = f"{spec.name}-{task_idx:03d}"
        world.start_task(task_idx)
        sink = trace_sink_factory(task_id) if trace_sink_factory else None
        trace = run_task(
            task,
            config,
            world.suite(),
            bandit,
            catalog,
            task_id=task_id,
            projector=projector,
            trace_sink=sink,
            metrics=metrics,
        )
        if hasattr(sink, "close"):
            sink.close()
        traces.append(trace)
    return ScenarioResult(
        traces=traces, metrics=metrics, bandit=bandit, catalog=catalog, world=world,
        config=config,
    )
