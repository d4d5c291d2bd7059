"""The round loop: generate a step, report progress, pick a strategy, score it.

Round 1 runs under the default opening guidance with no selection. Every
later round summarizes the trajectory so far into a progress report,
embeds and projects it into a context vector, optionally lets the meta
model propose a new strategy, selects an arm by UCB score, generates the
next reasoning step under that guidance, scores the step with the
evaluator, and feeds the reward back into the bandit for the
(context, arm) pair chosen this round. The loop stops on a boxed answer
or at the round cap.

Every externally visible event is appended to a trace sink as one JSON
record; under mock backends and fixed seeds the whole event stream is
byte-reproducible.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .backends import (
    BackendError,
    BackendSuite,
    EmptyCompletionError,
    GenerationRequest,
)
from .bandit import BanditConfig, LinUcbBandit
from .catalog import CatalogConfig, ProposalFormatError, Strategy, StrategyCatalog
from .features import FeatureProjector
from .prompts import (
    cot_step_prompt,
    evaluation_prompt,
    progress_report_prompt,
)
from .reward import (
    EvaluatorFormatError,
    ParsedEvaluation,
    RewardWeights,
    TrainingRewardWeights,
    compute_training_reward,
    parse_evaluator_output,
    parse_score_only_output,
    training_components,
)

TRACE_SCHEMA_VERSION = 1
REPORT_TOKEN_CAP = 512

METRICS_COLUMNS = (
    "round",
    "task_id",
    "arm_id",
    "reward",
    "cumulative_reward",
    "prompt_tokens",
    "completion_tokens",
    "wall_ms",
)


@dataclass(frozen=True)
class OrchestratorConfig:
    """Knobs of one run; nested configs cover the bandit and the catalog."""

    max_rounds: int = 30
    report_window: int = 3
    context_dim: int = 64
    projection_seed: int = 0
    evaluator_retries: int = 2
    verify_answers: bool = False
    score_only_evaluator: bool = False
    reward_profile: str = "composite"  # composite | training_mix
    answer_marker: str = "\\boxed"
    temperature: float = 0.7
    top_p: float = 1.0
    cot_max_tokens: int = 512
    report_max_tokens: int = 512
    meta_max_tokens: int = 256
    evaluator_max_tokens: int = 256
    weights: RewardWeights = field(default_factory=RewardWeights)
    training_weights: TrainingRewardWeights = field(default_factory=TrainingRewardWeights)
    bandit: BanditConfig = field(default_factory=lambda: BanditConfig(dim=64))
    catalog: CatalogConfig = field(default_factory=CatalogConfig)

    def validate(self) -> None:
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.report_window < 1:
            raise ValueError(f"report_window must be >= 1, got {self.report_window}")
        if self.context_dim != self.bandit.dim:
            raise ValueError(
                f"context_dim {self.context_dim} != bandit dim {self.bandit.dim}"
            )
        if self.reward_profile not in ("composite", "training_mix"):
            raise ValueError(f"unknown reward_profile {self.reward_profile!r}")
        self.bandit.validate()
        self.catalog.validate()


@dataclass(frozen=True)
class ProgressReport:
    summary_text: str
    first_round: int
    last_round: int
    created_at_round: int
    truncated: bool = False


@dataclass
class StepRecord:
    round: int
    guidance_arm: int
    guidance_text: str
    cot_text: str
    progress_report: ProgressReport | None = None
    context_vector: tuple[float, ...] | None = None
    selected_arm: int | None = None
    forced_exploration: bool = False
    reward_total: float | None = None
    reward_detail: ParsedEvaluation | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_ms: float = 0.0


@dataclass
class Totals:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_ms: float = 0.0


@dataclass
class ReasoningTrace:
    task: str
    task_id: str
    steps: list[StepRecord] = field(default_factory=list)
    status: str = "running"  # running | solved | exhausted | failed
    final_answer: str | None = None
    failure: str | None = None
    totals: Totals = field(default_factory=Totals)
    updates: int = 0
    skipped_updates: int = 0

    @property
    def cot_texts(self) -> list[str]:
        return [s.cot_text for s in self.steps]


def extract_answer(text: str, marker: str = "\\boxed") -> tuple[str | None, int]:
    """Last ``marker{...}`` payload in ``text`` (balanced braces), plus count."""
    answers: list[str] = []
    i = 0
    while True:
        j = text.find(marker, i)
        if j < 0:
            break
        k = j + len(marker)
        while k < len(text) and text[k].isspace():
            k += 1
        if k >= len(text) or text[k] != "{":
            i = j + len(marker)
            continue
        depth = 0
        closed = False
        for idx in range(k, len(text)):
            if text[idx] == "{":
                depth += 1
            elif text[idx] == "}":
                depth -= 1
                if depth == 0:
                    answers.append(text[k + 1 : idx])
                    i = idx + 1
                    closed = True
                    break
        if not closed:
            break
    return (answers[-1] if answers else None), len(answers)


def canonical_json(record: dict) -> str:
    """One stable line per trace record (sorted keys, compact separators)."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _steps_payload(steps: list[StepRecord], window: int) -> tuple[str, int, int]:
    recent = steps[-window:]
    body = "\n\n".join(f"[Step {s.round}] {s.cot_text}" for s in recent)
    return body, recent[0].round, recent[-1].round


def summarize_progress(
    task: str,
    steps: list[StepRecord],
    window: int,
    backend,
    *,
    max_tokens: int = 512,
    temperature: float = 0.7,
    top_p: float = 1.0,
    created_at_round: int | None = None,
) -> tuple[ProgressReport, object]:
    """Summarize the most recent ``window`` steps into a progress report.

    Returns the report and the raw backend response (for accounting).
    """
    if not steps:
        raise ValueError("cannot summarize an empty trace")
    body, first, last = _steps_payload(steps, window)
    solution = f"Task:\n{task}\n\nAttempts so far (most recent last):\n{body}"
    response = backend.generate(
        GenerationRequest(
            system_prompt="",
            user_prompt=progress_report_prompt(solution),
            max_tokens=max_tokens,
            temperature=temperature,
            top_p=top_p,
        )
    )
    words = response.text.split()
    truncated = len(words) > REPORT_TOKEN_CAP
    summary = " ".join(words[:REPORT_TOKEN_CAP]) if truncated else response.text
    report = ProgressReport(
        summary_text=summary,
        first_round=first,
        last_round=last,
        created_at_round=created_at_round if created_at_round is not None else last + 1,
        truncated=truncated,
    )
    return report, response


def extract_features(report: ProgressReport, embedder, projector: FeatureProjector) -> np.ndarray:
    """Context vector for a report: embed, project, normalize."""
    return projector.extract(report.summary_text, embedder)


class _TaskRun:
    """Internal state of one run_task invocation."""

    def __init__(self, task, config, backends, bandit, catalog, task_id, projector,
                 answer_checker, trace_sink, metrics):
        self.task = task
        self.config = config
        self.backends = backends
        self.bandit = bandit
        self.catalog = catalog
        self.projector = projector
        self.answer_checker = answer_checker
        self.trace_sink = trace_sink
        self.metrics = metrics
        self.trace = ReasoningTrace(task=task, task_id=task_id)
        self.cumulative_reward = 0.0

    def emit(self, record: dict) -> None:
        if self.trace_sink is not None:
            self.trace_sink(record)

    def call(self, role: str, backend, request: GenerationRequest, round_no: int):
        response = backend.generate(request)
        self.trace.totals.prompt_tokens += response.prompt_tokens
        self.trace.totals.completion_tokens += response.completion_tokens
        self.trace.totals.wall_ms += response.latency_ms
        self.emit(
            {
                "record": "backend_call",
                "round": round_no,
                "role": role,
                "model_id": response.model_id,
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
                "latency_ms": response.latency_ms,
                "retries": response.retries,
            }
        )
        return response

    def evaluate(self, round_no: int) -> ParsedEvaluation | None:
        """Evaluator call with content-level retries; None when it gave up."""
        cfg = self.config
        body, _, _ = _steps_payload(self.trace.steps, cfg.report_window)
        prompt = evaluation_prompt(
            objective=self.task,
            progress=body,
            n_steps=len(self.trace.steps),
            w1=cfg.weights.correctness_weight,
            w2=cfg.weights.adherence_weight,
            alpha=cfg.weights.step_cost,
            beta=cfg.weights.progress_weight,
        )
        request = GenerationRequest(
            system_prompt="",
            user_prompt=prompt,
            max_tokens=4 if cfg.score_only_evaluator else cfg.evaluator_max_tokens,
            temperature=cfg.temperature,
            top_p=cfg.top_p,
        )
        parser = parse_score_only_output if cfg.score_only_evaluator else parse_evaluator_output
        last_error = "no attempts"
        for _ in range(1 + cfg.evaluator_retries):
            try:
                response = self.call("evaluate", self.backends.evaluator, request, round_no)
                return parser(response.text, len(self.trace.steps), cfg.weights)
            except EvaluatorFormatError as exc:
                last_error = str(exc)
            except BackendError as exc:
                last_error = f"backend: {exc}"
                break
        self.emit({"record": "evaluator_error", "round": round_no, "error": last_error})
        return None

    def reward_value(self, parsed: ParsedEvaluation) -> float:
        if self.config.reward_profile == "training_mix":
            return compute_training_reward(
                training_components(parsed.scores, parsed.breakdown.n_steps, self.config.weights),
                self.config.training_weights,
            )
        return parsed.breakdown.total

    def metrics_row(self, round_no: int, arm_id: int | None, reward: float | None,
                    step: StepRecord) -> None:
        if self.metrics is None:
            return
        self.cumulative_reward += reward if reward is not None else 0.0
        self.metrics.append(
            {
                "round": round_no,
                "task_id": self.trace.task_id,
                "arm_id": "" if arm_id is None else arm_id,
                "reward": "" if reward is None else repr(float(reward)),
                "cumulative_reward": repr(float(self.cumulative_reward)),
                "prompt_tokens": step.prompt_tokens,
                "completion_tokens": step.completion_tokens,
                "wall_ms": repr(float(step.wall_ms)),
            }
        )


def run_task(
    task: str,
    config: OrchestratorConfig,
    backends: BackendSuite,
    bandit: LinUcbBandit,
    catalog: StrategyCatalog,
    *,
    task_id: str = "task-0",
    projector: FeatureProjector | None = None,
    answer_checker=None,
    trace_sink=None,
    metrics: list | None = None,
) -> ReasoningTrace:
    """Run one task to termination; mutates ``bandit`` (and the catalog in
    dynamic mode) in place and returns the trace.

    The projector should be shared across tasks that share a bandit so all
    context vectors live in one space.
    """
    config.validate()
    projector = projector or FeatureProjector(config.context_dim, config.projection_seed)
    run = _TaskRun(task, config, backends, bandit, catalog, task_id, projector,
                   answer_checker if config.verify_answers else None, trace_sink, metrics)
    trace = run.trace
    run.emit(
        {
            "record": "header",
            "schema_version": TRACE_SCHEMA_VERSION,
            "task_id": task_id,
            "task": task,
            "config": asdict(config),
            "bandit_rng_seed": bandit.rng_seed,
        }
    )

    try:
        _run_rounds(run)
    except BackendError as exc:
        trace.status = "failed"
        trace.failure = f"{type(exc).__name__}: {exc}"
        run.emit({"record": "failure", "error": trace.failure})
    if trace.status == "running":
        trace.status = "exhausted"
    run.emit(
        {
            "record": "termination",
            "round": len(trace.steps),
            "status": trace.status,
            "final_answer": trace.final_answer,
            "updates": trace.updates,
            "skipped_updates": trace.skipped_updates,
            "totals": asdict(trace.totals),
            "catalog": run.catalog.export_records(bandit),
        }
    )
    return trace


def _run_rounds(run: _TaskRun) -> None:
    cfg = run.config
    trace = run.trace
    for round_no in range(1, cfg.max_rounds + 1):
        run.emit({"record": "round_start", "round": round_no})
        tokens_before = (trace.totals.prompt_tokens, trace.totals.completion_tokens,
                         trace.totals.wall_ms)

        report = None
        context = None
        selection = None
        if round_no > 1:
            report, report_resp = _make_report(run, round_no)
            embedding = run.backends.embedder.embed(report.summary_text)
            run.emit(
                {
                    "record": "backend_call",
                    "round": round_no,
                    "role": "embed",
                    "model_id": embedding.model_id,
                    "prompt_tokens": 0,
                    "completion_tokens": 0,
                    "latency_ms": 0.0,
                    "retries": 0,
                }
            )
            context = run.projector.project(embedding.vector)
            _maybe_propose(run, report, round_no)
            selection = run.bandit.select_detail(context)
            run.emit(
                {
                    "record": "selection",
                    "round": round_no,
                    "arm": selection.arm,
                    "forced": selection.forced,
                    "scores": {str(k): v for k, v in selection.scores.items()},
                }
            )
            strategy = run.catalog.get(selection.arm)
        else:
            strategy = run.catalog.default_guidance()

        step = _generate_step(run, round_no, strategy, report, context, selection)
        trace.steps.append(step)

        parsed = run.evaluate(round_no)
        reward = None
        if parsed is not None:
            reward = run.reward_value(parsed)
            step.reward_total = reward
            step.reward_detail = parsed
            run.emit(
                {
                    "record": "reward",
                    "round": round_no,
                    "correctness": parsed.scores.correctness,
                    "adherence": parsed.scores.adherence,
                    "progress": parsed.breakdown.progress,
                    "resource_penalty": parsed.breakdown.resource_penalty,
                    "total": parsed.breakdown.total,
                    "value": reward,
                    "n_steps": parsed.breakdown.n_steps,
                    "recomputed": parsed.recomputed,
                }
            )

        if round_no > 1:
            if parsed is not None:
                run.bandit.update(selection.arm, context, reward)
                trace.updates += 1
                run.emit(
                    {
                        "record": "update",
                        "round": round_no,
                        "arm": selection.arm,
                        "reward": reward,
                        "bandit_round": run.bandit.round,
                    }
                )
            else:
                trace.skipped_updates += 1
                run.emit(
                    {
                        "record": "skipped_update",
                        "round": round_no,
                        "arm": selection.arm,
                        "reason": "evaluator_error",
                    }
                )

        delta = (trace.totals.prompt_tokens - tokens_before[0],
                 trace.totals.completion_tokens - tokens_before[1],
                 trace.totals.wall_ms - tokens_before[2])
        step.prompt_tokens, step.completion_tokens, step.wall_ms = delta
        run.metrics_row(round_no, selection.arm if selection else None, reward, step)

        answer, count = extract_answer(step.cot_text, cfg.answer_marker)
        if answer is not None:
            if count > 1:
                run.emit({"record": "multiple_answers", "round": round_no, "count": count})
            if run.answer_checker is not None and not run.answer_checker(answer):
                run.emit({"record": "answer_rejected", "round": round_no, "answer": answer})
                continue
            trace.status = "solved"
            trace.final_answer = answer
            return


def _make_report(run: _TaskRun, round_no: int) -> tuple[ProgressReport, object]:
    cfg = run.config
    report, response = summarize_progress(
        run.task,
        run.trace.steps,
        cfg.report_window,
        run.backends.reporter,
        max_tokens=cfg.report_max_tokens,
        temperature=cfg.temperature,
        top_p=cfg.top_p,
        created_at_round=round_no,
    )
    run.trace.totals.prompt_tokens += response.prompt_tokens
    run.trace.totals.completion_tokens += response.completion_tokens
    run.trace.totals.wall_ms += response.latency_ms
    run.emit(
        {
            "record": "backend_call",
            "round": round_no,
            "role": "report",
            "model_id": response.model_id,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
            "latency_ms": response.latency_ms,
            "retries": response.retries,
        }
    )
    if report.truncated:
        run.emit({"record": "report_truncated", "round": round_no})
    return report, response


def _maybe_propose(run: _TaskRun, report: ProgressReport, round_no: int) -> None:
    catalog = run.catalog
    if not catalog.growth_enabled or len(catalog) >= catalog.config.max_arms:
        return
    try:
        before = len(catalog)
        strategy = catalog.propose(
            report.summary_text,
            run.backends.meta,
            run.backends.embedder,
            run.bandit,
            max_tokens=run.config.meta_max_tokens,
            temperature=run.config.temperature,
            top_p=run.config.top_p,
        )
    except ProposalFormatError as exc:
        run.emit({"record": "proposal", "round": round_no, "outcome": "format_error",
                  "error": str(exc)})
        return
    if strategy is None:
        outcome = "duplicate" if len(catalog) == before else "disabled"
        run.emit({"record": "proposal", "round": round_no, "outcome": outcome})
    else:
        run.emit(
            {
                "record": "proposal",
                "round": round_no,
                "outcome": "added",
                "arm": strategy.arm_id,
                "guidance_text": strategy.guidance_text,
            }
        )


def _generate_step(run: _TaskRun, round_no: int, strategy: Strategy,
                   report: ProgressReport | None, context, selection) -> StepRecord:
    cfg = run.config
    feedback = run.catalog.guidance_prompt_text(strategy)
    current = run.trace.steps[-1].cot_text if run.trace.steps else ""
    response = run.call(
        "generate",
        run.backends.generator,
        GenerationRequest(
            system_prompt="",
            user_prompt=cot_step_prompt(run.task, current, feedback),
            max_tokens=cfg.cot_max_tokens,
            temperature=cfg.temperature,
            top_p=cfg.top_p,
        ),
        round_no,
    )
    if not response.text.strip():
        raise EmptyCompletionError(f"generator returned empty text in round {round_no}")
    return StepRecord(
        round=round_no,
        guidance_arm=strategy.arm_id,
        guidance_text=strategy.guidance_text,
        cot_text=response.text,
        progress_report=report,
        context_vector=tuple(float(v) for v in context) if context is not None else None,
        selected_arm=selection.arm if selection else None,
        forced_exploration=selection.forced if selection else False,
    )
