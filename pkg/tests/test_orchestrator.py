"""Round-loop contract: ordering, accounting, termination, determinism."""
from __future__ import annotations

import json

import pytest

from metareason.backends import BackendSuite, FnBackend, MockBackend, ScriptRule
from metareason.bandit import BanditConfig
from metareason.catalog import CatalogConfig, build_bandit_and_catalog
from metareason.features import FeatureProjector
from metareason.orchestrator import (
    OrchestratorConfig,
    canonical_json,
    extract_answer,
    run_task,
    summarize_progress,
)
from metareason.reward import RewardWeights


def evaluator_json(c_c=0.6, c_a=0.6):
    return json.dumps(
        {"C_c": c_c, "C_a": c_a, "S_p": 0.6, "R_u": 0.0, "R": 0.48,
         "brief_rationale": "scripted"}
    )


def standard_script(step_text="thinking about the next move", extra=None):
    rules = list(extra or [])
    rules += [
        ScriptRule(contains="impartial evaluator", response=evaluator_json()),
        ScriptRule(contains="advanced AI summarizer", response="progress summary text"),
        ScriptRule(contains="Meta-reasoner, tasked", response="- Action: nothing new"),
    ]
    return MockBackend(script=rules, default_response=step_text, embed_dim=128)


def small_config(max_rounds=5, **kw):
    dim = kw.pop("context_dim", 16)
    defaults = dict(
        max_rounds=max_rounds,
        context_dim=dim,
        bandit=BanditConfig(dim=dim, explore_schedule="none", retire_threshold=-1.0),
        catalog=CatalogConfig(mode="fixed_k3"),
    )
    defaults.update(kw)
    return OrchestratorConfig(**defaults)


def build_run(config, backend, task="solve the puzzle", **kw):
    bandit, catalog = build_bandit_and_catalog(config.bandit, config.catalog, rng_seed=3)
    suite = BackendSuite.all_mock(backend)
    events = []
    trace = run_task(task, config, suite, bandit, catalog,
                     trace_sink=events.append, **kw)
    return trace, events, bandit


class TestExtractAnswer:
    def test_simple(self):
        assert extract_answer("the end \\boxed{24}") == ("24", 1)

    def test_absent(self):
        assert extract_answer("no conclusion yet") == (None, 0)

    def test_last_wins(self):
        assert extract_answer("\\boxed{12} then \\boxed{24}") == ("24", 2)

    def test_nested_braces(self):
        assert extract_answer("\\boxed{\\frac{1}{2}}") == ("\\frac{1}{2}", 1)

    def test_unclosed_ignored(self):
        assert extract_answer("\\boxed{24") == (None, 0)

    def test_marker_without_brace(self):
        assert extract_answer("\\boxed 24 and \\boxed{7}") == ("7", 1)


class TestLoopAccounting:
    def test_round_one_answer_no_updates(self):
        config = small_config()
        trace, events, bandit = build_run(config, standard_script("done \\boxed{24}"))
        assert trace.status == "solved"
        assert trace.final_answer == "24"
        assert len(trace.steps) == 1
        assert trace.updates == 0
        assert bandit.round == 0
        assert trace.steps[0].selected_arm is None
        assert not any(e["record"] == "selection" for e in events)
        # round 1 runs under the default opening guidance (the continue row)
        assert trace.steps[0].guidance_arm == 2

    def test_exhaustion_updates_all_but_first(self):
        config = small_config(max_rounds=5)
        trace, events, bandit = build_run(config, standard_script())
        assert trace.status == "exhausted"
        assert len(trace.steps) == 5
        assert trace.updates == 4
        assert trace.skipped_updates == 0
        assert bandit.round == 4
        assert sum(1 for e in events if e["record"] == "update") == 4

    def test_termination_is_immediate(self):
        calls = {"generate": 0}

        def respond(request):
            if "impartial evaluator" in request.user_prompt:
                return evaluator_json()
            if "advanced AI summarizer" in request.user_prompt:
                return "summary"
            calls["generate"] += 1
            if calls["generate"] == 4:
                return "finish \\boxed{99}"
            return "still working"

        config = small_config(max_rounds=30)
        bandit, catalog = build_bandit_and_catalog(config.bandit, config.catalog, rng_seed=3)
        trace = run_task("task", config, BackendSuite.all_mock(FnBackend(respond, embed_dim=128)),
                         bandit, catalog)
        assert trace.status == "solved"
        assert len(trace.steps) == 4
        assert trace.updates == 3  # the answering round still updates before the break

    def test_evaluator_failure_skips_update(self):
        bad_rule = ScriptRule(
            contains="Number of Reasoning Steps (N_s): 3", response="not json"
        )
        config = small_config(max_rounds=5)
        trace, events, _ = build_run(config, standard_script(extra=[bad_rule]))
        assert trace.status == "exhausted"
        assert trace.skipped_updates == 1
        assert trace.updates == len(trace.steps) - 1 - trace.skipped_updates == 3
        skipped = [e for e in events if e["record"] == "skipped_update"]
        assert len(skipped) == 1 and skipped[0]["round"] == 3

    def test_all_evaluations_failing(self):
        config = small_config(max_rounds=4)
        bad = MockBackend(
            script=[
                ScriptRule(contains="impartial evaluator", response="never json"),
                ScriptRule(contains="advanced AI summarizer", response="summary"),
            ],
            default_response="keep going",
            embed_dim=128,
        )
        trace, events, bandit = build_run(config, bad)
        assert trace.updates == 0
        assert trace.skipped_updates == 3
        assert bandit.round == 0
        # evaluator was retried: 1 + retries attempts per round
        eval_calls = [e for e in events if e["record"] == "backend_call"
                      and e["role"] == "evaluate"]
        assert len(eval_calls) == 4 * (1 + config.evaluator_retries)

    def test_token_totals_match_per_call_sum(self):
        config = small_config(max_rounds=6)
        trace, events, _ = build_run(config, standard_script())
        calls = [e for e in events if e["record"] == "backend_call"]
        assert trace.totals.prompt_tokens == sum(e["prompt_tokens"] for e in calls)
        assert trace.totals.completion_tokens == sum(e["completion_tokens"] for e in calls)
        assert trace.totals.completion_tokens <= config.max_rounds * (512 + 256 + 512 + 256)

    def test_step_tokens_sum_to_totals(self):
        config = small_config(max_rounds=4)
        trace, _, _ = build_run(config, standard_script())
        assert sum(s.prompt_tokens for s in trace.steps) == trace.totals.prompt_tokens
        assert sum(s.completion_tokens for s in trace.steps) == trace.totals.completion_tokens


class TestReportingAndFeatures:
    def test_window_selects_recent_steps(self):
        captured = {}

        def respond(request):
            if "advanced AI summarizer" in request.user_prompt:
                captured["prompt"] = request.user_prompt
                return "summary"
            if "impartial evaluator" in request.user_prompt:
                return evaluator_json()
            return "step text"

        backend = FnBackend(respond, embed_dim=128)
        config = small_config(max_rounds=11, report_window=3)
        bandit, catalog = build_bandit_and_catalog(config.bandit, config.catalog, rng_seed=2)
        run_task("task", config, BackendSuite.all_mock(backend), bandit, catalog)
        # last report was computed at round 11 over steps 8..10
        assert "[Step 8]" in captured["prompt"]
        assert "[Step 10]" in captured["prompt"]
        assert "[Step 7]" not in captured["prompt"]

    def test_single_step_trace_window_clamps(self):
        backend = standard_script()
        steps = []
        config = small_config(max_rounds=2)
        trace, _, _ = build_run(config, backend)
        report = trace.steps[1].progress_report
        assert report.first_round == 1 and report.last_round == 1

    def test_report_truncated_over_cap(self):
        long_summary = " ".join(f"w{i}" for i in range(700))
        script = standard_script()
        script.script.insert(0, ScriptRule(
            contains="advanced AI summarizer", response=long_summary))
        config = small_config(max_rounds=2)
        trace, events, _ = build_run(config, script)
        report = trace.steps[1].progress_report
        assert report.truncated
        assert len(report.summary_text.split()) == 512
        assert any(e["record"] == "report_truncated" for e in events)

    def test_identical_runs_byte_identical(self):
        config = small_config(max_rounds=6)
        _, ev1, _ = build_run(config, standard_script())
        _, ev2, _ = build_run(config, standard_script())
        assert [canonical_json(e) for e in ev1] == [canonical_json(e) for e in ev2]

    def test_summarize_requires_steps(self):
        with pytest.raises(ValueError):
            summarize_progress("t", [], 3, standard_script())


class TestTermination:
    def test_checker_rejection_keeps_looping(self):
        config = small_config(max_rounds=4, verify_answers=True)
        trace, events, _ = build_run(
            config, standard_script("try \\boxed{not24}"),
            answer_checker=lambda ans: False,
        )
        assert trace.status == "exhausted"
        assert len(trace.steps) == 4
        assert sum(1 for e in events if e["record"] == "answer_rejected") == 4

    def test_checker_acceptance_stops(self):
        config = small_config(max_rounds=4, verify_answers=True)
        trace, _, _ = build_run(
            config, standard_script("try \\boxed{6*4*(13-12)}"),
            answer_checker=lambda ans: True,
        )
        assert trace.status == "solved"
        assert len(trace.steps) == 1

    def test_checker_ignored_when_flag_off(self):
        config = small_config(max_rounds=4, verify_answers=False)
        trace, _, _ = build_run(
            config, standard_script("try \\boxed{whatever}"),
            answer_checker=lambda ans: False,
        )
        assert trace.status == "solved"

    def test_multiple_answers_flagged(self):
        config = small_config(max_rounds=2)
        trace, events, _ = build_run(config, standard_script("\\boxed{1} no \\boxed{2}"))
        assert trace.final_answer == "2"
        assert any(e["record"] == "multiple_answers" for e in events)


class TestFailurePaths:
    def test_empty_generation_fails_task(self):
        config = small_config(max_rounds=3)
        trace, events, _ = build_run(config, standard_script(step_text=""))
        assert trace.status == "failed"
        assert "EmptyCompletion" in trace.failure
        assert any(e["record"] == "failure" for e in events)

    def test_transport_failure_partial_trace(self):
        script = standard_script()
        script.script.insert(
            0, ScriptRule(contains="[Step 2]", response="x", fail_times=99,
                          error="transport"),
        )
        config = small_config(max_rounds=6)
        trace, _, _ = build_run(config, script)
        assert trace.status == "failed"
        assert len(trace.steps) == 2  # two steps landed before the blow-up

    def test_termination_event_carries_catalog(self):
        config = small_config(max_rounds=2)
        _, events, _ = build_run(config, standard_script())
        term = [e for e in events if e["record"] == "termination"]
        assert len(term) == 1
        assert len(term[0]["catalog"]) == 3
        assert term[0]["catalog"][1]["guidance_text"].startswith("Backtrack")


class TestRewardProfiles:
    def test_training_mix_runs_and_bounds(self):
        config = small_config(max_rounds=4, reward_profile="training_mix")
        trace, events, _ = build_run(config, standard_script())
        rewards = [e for e in events if e["record"] == "reward"]
        assert rewards
        for e in rewards:
            assert 0.0 <= e["value"] <= 1.0

    def test_composite_uses_breakdown_total(self):
        config = small_config(max_rounds=3)
        trace, events, _ = build_run(config, standard_script())
        for e in events:
            if e["record"] == "reward":
                assert e["value"] == e["total"]

    def test_score_only_mode(self):
        script = standard_script()
        script.script.insert(0, ScriptRule(contains="impartial evaluator", response="0.7"))
        config = small_config(max_rounds=3, score_only_evaluator=True)
        trace, events, _ = build_run(config, script)
        assert trace.updates == 2
        rewards = [e for e in events if e["record"] == "reward"]
        assert all(e["correctness"] == 0.7 and e["adherence"] == 0.7 for e in rewards)


class TestDynamicGrowthInLoop:
    def test_proposals_add_arms_once(self):
        config = small_config(
            max_rounds=5,
            catalog=CatalogConfig(mode="dynamic", max_arms=10),
        )
        script = standard_script()
        script.script.insert(0, ScriptRule(
            contains="Meta-reasoner, tasked",
            response="- Action: Tabulate all intermediate values explicitly.",
        ))
        trace, events, bandit = build_run(config, script)
        added = [e for e in events if e["record"] == "proposal" and e["outcome"] == "added"]
        dupes = [e for e in events if e["record"] == "proposal" and e["outcome"] == "duplicate"]
        assert len(added) == 1  # identical later proposals are deduplicated
        assert len(dupes) == 3
        assert len(bandit.arm_ids) == 8
