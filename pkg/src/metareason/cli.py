"""Command-line surface: run tasks, benchmark policies, manage snapshots.

Exit codes: 0 success, 1 some tasks failed, 2 usage or config error.
All randomness in a run flows from the single ``--seed`` value.
"""
from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import game24
from .backends import MockBackend, ScriptRule
from .bandit import BanditConfig, LinUcbBandit, SnapshotError
from .catalog import build_bandit_and_catalog
from .config import (
    ConfigFileError,
    DEFAULT_CONFIG,
    build_backend_suite,
    build_orchestrator_config,
    credentials_present,
    deep_merge,
    load_config_file,
)
from .features import FeatureProjector
from .orchestrator import run_task
from .runio import TraceWriter, write_metrics
from .scenario import ScenarioError, load_scenario, scenario_run
from .simenv import POLICIES, env_from_spec, run_policy

USAGE_ERROR = 2


def _resolve_out_dir(base) -> Path:
    """Never overwrite an existing non-empty output directory."""
    out = Path(base)
    if out.exists() and any(out.iterdir()):
        stamp = time.strftime("%Y%m%d-%H%M%S")
        candidate = out / f"run-{stamp}"
        n = 0
        while candidate.exists():
            n += 1
            candidate = out / f"run-{stamp}-{n}"
        out = candidate
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detect_task_source(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        doc = yaml.safe_load(text)
        if isinstance(doc, dict) and "scenario" in doc:
            return "scenario"
        raise ConfigFileError(f"{path} is YAML but not a scenario file")
    first = text.strip().splitlines()[0] if text.strip() else ""
    if first.strip() == "a,b,c,d,solvable":
        return "puzzle"
    return "inline"


def cmd_run(args) -> int:
    try:
        merged = load_config_file(args.config) if args.config else deep_merge(DEFAULT_CONFIG, {})
        config = build_orchestrator_config(merged)
        tasks_path = Path(args.tasks)
        if not tasks_path.exists():
            raise ConfigFileError(f"tasks file not found: {tasks_path}")
        source = _detect_task_source(tasks_path)
        if args.mode == "live" and not credentials_present(merged):
            key = merged["backends"]["api_key_env"]
            print(f"error: live mode needs credentials in ${key}", file=sys.stderr)
            return USAGE_ERROR
    except (ConfigFileError, ScenarioError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    out = _resolve_out_dir(args.out)

    if source == "scenario":
        if args.mode == "live":
            print("error: scenario files run in mock mode only", file=sys.stderr)
            return USAGE_ERROR
        try:
            spec = load_scenario(tasks_path)
        except ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
        result = scenario_run(
            spec,
            seed=args.seed,
            base_overrides=_overrides_from(merged),
            trace_sink_factory=lambda task_id: TraceWriter(out / f"{task_id}.trace.jsonl"),
        )
        write_metrics(out / "metrics.csv", result.metrics)
        (out / "bandit.json").write_bytes(result.bandit.snapshot())
        failed = sum(1 for t in result.traces if t.status == "failed")
        print(f"{len(result.traces)} task(s), {failed} failed; outputs in {out}")
        return 1 if failed else 0

    # inline text or puzzle tasks
    if source == "puzzle":
        instances = game24.load_puzzle_file(tasks_path)
        tasks = [(game24.task_text(i.numbers), i.numbers) for i in instances]
    else:
        lines = [ln.strip() for ln in tasks_path.read_text(encoding="utf-8").splitlines()]
        tasks = [(ln, None) for ln in lines if ln]
    if not tasks:
        print("error: no tasks found", file=sys.stderr)
        return USAGE_ERROR

    try:
        backends = build_backend_suite(merged, args.mode)
    except ConfigFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    metrics: list[dict] = []
    failed = 0

    def one_task(index: int, task_text: str, numbers, bandit, catalog, projector):
        task_id = f"task-{index:03d}"
        checker = None
        if numbers is not None and config.verify_answers:
            checker = lambda answer: game24.check_24(numbers, answer)[0]  # noqa: E731
        rows: list[dict] = []
        with TraceWriter(out / f"{task_id}.trace.jsonl") as sink:
            trace = run_task(
                task_text,
                config,
                backends,
                bandit,
                catalog,
                task_id=task_id,
                projector=projector,
                answer_checker=checker,
                trace_sink=sink,
                metrics=rows,
            )
        return trace, rows

    if args.parallel > 1:
        # Independent tasks only: each worker owns a private bandit.
        def worker(indexed):
            index, (task_text, numbers) = indexed
            bandit, catalog = build_bandit_and_catalog(
                config.bandit, config.catalog, rng_seed=args.seed + index
            )
            projector = FeatureProjector(config.context_dim, config.projection_seed)
            trace, rows = one_task(index, task_text, numbers, bandit, catalog, projector)
            (out / f"bandit-task-{index:03d}.json").write_bytes(bandit.snapshot())
            return trace, rows

        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(worker, enumerate(tasks)))
        for trace, rows in results:
            metrics.extend(rows)
            failed += trace.status == "failed"
    else:
        bandit, catalog = build_bandit_and_catalog(
            config.bandit, config.catalog, rng_seed=args.seed
        )
        projector = FeatureProjector(config.context_dim, config.projection_seed)
        for index, (task_text, numbers) in enumerate(tasks):
            trace, rows = one_task(index, task_text, numbers, bandit, catalog, projector)
            metrics.extend(rows)
            failed += trace.status == "failed"
        (out / "bandit.json").write_bytes(bandit.snapshot())

    write_metrics(out / "metrics.csv", metrics)
    print(f"{len(tasks)} task(s), {failed} failed; outputs in {out}")
    return 1 if failed else 0


def _overrides_from(merged: dict) -> dict:
    """Sections of a merged config that differ from the defaults."""
    out = {}
    for section, values in merged.items():
        if values != DEFAULT_CONFIG.get(section):
            out[section] = values
    return out


BENCH_COLUMNS = ("round", "policy", "seed", "reward", "cumulative_reward", "regret")


def cmd_bench(args) -> int:
    try:
        doc = yaml.safe_load(Path(args.env).read_text(encoding="utf-8"))
        if not isinstance(doc, dict) or "env" not in doc:
            raise ScenarioError("env file must have an 'env' root key")
        if args.policy not in POLICIES:
            raise ScenarioError(f"unknown policy {args.policy!r}")
        env = env_from_spec(doc["env"], seed=args.seed)
        bandit_d = doc.get("bandit", {}) or {}
        bandit_config = BanditConfig(
            dim=env.dim,
            exploration=float(bandit_d.get("exploration", 0.5)),
            ridge=float(bandit_d.get("ridge", 1.0)),
            explore_schedule=str(bandit_d.get("explore_schedule", "inverse_round")),
            retire_threshold=float(bandit_d.get("retire_threshold", -1.0)),
        )
    except (OSError, yaml.YAMLError, ScenarioError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    direct_backend = None
    if args.policy == "direct":
        direct_cfg = doc.get("direct", {}) or {}
        direct_backend = MockBackend(
            script=[
                ScriptRule(contains=str(r["contains"]), response=str(r["response"]))
                for r in direct_cfg.get("script", [])
            ],
            default_response=str(direct_cfg.get("default_response", "0")),
        )

    out = _resolve_out_dir(args.out)
    seeds = [args.seed + i for i in range(args.seeds)]
    all_cumulative = []
    for seed in seeds:
        run = run_policy(env, args.policy, args.rounds, seed,
                         bandit_config=bandit_config, direct_backend=direct_backend)
        rows = []
        cumulative = run.cumulative
        regret = run.regret
        for i in range(args.rounds):
            rows.append(
                {
                    "round": i + 1,
                    "policy": args.policy,
                    "seed": seed,
                    "reward": repr(float(run.rewards[i])),
                    "cumulative_reward": repr(float(cumulative[i])),
                    "regret": repr(float(regret[i])),
                }
            )
        _write_table(out / f"bench_{args.policy}_seed{seed}.csv", BENCH_COLUMNS, rows)
        all_cumulative.append(cumulative)

    agg_rows = []
    if args.rounds > 0 and all_cumulative:
        mean_curve = np.mean(np.stack(all_cumulative), axis=0)
        for i in range(args.rounds):
            agg_rows.append(
                {
                    "round": i + 1,
                    "policy": args.policy,
                    "seed": "aggregate",
                    "reward": "",
                    "cumulative_reward": repr(float(mean_curve[i])),
                    "regret": "",
                }
            )
    _write_table(out / f"bench_{args.policy}_aggregate.csv", BENCH_COLUMNS, agg_rows)
    final = agg_rows[-1]["cumulative_reward"] if agg_rows else "0.0"
    print(f"policy={args.policy} rounds={args.rounds} seeds={len(seeds)} "
          f"final_mean_cumulative={final}; outputs in {out}")
    return 0


def _write_table(path: Path, columns, rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(row.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_snapshot(args) -> int:
    path = Path(args.path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        bandit = LinUcbBandit.restore(data)
    except SnapshotError as exc:
        print(f"error: invalid snapshot: {exc}", file=sys.stderr)
        return USAGE_ERROR

    if args.action == "inspect":
        print(f"round={bandit.round} rng_seed={bandit.rng_seed} dim={bandit.config.dim}")
        print(f"{'id':>4} {'origin':>8} {'pulls':>6} {'mean_reward':>12} {'retired':>8}")
        for arm_id in bandit.arm_ids:
            arm = bandit.stats(arm_id)
            origin = "seed" if arm.created_at_round == 0 else "dynamic"
            print(f"{arm_id:>4} {origin:>8} {arm.pull_count:>6} "
                  f"{arm.mean_reward:>12.6f} {str(arm.retired):>8}")
        return 0

    # restore-check: round-trip integrity plus inverse fidelity
    second = bandit.snapshot()
    try:
        again = LinUcbBandit.restore(second)
    except SnapshotError as exc:
        print(f"error: re-serialization failed: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if again.snapshot() != second:
        print("error: snapshot round-trip is not stable", file=sys.stderr)
        return USAGE_ERROR
    drift = bandit.inverse_drift()
    if drift > 1e-6:
        print(f"error: inverse drift {drift} exceeds 1e-6", file=sys.stderr)
        return USAGE_ERROR
    print(f"ok: {len(bandit.arm_ids)} arms, round {bandit.round}, inverse drift {drift:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metareason")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run tasks through the strategy-selection loop")
    run_p.add_argument("--config", default=None, help="YAML config file")
    run_p.add_argument("--tasks", required=True, help="task file (text, puzzle CSV, or scenario YAML)")
    run_p.add_argument("--mode", choices=("live", "mock"), default="mock")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--parallel", type=int, default=1,
                       help="run tasks concurrently with private bandits")
    run_p.set_defaults(fn=cmd_run)

    bench_p = sub.add_parser("bench", help="benchmark a policy on a synthetic environment")
    bench_p.add_argument("--env", required=True, help="environment spec YAML")
    bench_p.add_argument("--policy", required=True, help="linucb | random | direct")
    bench_p.add_argument("--rounds", type=int, required=True)
    bench_p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    bench_p.add_argument("--seed", type=int, default=0, help="base seed")
    bench_p.add_argument("--out", required=True)
    bench_p.set_defaults(fn=cmd_bench)

    snap_p = sub.add_parser("snapshot", help="inspect or verify a bandit snapshot")
    snap_p.add_argument("action", choices=("inspect", "restore-check"))
    snap_p.add_argument("path")
    snap_p.set_defaults(fn=cmd_snapshot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
