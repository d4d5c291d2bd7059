"""Run configuration: one YAML file with sections mirroring the modules.

Sections: ``orchestrator``, ``weights``, ``bandit``, ``catalog``,
``backends``. Every tunable has a shipped default, so sensitivity sweeps
are pure config edits; an empty file is a valid config.
"""
from __future__ import annotations

import copy
import os
from typing import Any

import yaml

from .backends import BackendSuite, MockBackend, OpenAiCompatBackend, ScriptRule
from .bandit import BanditConfig
from .catalog import CatalogConfig
from .orchestrator import OrchestratorConfig
from .reward import RewardWeights, TrainingRewardWeights

BASE_URL_ENV = "METAREASON_BASE_URL"

DEFAULT_CONFIG: dict[str, Any] = {
    "orchestrator": {
        "max_rounds": 30,  # long-horizon profiles use 100
        "report_window": 3,
        "context_dim": 64,
        "projection_seed": 0,
        "evaluator_retries": 2,
        "verify_answers": False,
        "score_only_evaluator": False,
        "answer_marker": "\\boxed",
        "temperature": 0.7,
        "top_p": 1.0,
        "cot_max_tokens": 512,
        "report_max_tokens": 512,
        "meta_max_tokens": 256,
        "evaluator_max_tokens": 256,
    },
    "weights": {
        "correctness_weight": 0.5,
        "adherence_weight": 0.5,
        "step_cost": 0.1,
        "progress_weight": 0.8,
        "profile": "composite",
        "training_mix": {
            "objective_completion": 0.40,
            "progress_quality": 0.30,
            "efficiency": 0.15,
            "strategy_alignment": 0.15,
        },
    },
    "bandit": {
        "exploration": 0.2,
        "ridge": 1.0,
        "explore_schedule": "inverse_round",
        "explore_epsilon": 0.1,
        "retire_threshold": 0.3,
        "retire_min_pulls": 5,
        "recompute_interval": 256,
    },
    "catalog": {
        "mode": "dynamic",
        "dedup_similarity_threshold": 0.90,
        "max_arms": 32,
    },
    "backends": {
        "base_url": "https://api.openai.com/v1",
        "api_key_env": "OPENAI_API_KEY",
        "retries": 3,
        "generator_model": "gpt-4o-mini",
        "reporter_model": "gpt-4o-mini",
        "meta_model": "gpt-4o-mini",
        "evaluator_model": "gpt-4o-mini",
        "embed_model": "text-embedding-3-small",
        "expected_embed_dim": 1536,
        "mock": {
            "script": [],
            "default_response": "Considering the task; no conclusion yet.",
            "embed_dim": 1536,
        },
    },
}


class ConfigFileError(ValueError):
    """Config file missing, unreadable, or structurally wrong."""


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path) -> dict:
    """Parse a YAML config file and merge it over the defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigFileError(f"cannot parse config {path}: {exc}") from exc
    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise ConfigFileError("config root must be a mapping")
    unknown = set(loaded) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigFileError(f"unknown config sections: {sorted(unknown)}")
    return deep_merge(DEFAULT_CONFIG, loaded)


def build_orchestrator_config(merged: dict) -> OrchestratorConfig:
    """Assemble the nested dataclasses from a merged config mapping."""
    orch = merged["orchestrator"]
    weights_d = merged["weights"]
    bandit_d = merged["bandit"]
    catalog_d = merged["catalog"]
    try:
        weights = RewardWeights(
            correctness_weight=float(weights_d["correctness_weight"]),
            adherence_weight=float(weights_d["adherence_weight"]),
            step_cost=float(weights_d["step_cost"]),
            progress_weight=float(weights_d["progress_weight"]),
        )
        training = TrainingRewardWeights(**{
            k: float(v) for k, v in weights_d["training_mix"].items()
        })
        bandit = BanditConfig(
            dim=int(orch["context_dim"]),
            exploration=float(bandit_d["exploration"]),
            ridge=float(bandit_d["ridge"]),
            explore_schedule=str(bandit_d["explore_schedule"]),
            explore_epsilon=float(bandit_d["explore_epsilon"]),
            retire_threshold=float(bandit_d["retire_threshold"]),
            retire_min_pulls=int(bandit_d["retire_min_pulls"]),
            recompute_interval=int(bandit_d["recompute_interval"]),
        )
        catalog = CatalogConfig(
            mode=str(catalog_d["mode"]),
            dedup_similarity_threshold=float(catalog_d["dedup_similarity_threshold"]),
            max_arms=int(catalog_d["max_arms"]),
        )
        config = OrchestratorConfig(
            max_rounds=int(orch["max_rounds"]),
            report_window=int(orch["report_window"]),
            context_dim=int(orch["context_dim"]),
            projection_seed=int(orch["projection_seed"]),
            evaluator_retries=int(orch["evaluator_retries"]),
            verify_answers=bool(orch["verify_answers"]),
            score_only_evaluator=bool(orch["score_only_evaluator"]),
            reward_profile=str(weights_d["profile"]),
            answer_marker=str(orch["answer_marker"]),
            temperature=float(orch["temperature"]),
            top_p=float(orch["top_p"]),
            cot_max_tokens=int(orch["cot_max_tokens"]),
            report_max_tokens=int(orch["report_max_tokens"]),
            meta_max_tokens=int(orch["meta_max_tokens"]),
            evaluator_max_tokens=int(orch["evaluator_max_tokens"]),
            weights=weights,
            training_weights=training,
            bandit=bandit,
            catalog=catalog,
        )
        config.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigFileError(f"invalid config: {exc}") from exc
    return config


def build_mock_backend(backends_d: dict) -> MockBackend:
    mock_d = backends_d["mock"]
    try:
        script = [
            ScriptRule(
                contains=str(rule["contains"]),
                response=str(rule.get("response", "")),
                fail_times=int(rule.get("fail_times", 0)),
                error=str(rule.get("error", "rate_limit")),
            )
            for rule in mock_d.get("script", [])
        ]
        return MockBackend(
            script=script,
            default_response=str(mock_d.get("default_response", "")),
            embed_dim=int(mock_d.get("embed_dim", 1536)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigFileError(f"invalid mock backend config: {exc}") from exc


def build_backend_suite(merged: dict, mode: str) -> BackendSuite:
    """Backends for the run: one shared mock, or per-role HTTP clients."""
    backends_d = merged["backends"]
    if mode == "mock":
        return BackendSuite.all_mock(build_mock_backend(backends_d))
    if mode != "live":
        raise ConfigFileError(f"unknown mode {mode!r}")
    base_url = os.environ.get(BASE_URL_ENV) or str(backends_d["base_url"])
    common = dict(
        base_url=base_url,
        embed_model=str(backends_d["embed_model"]),
        api_key_env=str(backends_d["api_key_env"]),
        expected_embed_dim=int(backends_d["expected_embed_dim"]),
        retries=int(backends_d["retries"]),
    )

    def client(model_key: str) -> OpenAiCompatBackend:
        return OpenAiCompatBackend(chat_model=str(backends_d[model_key]), **common)

    return BackendSuite(
        generator=client("generator_model"),
        reporter=client("reporter_model"),
        meta=client("meta_model"),
        evaluator=client("evaluator_model"),
        embedder=client("generator_model"),
    )


def credentials_present(merged: dict) -> bool:
    return bool(os.environ.get(str(merged["backends"]["api_key_env"]), ""))
