"""Command-line entry point wiring configuration, backends, and modules.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. All randomness
flows from --seed through named substreams, so runs with scripted or replay
backends are reproducible end to end.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import benchgen, optimizers, report as report_mod, smbo
from .artifacts import (ArtifactError, load_prompt_artifact, read_json,
                        save_prompt_artifact, save_report, summary_from_dict,
                        summary_to_dict, write_json)
from .dataset import DIFFICULTIES, Corpus, DatasetError, load_corpus, split
from .llmclient import (HttpBackend, KDependentPolicy, GoldLookupPolicy,
                        LLMClient, LLMClientError, ReplayBackend,
                        fixed_response_policy, scripted_oracle)
from .optimizers import ObjectiveSpec, OptimizationConfig, OptimizerError
from .prompts import render_static
from .sqlharness import HarnessError, ScoreOptions, score_prompt

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

DEFAULT_WORKERS = min(os.cpu_count() or 1, 8)


class ConfigError(Exception):
    """Bad flags, config file, or backend selection."""


@dataclass
class RunConfig:
    manifest: Path
    db_root: Path
    backend: str = "oracle:gold-lookup"
    cache_dir: Path | None = None
    record: bool = False
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "default"
    requests_per_minute: float | None = None
    seed: int = 0
    workers: int = DEFAULT_WORKERS
    oracle_fixed_text: str = "SELECT 1"
    oracle_k_opt: int = 5


def _merge_config(args: argparse.Namespace) -> dict:
    """Config file values first, CLI flags win."""
    merged: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            merged.update(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
    for key, value in vars(args).items():
        if value is not None and key not in ("func", "config"):
            merged[key] = value
    return merged


def _require(merged: dict, key: str):
    if key not in merged or merged[key] is None:
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return merged[key]


def _run_config(merged: dict) -> RunConfig:
    cfg = RunConfig(
        manifest=Path(_require(merged, "manifest")),
        db_root=Path(_require(merged, "db_root")),
    )
    for key in ("backend", "endpoint", "model", "oracle_fixed_text"):
        if key in merged:
            setattr(cfg, key, str(merged[key]))
    if merged.get("cache_dir"):
        cfg.cache_dir = Path(merged["cache_dir"])
    for key in ("seed", "workers", "oracle_k_opt"):
        if key in merged:
            setattr(cfg, key, int(merged[key]))
    if merged.get("requests_per_minute") is not None:
        cfg.requests_per_minute = float(merged["requests_per_minute"])
    cfg.record = bool(merged.get("record", False))
    return cfg


def _build_client(cfg: RunConfig, corpus: Corpus) -> LLMClient:
    """Exactly one backend: live HTTP, strict replay, or a scripted oracle."""
    name = cfg.backend
    if name == "live":
        backend = HttpBackend(cfg.endpoint)
    elif name == "replay":
        if cfg.cache_dir is None:
            raise ConfigError("backend=replay requires --cache-dir")
        backend = ReplayBackend(cfg.cache_dir)
    elif name.startswith("oracle:"):
        policy_name = name.split(":", 1)[1]
        if policy_name == "gold-lookup":
            policy = GoldLookupPolicy(corpus.items)
        elif policy_name == "fixed":
            policy = fixed_response_policy(cfg.oracle_fixed_text)
        elif policy_name == "k-dependent":
            policy = KDependentPolicy(corpus.items, k_opt=cfg.oracle_k_opt)
        else:
            raise ConfigError(f"unknown oracle policy {policy_name!r}")
        backend = scripted_oracle(policy)
    else:
        raise ConfigError(f"unknown backend {name!r} "
                          "(expected live, replay, or oracle:<policy>)")
    return LLMClient(backend, model_id=cfg.model, cache_dir=cfg.cache_dir,
                     record=cfg.record,
                     requests_per_minute=cfg.requests_per_minute)


def cmd_ingest(args: argparse.Namespace) -> int:
    merged = _merge_config(args)
    cfg = _run_config(merged)
    corpus = load_corpus(cfg.manifest, cfg.db_root)
    counts = {d: 0 for d in DIFFICULTIES}
    for item in corpus:
        counts[item.difficulty] += 1
    print(f"{len(corpus)} items")
    for difficulty in DIFFICULTIES:
        print(f"  {difficulty}: {counts[difficulty]}")
    db_ids = sorted({item.db_id for item in corpus})
    print(f"databases: {len(db_ids)} ok")
    return EXIT_OK


def _opt_config(merged: dict, seed: int, workers: int) -> OptimizationConfig:
    objective_name = merged.get("objective", "acc")
    if objective_name not in ("acc", "acc+lat"):
        raise ConfigError(f"unknown objective {objective_name!r}")
    objective = ObjectiveSpec(
        mode="accuracy_latency" if objective_name == "acc+lat" else "accuracy_only",
        latency_weight=float(merged.get("latency_weight", 0.2)),
        latency_normalizer=float(merged.get("latency_normalizer", 10.0)),
    )
    cfg = OptimizationConfig(
        method=merged.get("method", "ores"),
        objective=objective,
        seed=seed,
        max_workers=workers,
    )
    for key in ("num_trials", "num_iterations", "k_fixed", "k_max", "res_restarts",
                "valid_sample_size", "min_proposed_exemplars", "n_pairs"):
        if merged.get(key) is not None:
            setattr(cfg, key, int(merged[key]))
    if merged.get("valid_fraction") is not None:
        cfg.valid_fraction = float(merged["valid_fraction"])
    if merged.get("timeout") is not None:
        cfg.timeout = float(merged["timeout"])
    if cfg.method not in ("res", "ores", "joint", "ipo"):
        raise ConfigError(f"unknown method {cfg.method!r}")
    return cfg


def cmd_optimize(args: argparse.Namespace) -> int:
    merged = _merge_config(args)
    run_cfg = _run_config(merged)
    out_dir = Path(_require(merged, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    _attach_run_log(out_dir)

    corpus = load_corpus(run_cfg.manifest, run_cfg.db_root)
    client = _build_client(run_cfg, corpus)
    cfg = _opt_config(merged, run_cfg.seed, run_cfg.workers)

    started = time.perf_counter()
    study = smbo.Study()
    if cfg.method == "res":
        parts = split(corpus, cfg.valid_fraction, cfg.seed)
        prompt, final_report = optimizers.run_res(parts.train, parts.valid,
                                                  client, cfg)
    elif cfg.method == "ores":
        prompt, final_report = optimizers.run_ores(corpus, client, cfg, study)
    elif cfg.method == "joint":
        prompt, final_report = optimizers.run_joint(corpus, client, cfg, study)
    else:
        prompt, final_report = optimizers.run_ipo(corpus, client, client, cfg)
    wall_time = time.perf_counter() - started

    est_tokens = client.estimate_tokens(render_static(prompt))
    save_prompt_artifact(out_dir / "prompt.json", prompt, est_tokens)
    if cfg.method in ("ores", "joint"):
        (out_dir / "study.json").write_text(study.to_json() + "\n", encoding="utf-8")
    save_report(out_dir / "eval_report.json", final_report)
    summary = report_mod.method_summary(cfg.method, final_report, corpus,
                                        optimization_wall_time=wall_time)
    write_json(out_dir / "summary.json", summary_to_dict(summary))
    logger.info("method=%s accuracy=%.4f tokens=%d wall=%.1fs",
                cfg.method, final_report.accuracy, est_tokens, wall_time)
    print(f"optimized prompt written to {out_dir / 'prompt.json'} "
          f"(accuracy {100 * final_report.accuracy:.2f})")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    merged = _merge_config(args)
    run_cfg = _run_config(merged)
    prompt = load_prompt_artifact(_require(merged, "prompt"))
    corpus = load_corpus(run_cfg.manifest, run_cfg.db_root)
    client = _build_client(run_cfg, corpus)
    with_latency = bool(merged.get("latency", False))
    options = ScoreOptions(with_latency=with_latency, max_workers=run_cfg.workers)
    result = score_prompt(client, prompt, corpus, options)
    summary = report_mod.method_summary(merged.get("name", "eval"), result, corpus)
    text, _ = report_mod.accuracy_table([summary])
    print(text)
    if with_latency and result.latency is not None:
        latency_text, _ = report_mod.latency_table(result.latency,
                                                   [(summary.method, result)])
        print()
        print(latency_text)
    if merged.get("out"):
        out_dir = Path(merged["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        save_report(out_dir / "eval_report.json", result)
        write_json(out_dir / "summary.json", summary_to_dict(summary))
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    merged = _merge_config(args)
    run_cfg = _run_config(merged)
    out_path = Path(_require(merged, "out"))
    corpus = load_corpus(run_cfg.manifest, run_cfg.db_root)
    client = _build_client(run_cfg, corpus)
    timing = benchgen.TimingConfig(
        warmups=int(merged.get("warmups", 1)),
        repeats=int(merged.get("repeats", 3)),
        timeout=float(merged.get("timeout", 30.0)),
    )
    n_records, n_rejections = benchgen.augment_to_files(
        corpus, client, out_path,
        log_path=merged.get("log"),
        progress_path=merged.get("progress"),
        n_variants=int(merged.get("variants", benchgen.DEFAULT_NUM_VARIANTS)),
        timing=timing,
    )
    print(f"{n_records} records written to {out_path} "
          f"({n_rejections} log entries)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(d) for d in args.runs]
    summaries = []
    for run_dir in run_dirs:
        summary_path = run_dir / "summary.json"
        if not summary_path.is_file():
            raise ConfigError(f"no summary.json in {run_dir}")
        summaries.append(summary_from_dict(read_json(summary_path)))
    if not summaries:
        raise ConfigError("no run directories given")
    text, _ = report_mod.accuracy_table(summaries)
    print(text)
    print()
    cost_text, _ = report_mod.cost_table(summaries)
    print(cost_text)
    profiled = [s for s in summaries if s.latency_profile is not None]
    if profiled:
        print()
        print("(latency profiles present for: "
              + ", ".join(s.method for s in profiled) + ")")
    return EXIT_OK


def _attach_run_log(out_dir: Path) -> None:
    handler = logging.FileHandler(out_dir / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s "
                                           "%(message)s"))
    logging.getLogger().addHandler(handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nl2sql-po",
        description="Optimize NL2SQL prompts and build latency-aware benchmarks.")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--manifest", help="corpus manifest JSON")
        p.add_argument("--db-root", dest="db_root", help="database root directory")
        p.add_argument("--backend", help="live | replay | oracle:<policy>")
        p.add_argument("--cache-dir", dest="cache_dir", help="replay cache directory")
        p.add_argument("--record", action="store_const", const=True, default=None,
                       help="record completions into the cache")
        p.add_argument("--endpoint", help="chat-completion endpoint URL")
        p.add_argument("--model", help="model id sent to the endpoint")
        p.add_argument("--seed", type=int, help="root seed for all substreams")
        p.add_argument("--workers", type=int, help="evaluation worker-pool width")
        p.add_argument("--requests-per-minute", dest="requests_per_minute",
                       type=float, help="live-backend rate limit")

    p_ingest = sub.add_parser("ingest", help="validate a corpus and its databases")
    add_common(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_opt = sub.add_parser("optimize", help="run a prompt-optimization method")
    add_common(p_opt)
    p_opt.add_argument("--method", choices=["res", "ores", "joint", "ipo"])
    p_opt.add_argument("--trials", dest="num_trials", type=int)
    p_opt.add_argument("--iterations", dest="num_iterations", type=int)
    p_opt.add_argument("--objective", choices=["acc", "acc+lat"])
    p_opt.add_argument("--k-fixed", dest="k_fixed", type=int)
    p_opt.add_argument("--k-max", dest="k_max", type=int)
    p_opt.add_argument("--restarts", dest="res_restarts", type=int)
    p_opt.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p_opt.add_argument("--out", help="artifacts directory")
    p_opt.set_defaults(func=cmd_optimize)

    p_eval = sub.add_parser("eval", help="score a saved prompt on a dataset")
    add_common(p_eval)
    p_eval.add_argument("--prompt", help="prompt artifact JSON")
    p_eval.add_argument("--latency", action="store_const", const=True, default=None)
    p_eval.add_argument("--name", help="row label for tables")
    p_eval.add_argument("--out", help="directory for the eval report")
    p_eval.set_defaults(func=cmd_eval)

    p_aug = sub.add_parser("augment", help="build the multi-variant benchmark")
    add_common(p_aug)
    p_aug.add_argument("--variants", type=int)
    p_aug.add_argument("--out", help="output JSONL path")
    p_aug.add_argument("--log", help="rejection log JSONL path")
    p_aug.add_argument("--progress", help="resumable progress manifest path")
    p_aug.set_defaults(func=cmd_augment)

    p_rep = sub.add_parser("report", help="render tables from run artifacts")
    p_rep.add_argument("--runs", nargs="+", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OptimizerError, HarnessError, LLMClientError,
            benchgen.BenchgenError, report_mod.ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
