"""Operator entry points: extract, search, validate, report.

Exit codes are stable for scripting: 0 success, 1 usage or configuration
problem (including refusing to overwrite without --force), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

from .evaluation import EvaluationError, SandboxEvaluator, SurrogateEvaluator
from .evolution import (
    ConfigError,
    RunDir,
    SearchConfig,
    SearchError,
    SearchRun,
    load_config,
    resume_run,
)
from .gateway import GatewayError, HttpGateway, ScriptedGateway, TranscriptWriter, load_script
from .knowledge import (
    KnowledgeDB,
    ingest_corpus,
    load_attribute_tree,
    load_default_tree,
)
from .mutation import judge_structure
from .pareto import ScoredPoint, non_dominated_sort

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_cfg(args) -> SearchConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SearchConfig()
    if getattr(args, "gateway", None):
        cfg.gateway_mode = args.gateway
    if getattr(args, "evaluator", None):
        cfg.evaluator_mode = args.evaluator
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "base", None):
        cfg.base_path = str(Path(args.base).resolve())
    return cfg


def _check_gateway(cfg: SearchConfig) -> None:
    if cfg.gateway_mode == "scripted" and not cfg.script_path:
        raise ConfigError("gateway.script: required when gateway mode is 'scripted'")
    if cfg.gateway_mode == "http" and not (cfg.endpoint and cfg.model):
        raise ConfigError(
            "gateway.endpoint/gateway.model: required when gateway mode is 'http'"
        )


def _build_gateway(cfg: SearchConfig, transcript_path: Path):
    _check_gateway(cfg)
    transcript = TranscriptWriter(transcript_path)
    if cfg.gateway_mode == "scripted":
        return ScriptedGateway(load_script(cfg.script_path), transcript)
    return HttpGateway(
        cfg.endpoint,
        cfg.model,
        api_key_env=cfg.api_key_env,
        timeout_s=cfg.timeout_s,
        temperature=cfg.temperature,
        transcript=transcript,
    )


def _build_evaluator(cfg: SearchConfig):
    if cfg.evaluator_mode == "surrogate":
        return SurrogateEvaluator()
    if not cfg.sandbox_cmd:
        raise ConfigError("evaluator.cmd: required when evaluator mode is 'sandbox'")
    return SandboxEvaluator(cfg.sandbox_cmd, cfg.sandbox_config, procs=cfg.workers)


def _load_tree(cfg: SearchConfig, tree_arg: str | None):
    if tree_arg:
        return load_attribute_tree(tree_arg)
    if cfg.tree_path:
        return load_attribute_tree(cfg.tree_path)
    return load_default_tree()


# --- extract ---


def cmd_extract(args) -> int:
    cfg = _load_cfg(args)
    tree = _load_tree(cfg, args.tree)
    out = Path(args.out)
    ideas_path = out / "ideas.jsonl"
    if ideas_path.exists() and not args.force:
        print(f"{ideas_path} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_USAGE
    out.mkdir(parents=True, exist_ok=True)
    gateway = _build_gateway(cfg, out / "transcript.jsonl")
    db, stats = ingest_corpus(args.corpus, tree, gateway)
    db.save(ideas_path)
    (out / "stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(f"papers: {stats.papers} scanned, {stats.kept} kept, "
          f"{stats.filtered_no} filtered, {stats.parse_discarded} unparsable")
    print(f"ideas: {stats.ideas_added} added, {stats.duplicate_ideas} duplicates, "
          f"{stats.truncated_ideas} truncated")
    for key in sorted(stats.histogram):
        print(f"  {key}: {stats.histogram[key]}")
    if stats.ideas_added == 0:
        logger.warning("no ideas extracted; the database is empty")
        return EXIT_RUNTIME
    return EXIT_OK


# --- search ---


def _fresh_run(cfg: SearchConfig, out: Path) -> SearchRun:
    _check_gateway(cfg)
    if not cfg.ideas_path:
        raise ConfigError("knowledge.ideas: an idea database is required")
    if not cfg.base_path:
        raise ConfigError("base.source: a base model source file is required")
    tree = _load_tree(cfg, None)
    db = KnowledgeDB.load(cfg.ideas_path, tree)
    base_source = Path(cfg.base_path).read_text(encoding="utf-8")
    return SearchRun(cfg, out, tree=tree, db=db, base_source=base_source)


def cmd_search(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    run = RunDir(out)
    if run.exists():
        if args.resume:
            state = run.read_state()
            if state.get("finished"):
                print(f"{out}: run already finished; nothing to resume")
                return EXIT_OK
            search = resume_run(out)
            start = int(state["completed_generations"])
        elif args.force:
            shutil.rmtree(out)
            search = _fresh_run(cfg, out)
            start = 0
        else:
            print(f"{out} already holds a run; pass --resume or --force",
                  file=sys.stderr)
            return EXIT_USAGE
    else:
        if args.resume:
            print(f"{out}: nothing to resume", file=sys.stderr)
            return EXIT_USAGE
        search = _fresh_run(cfg, out)
        start = 0
    best, summary = search.run(start_generation=start)
    print(f"best: {best.candidate.id}")
    print(f"val_accuracy: {best.val_accuracy:.4f}")
    if best.test_accuracy is not None:
        print(f"test_accuracy: {best.test_accuracy:.4f}")
    for label, value, cap in zip(
        search.cfg.budget_labels, best.budgets, search.cfg.thresholds
    ):
        print(f"{label}: {value:g} (cap {cap:g})")
    print(f"history: {summary.recorded} entries, {summary.failures} failed attempts")
    return EXIT_OK


# --- validate ---


def cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    source = Path(args.source).read_text(encoding="utf-8")
    evaluator = _build_evaluator(cfg)
    rows: list[tuple[str, str, str]] = []
    try:
        ok, error = evaluator.check_compile(source)
        rows.append(("execution", "pass" if ok else "fail", error or ""))
        if ok:
            try:
                budgets = evaluator.measure_budgets(source)
            except EvaluationError as exc:
                rows.append(("budget", "fail", str(exc)))
            else:
                over = [
                    f"{label}={value:g} > {cap:g}"
                    for label, value, cap in zip(
                        cfg.budget_labels, budgets, cfg.thresholds
                    )
                    if value > cap
                ]
                detail = "; ".join(
                    f"{label}={value:g}"
                    for label, value in zip(cfg.budget_labels, budgets)
                )
                rows.append(
                    ("budget", "fail" if over else "pass",
                     "; ".join(over) if over else detail)
                )
        if args.parent:
            parent_source = Path(args.parent).read_text(encoding="utf-8")
            gateway = _build_gateway(cfg, Path(args.out or ".") / "transcript.jsonl")
            verdict = judge_structure(parent_source, source, gateway, "validate.0")
            rows.append(("structural", "pass" if verdict else "fail", ""))
        else:
            rows.append(("structural", "skipped", "no --parent given"))
    finally:
        close = getattr(evaluator, "close", None)
        if close:
            close()
    width = max(len(r[0]) for r in rows)
    for phase, verdict, detail in rows:
        line = f"{phase:<{width}}  {verdict}"
        if detail:
            line += f"  {detail}"
        print(line)
    return EXIT_OK


# --- report ---

_PHASE_REASONS = {
    "execution": ("compile", "invalid"),
    "budget": ("budget", "budget-guard"),
    "structural": ("struct",),
}


def _read_failures(run: RunDir, up_to: int) -> list[dict]:
    out = []
    if not run.failures_jsonl.is_file():
        return out
    with open(run.failures_jsonl, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SearchError(
                    f"{run.failures_jsonl}:{lineno}: corrupt failure record ({exc})"
                )
            if rec.get("generation", 0) <= up_to:
                out.append(rec)
    return out


def cmd_report(args) -> int:
    run = RunDir(args.run_dir)
    if not run.exists():
        print(f"{args.run_dir} is not a run directory", file=sys.stderr)
        return EXIT_USAGE
    report_dir = run.path / "report"
    if report_dir.exists() and any(report_dir.iterdir()) and not args.force:
        print(f"{report_dir} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_USAGE
    state = run.read_state()
    completed = int(state["completed_generations"])
    entries = run.load_history_lines(completed)
    if not entries:
        print("history is empty; nothing to report", file=sys.stderr)
        return EXIT_RUNTIME
    cfg = json.loads(run.config_json.read_text(encoding="utf-8"))
    labels = cfg.get("budget_labels", ["params", "flops"])
    failures = _read_failures(run, completed)
    report_dir.mkdir(exist_ok=True)

    with open(report_dir / "accuracy.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["index", "id", "stage", "generation", "slot", "step",
             "val_accuracy", "test_accuracy", *labels]
        )
        for rec in entries:
            writer.writerow(
                [rec["index"], rec["id"], rec["stage"], rec["generation"],
                 rec["slot"], rec["step"], rec["val_accuracy"],
                 "" if rec["test_accuracy"] is None else rec["test_accuracy"],
                 *rec["budgets"]]
            )

    points = [
        ScoredPoint(rec["id"], rec["val_accuracy"], tuple(rec["budgets"]))
        for rec in entries
    ]
    front = non_dominated_sort(points)[0]
    by_id = {rec["id"]: rec for rec in entries}
    with open(report_dir / "pareto.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "stage", "val_accuracy", *labels])
        for point in front:
            rec = by_id[point.id]
            writer.writerow([point.id, rec["stage"], point.accuracy, *point.budgets])

    attempts = len(entries) + len(failures)
    remaining = attempts
    with open(report_dir / "pass_rates.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["phase", "attempts", "failures", "pass_rate"])
        for phase in ("execution", "budget", "structural"):
            phase_failures = sum(
                1 for rec in failures if rec["reason"] in _PHASE_REASONS[phase]
            )
            rate = 1.0 if remaining == 0 else (remaining - phase_failures) / remaining
            writer.writerow([phase, remaining, phase_failures, f"{rate:.4f}"])
            remaining -= phase_failures
        overall = len(entries) / attempts if attempts else 1.0
        writer.writerow(["overall", attempts, len(failures), f"{overall:.4f}"])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4.5))
    stages = []
    for rec in entries:
        if rec["stage"] not in stages:
            stages.append(rec["stage"])
    for stage in stages:
        xs = [rec["index"] for rec in entries if rec["stage"] == stage]
        ys = [rec["val_accuracy"] for rec in entries if rec["stage"] == stage]
        ax.scatter(xs, ys, s=14, label=stage)
    best = []
    cur = float("-inf")
    for rec in entries:
        cur = max(cur, rec["val_accuracy"])
        best.append(cur)
    ax.plot([rec["index"] for rec in entries], best, lw=1, color="black",
            label="running best")
    ax.set_xlabel("history index")
    ax.set_ylabel("validation accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(report_dir / "progress.png", dpi=120)
    plt.close(fig)

    print(f"report written to {report_dir}")
    print(f"  accuracy.csv: {len(entries)} rows")
    print(f"  pareto.csv: {len(front)} rows")
    print(f"  pass_rates.csv: overall {len(entries)}/{attempts}")
    return EXIT_OK


# --- wiring ---


def build_parser() -> _Parser:
    parser = _Parser(prog="archevo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[], help="build an idea database from a paper corpus")
    p.add_argument("--corpus", required=True, help="directory of paper text files")
    p.add_argument("--config", help="TOML config (gateway section is used)")
    p.add_argument("--tree", help="attribute tree JSON (default: packaged tree)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.add_argument("--gateway", choices=["http", "scripted"])
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("search", help="run the architecture search")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--base", help="base model source (overrides config)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--force", action="store_true")
    p.add_argument("--gateway", choices=["http", "scripted"])
    p.add_argument("--evaluator", choices=["surrogate", "sandbox"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate", help="run the verification checks on one source file")
    p.add_argument("source", help="candidate source file")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--parent", help="parent source for the structural check")
    p.add_argument("--out", help="where to write the gateway transcript")
    p.add_argument("--gateway", choices=["http", "scripted"])
    p.add_argument("--evaluator", choices=["surrogate", "sandbox"])
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="emit CSV and plot artifacts for a run")
    p.add_argument("run_dir", help="run directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SearchError, EvaluationError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
