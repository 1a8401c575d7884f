"""Search engine: staged generations over a validity-guarded history.

Each generation runs three stages behind hard barriers: fair idea mutation
of the top-k, Pareto-aware refinement of NSGA-II-selected parents, and
chained LLM-driven refinement. Every slot owns a private RNG and gateway
stream derived from (seed, generation, stage, slot), and results are
committed in slot order, so history files are byte-identical at any worker
count.
"""

from __future__ import annotations

import json
import logging
import os
import random
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import templates
from .evaluation import (
    EvaluationResult,
    Evaluator,
    SandboxEvaluator,
    SurrogateEvaluator,
)
from .gateway import HttpGateway, ScriptedGateway, TranscriptWriter, load_script
from .knowledge import (
    AttributeTree,
    KnowledgeDB,
    fair_sample,
    load_attribute_tree,
    make_directive,
)
from .mutation import (
    Candidate,
    MutationOutcome,
    MutationPrompt,
    MutationRecord,
    RetryLimits,
    VerifierToggles,
    format_idea_mutation_prompt,
    format_mutation_prompt,
    format_refinement_prompt,
    mutate,
)
from .pareto import ScoredPoint, select_pareto_parents

logger = logging.getLogger(__name__)

STAGE_INIT = "init"
STAGE_FAIR = "fair"
STAGE_PARETO = "pareto"
STAGE_ITER = "llm-iter"


class SearchError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid search configuration; message lists 'section.field: problem'."""


class GuardError(ValueError):
    """History guard violated: invalid or over-budget candidate offered."""


class HistoryCorruption(RuntimeError):
    pass


# --- configuration ---


@dataclass
class SearchConfig:
    k0: int = 8
    k1: int = 8
    k2: int = 8
    k3: int = 4
    d: int = 2
    generations: int = 3
    seed: int = 0
    workers: int = 1
    refinement_switch_fraction: float = 0.9
    budget_labels: tuple[str, ...] = ("params", "flops")
    thresholds: tuple[float, ...] = (1.5e6, 1.6e9)
    limits: RetryLimits = field(default_factory=RetryLimits)
    toggles: VerifierToggles = field(default_factory=VerifierToggles)
    evaluator_mode: str = "surrogate"  # surrogate | sandbox
    gateway_mode: str = "scripted"  # scripted | http
    script_path: str | None = None
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "ARCHEVO_API_KEY"
    timeout_s: float = 120.0
    temperature: float = 1.0
    tree_path: str | None = None  # None -> packaged default tree
    ideas_path: str | None = None
    base_path: str | None = None
    sandbox_cmd: list[str] = field(default_factory=list)
    sandbox_config: dict = field(default_factory=dict)


def _expect(errors: list[str], cond: bool, path: str, msg: str) -> None:
    if not cond:
        errors.append(f"{path}: {msg}")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> SearchConfig:
    """Build and validate a SearchConfig from parsed TOML sections.

    Relative paths are resolved against the config file's directory.
    """
    errors: list[str] = []
    cfg = SearchConfig()

    def resolve(p: object) -> str:
        s = str(p)
        if base_dir is not None and not os.path.isabs(s):
            return str((base_dir / s).resolve())
        return s

    search = raw.get("search", {})
    for key in ("k0", "k1", "k2", "k3", "d", "generations", "seed", "workers"):
        if key in search:
            val = search[key]
            _expect(errors, isinstance(val, int) and not isinstance(val, bool),
                    f"search.{key}", "must be an integer")
            if isinstance(val, int):
                setattr(cfg, key, val)
    _expect(errors, cfg.k0 >= 1, "search.k0", "must be >= 1")
    for key in ("k1", "k2", "k3", "d"):
        _expect(errors, getattr(cfg, key) >= 0, f"search.{key}", "must be >= 0")
    _expect(errors, cfg.generations >= 0, "search.generations", "must be >= 0")
    _expect(errors, cfg.workers >= 1, "search.workers", "must be >= 1")
    if "refinement_switch_fraction" in search:
        frac = search["refinement_switch_fraction"]
        _expect(errors, isinstance(frac, (int, float)) and 0 < frac <= 1,
                "search.refinement_switch_fraction", "must be in (0, 1]")
        cfg.refinement_switch_fraction = float(frac)

    budgets = raw.get("budgets", {})
    labels = budgets.get("labels", list(cfg.budget_labels))
    thresholds = budgets.get("thresholds", list(cfg.thresholds))
    _expect(errors, isinstance(labels, list) and all(isinstance(x, str) for x in labels),
            "budgets.labels", "must be a list of strings")
    _expect(errors,
            isinstance(thresholds, list)
            and all(isinstance(x, (int, float)) and x > 0 for x in thresholds),
            "budgets.thresholds", "must be a list of positive numbers")
    if isinstance(labels, list) and isinstance(thresholds, list):
        _expect(errors, len(labels) == len(thresholds) and len(labels) >= 1,
                "budgets", "labels and thresholds must align, at least one dimension")
        cfg.budget_labels = tuple(str(x) for x in labels)
        cfg.thresholds = tuple(float(x) for x in thresholds)

    limits = raw.get("limits", {})
    lim_kwargs = {}
    for key in ("max_debug", "max_downscale", "max_struct_retries"):
        if key in limits:
            _expect(errors, isinstance(limits[key], int) and limits[key] >= 0,
                    f"limits.{key}", "must be an integer >= 0")
            lim_kwargs[key] = limits[key]
    cfg.limits = replace(RetryLimits(), **lim_kwargs)

    verifiers = raw.get("verifiers", {})
    tog_kwargs = {}
    for key in ("execution", "budget", "structural"):
        if key in verifiers:
            _expect(errors, isinstance(verifiers[key], bool),
                    f"verifiers.{key}", "must be a boolean")
            tog_kwargs[key] = bool(verifiers[key])
    cfg.toggles = replace(VerifierToggles(), **tog_kwargs)

    gw = raw.get("gateway", {})
    mode = gw.get("mode", cfg.gateway_mode)
    _expect(errors, mode in ("scripted", "http"), "gateway.mode",
            "must be 'scripted' or 'http'")
    cfg.gateway_mode = mode
    if "script" in gw:
        cfg.script_path = resolve(gw["script"])
    if "endpoint" in gw:
        cfg.endpoint = str(gw["endpoint"])
    if "model" in gw:
        cfg.model = str(gw["model"])
    if "api_key_env" in gw:
        cfg.api_key_env = str(gw["api_key_env"])
    if "timeout_s" in gw:
        cfg.timeout_s = float(gw["timeout_s"])
    if "temperature" in gw:
        cfg.temperature = float(gw["temperature"])
    if mode == "scripted":
        _expect(errors, cfg.script_path is not None, "gateway.script",
                "required when gateway.mode = 'scripted'")
    if mode == "http":
        _expect(errors, bool(cfg.endpoint), "gateway.endpoint",
                "required when gateway.mode = 'http'")
        _expect(errors, bool(cfg.model), "gateway.model",
                "required when gateway.mode = 'http'")

    ev = raw.get("evaluator", {})
    emode = ev.get("mode", cfg.evaluator_mode)
    _expect(errors, emode in ("surrogate", "sandbox"), "evaluator.mode",
            "must be 'surrogate' or 'sandbox'")
    cfg.evaluator_mode = emode
    if "cmd" in ev:
        cmd = ev["cmd"]
        _expect(errors, isinstance(cmd, list) and all(isinstance(x, str) for x in cmd),
                "evaluator.cmd", "must be a list of strings")
        cfg.sandbox_cmd = [str(x) for x in cmd] if isinstance(cmd, list) else []
    if "config" in ev:
        _expect(errors, isinstance(ev["config"], dict), "evaluator.config",
                "must be a table")
        cfg.sandbox_config = dict(ev["config"]) if isinstance(ev["config"], dict) else {}
    if emode == "sandbox":
        _expect(errors, bool(cfg.sandbox_cmd), "evaluator.cmd",
                "required when evaluator.mode = 'sandbox'")

    know = raw.get("knowledge", {})
    if "tree" in know:
        cfg.tree_path = resolve(know["tree"])
    if "ideas" in know:
        cfg.ideas_path = resolve(know["ideas"])

    base = raw.get("base", {})
    if "source" in base:
        cfg.base_path = resolve(base["source"])

    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def load_config(path: str | Path) -> SearchConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})")
    return config_from_dict(raw, base_dir=path.parent)


def config_to_dict(cfg: SearchConfig) -> dict:
    return {
        "k0": cfg.k0, "k1": cfg.k1, "k2": cfg.k2, "k3": cfg.k3, "d": cfg.d,
        "generations": cfg.generations, "seed": cfg.seed, "workers": cfg.workers,
        "refinement_switch_fraction": cfg.refinement_switch_fraction,
        "budget_labels": list(cfg.budget_labels),
        "thresholds": list(cfg.thresholds),
        "limits": {
            "max_debug": cfg.limits.max_debug,
            "max_downscale": cfg.limits.max_downscale,
            "max_struct_retries": cfg.limits.max_struct_retries,
        },
        "toggles": {
            "execution": cfg.toggles.execution,
            "budget": cfg.toggles.budget,
            "structural": cfg.toggles.structural,
        },
        "evaluator_mode": cfg.evaluator_mode,
        "gateway_mode": cfg.gateway_mode,
        "script_path": cfg.script_path,
        "endpoint": cfg.endpoint,
        "model": cfg.model,
        "api_key_env": cfg.api_key_env,
        "timeout_s": cfg.timeout_s,
        "temperature": cfg.temperature,
        "tree_path": cfg.tree_path,
        "ideas_path": cfg.ideas_path,
        "base_path": cfg.base_path,
        "sandbox_cmd": list(cfg.sandbox_cmd),
        "sandbox_config": dict(cfg.sandbox_config),
    }


def config_from_json(raw: dict) -> SearchConfig:
    cfg = SearchConfig(
        **{
            k: raw[k]
            for k in (
                "k0", "k1", "k2", "k3", "d", "generations", "seed", "workers",
                "refinement_switch_fraction", "evaluator_mode", "gateway_mode",
                "script_path", "endpoint", "model", "api_key_env", "timeout_s",
                "temperature", "tree_path", "ideas_path", "base_path",
            )
            if k in raw
        }
    )
    cfg.budget_labels = tuple(raw.get("budget_labels", cfg.budget_labels))
    cfg.thresholds = tuple(raw.get("thresholds", cfg.thresholds))
    cfg.limits = RetryLimits(**raw.get("limits", {}))
    cfg.toggles = VerifierToggles(**raw.get("toggles", {}))
    cfg.sandbox_cmd = list(raw.get("sandbox_cmd", []))
    cfg.sandbox_config = dict(raw.get("sandbox_config", {}))
    return cfg


# --- history ---


@dataclass
class HistoryEntry:
    index: int
    candidate: Candidate
    val_accuracy: float
    test_accuracy: float | None
    budgets: tuple[float, ...]
    record: MutationRecord
    slot: int
    step: int
    valid: bool = True


def guard_reason(result: EvaluationResult, thresholds: tuple[float, ...]) -> str | None:
    """Why a result may not enter history; None when it may."""
    if not result.valid:
        return "invalid"
    assert result.budgets is not None
    if any(b > t for b, t in zip(result.budgets, thresholds)):
        return "budget-guard"
    return None


class History:
    """Append-only store of accepted candidates, insertion-ordered."""

    def __init__(self, thresholds: tuple[float, ...]):
        self.thresholds = thresholds
        self.entries: list[HistoryEntry] = []
        self._by_id: dict[str, HistoryEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, candidate_id: str | None) -> HistoryEntry | None:
        if candidate_id is None:
            return None
        return self._by_id.get(candidate_id)

    def record(
        self,
        candidate: Candidate,
        result: EvaluationResult,
        record: MutationRecord,
        slot: int = 0,
        step: int = 0,
    ) -> HistoryEntry:
        reason = guard_reason(result, self.thresholds)
        if reason is not None:
            raise GuardError(f"candidate {candidate.id} rejected: {reason}")
        if candidate.id in self._by_id:
            raise HistoryCorruption(f"duplicate candidate id {candidate.id}")
        assert result.val_accuracy is not None and result.budgets is not None
        entry = HistoryEntry(
            index=len(self.entries),
            candidate=candidate,
            val_accuracy=result.val_accuracy,
            test_accuracy=result.test_accuracy,
            budgets=result.budgets,
            record=record,
            slot=slot,
            step=step,
        )
        self.entries.append(entry)
        self._by_id[candidate.id] = entry
        return entry

    def best(self) -> HistoryEntry:
        if not self.entries:
            raise SearchError("history is empty")
        return select_topk_parents(self.entries, 1)[0]


def select_topk_parents(entries: list[HistoryEntry], k: int) -> list[HistoryEntry]:
    """Highest validation accuracy; ties prefer the cheaper first budget,
    then the earlier insertion."""
    ranked = sorted(entries, key=lambda e: (-e.val_accuracy, e.budgets[0], e.index))
    return ranked[:k]


@dataclass(frozen=True)
class RefinementChoice:
    kind: str  # upscale | hyperparam
    instruction: str


def choose_refinement(
    budgets: tuple[float, ...],
    thresholds: tuple[float, ...],
    switch_fraction: float,
    rng: random.Random,
) -> RefinementChoice:
    """Upscale while any budget sits clearly under its cap, else tune.

    "Clearly under" means strictly below switch_fraction of the threshold;
    at or above that point only hyperparameter adjustment ideas are drawn.
    """
    if any(b < switch_fraction * t for b, t in zip(budgets, thresholds)):
        pool = templates.load_lines("refinement-ideas-upscale")
        kind = "upscale"
    else:
        pool = templates.load_lines("refinement-ideas-hyperparam")
        kind = "hyperparam"
    return RefinementChoice(kind, pool[rng.randrange(len(pool))])


# --- run directory ---


@dataclass(frozen=True)
class FailureInfo:
    generation: int
    stage: str
    slot: int
    step: int
    parent_id: str | None
    reason: str
    trace: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "generation": self.generation,
            "stage": self.stage,
            "slot": self.slot,
            "step": self.step,
            "parent_id": self.parent_id,
            "reason": self.reason,
            "trace": list(self.trace),
        }


def entry_to_json(entry: HistoryEntry) -> dict:
    return {
        "index": entry.index,
        "id": entry.candidate.id,
        "parent_id": entry.candidate.parent_id,
        "stage": entry.candidate.stage,
        "generation": entry.candidate.generation,
        "slot": entry.slot,
        "step": entry.step,
        "val_accuracy": entry.val_accuracy,
        "test_accuracy": entry.test_accuracy,
        "budgets": list(entry.budgets),
        "valid": entry.valid,
        "record": {
            "idea_text": entry.record.idea_text,
            "directive_kind": entry.record.directive_kind,
            "parent_id": entry.record.parent_id,
            "prompts": [list(p) for p in entry.record.prompts],
            "trace": list(entry.record.verification_trace),
        },
    }


class RunDir:
    """Filesystem layout of one search run."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.config_json = self.path / "config.json"
        self.state_json = self.path / "state.json"
        self.history_jsonl = self.path / "history.jsonl"
        self.failures_jsonl = self.path / "failures.jsonl"
        self.transcript_jsonl = self.path / "transcript.jsonl"
        self.candidates = self.path / "candidates"
        self.knowledge = self.path / "knowledge"

    def initialize(self) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        self.candidates.mkdir(exist_ok=True)
        self.knowledge.mkdir(exist_ok=True)

    def exists(self) -> bool:
        return self.state_json.is_file()

    def write_state(self, completed_generations: int, finished: bool) -> None:
        tmp = self.state_json.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {"completed_generations": completed_generations, "finished": finished}
            )
            + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, self.state_json)

    def read_state(self) -> dict:
        return json.loads(self.state_json.read_text(encoding="utf-8"))

    def candidate_path(self, candidate_id: str) -> Path:
        return self.candidates / f"{candidate_id}.py"

    def load_history_lines(self, up_to_generation: int) -> list[dict]:
        """Records of all fully committed generations, in file order."""
        out: list[dict] = []
        if not self.history_jsonl.is_file():
            return out
        with open(self.history_jsonl, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SearchError(
                        f"{self.history_jsonl}:{lineno}: corrupt history record ({exc})"
                    )
                if rec.get("generation", 0) <= up_to_generation:
                    out.append(rec)
        return out


# --- the engine ---


@dataclass
class SlotResult:
    slot: int
    links: list[tuple[Candidate, EvaluationResult, MutationRecord, int]]  # +step
    failures: list[FailureInfo]


@dataclass
class SearchSummary:
    best_id: str
    best_val_accuracy: float
    history_len: int
    attempts: int
    recorded: int
    failures: int

    def to_dict(self) -> dict:
        return {
            "best_id": self.best_id,
            "best_val_accuracy": self.best_val_accuracy,
            "history_len": self.history_len,
            "attempts": self.attempts,
            "recorded": self.recorded,
            "failures": self.failures,
        }


class SearchRun:
    """One search over one run directory; resumable at generation boundaries."""

    def __init__(
        self,
        cfg: SearchConfig,
        run_dir: str | Path,
        *,
        tree: AttributeTree,
        db: KnowledgeDB,
        base_source: str,
        gateway=None,
        evaluator: Evaluator | None = None,
    ):
        self.cfg = cfg
        self.dirs = RunDir(run_dir)
        self.tree = tree
        self.db = db
        self.base_source = base_source
        self.dirs.initialize()
        self.history = History(cfg.thresholds)
        self.failures: list[FailureInfo] = []
        self._flushed_entries = 0
        self._flushed_failures = 0
        self.gateway = gateway if gateway is not None else self._build_gateway()
        self.evaluator = evaluator if evaluator is not None else self._build_evaluator()
        self._targets = self.db.targets_with_ideas()
        if not self._targets:
            raise SearchError("idea database is empty")

    # - construction helpers -

    def _build_gateway(self):
        transcript = TranscriptWriter(self.dirs.transcript_jsonl)
        if self.cfg.gateway_mode == "scripted":
            assert self.cfg.script_path
            return ScriptedGateway(load_script(self.cfg.script_path), transcript)
        assert self.cfg.endpoint and self.cfg.model
        return HttpGateway(
            self.cfg.endpoint,
            self.cfg.model,
            api_key_env=self.cfg.api_key_env,
            timeout_s=self.cfg.timeout_s,
            temperature=self.cfg.temperature,
            transcript=transcript,
        )

    def _build_evaluator(self) -> Evaluator:
        if self.cfg.evaluator_mode == "surrogate":
            return SurrogateEvaluator()
        return SandboxEvaluator(
            self.cfg.sandbox_cmd, self.cfg.sandbox_config, procs=self.cfg.workers
        )

    # - deterministic ids and rng streams -

    def _per_generation(self) -> int:
        return self.cfg.k1 + self.cfg.k2 + self.cfg.k3 * self.cfg.d

    def _candidate_index(self, generation: int, stage: str, slot: int, step: int) -> int:
        if stage == STAGE_INIT:
            return 0 if slot < 0 else 1 + slot
        base = 1 + self.cfg.k0 + (generation - 1) * self._per_generation()
        if stage == STAGE_FAIR:
            return base + slot
        if stage == STAGE_PARETO:
            return base + self.cfg.k1 + slot
        return base + self.cfg.k1 + self.cfg.k2 + slot * self.cfg.d + step

    def _cid(self, generation: int, stage: str, slot: int, step: int = 0) -> str:
        return f"c{self._candidate_index(generation, stage, slot, step):05d}"

    def _stream(self, generation: int, stage: str, slot: int) -> str:
        if stage == STAGE_INIT:
            return f"init.{slot}"
        return f"g{generation}.{stage}.{slot}"

    def _rng(self, stream: str) -> random.Random:
        return random.Random(f"{self.cfg.seed}:{stream}")

    # - persistence -

    def _flush(self, completed_generations: int, finished: bool = False) -> None:
        with open(self.dirs.history_jsonl, "a", encoding="utf-8") as f:
            for entry in self.history.entries[self._flushed_entries :]:
                f.write(json.dumps(entry_to_json(entry), ensure_ascii=False) + "\n")
                self.dirs.candidate_path(entry.candidate.id).write_text(
                    entry.candidate.source, encoding="utf-8"
                )
        self._flushed_entries = len(self.history.entries)
        with open(self.dirs.failures_jsonl, "a", encoding="utf-8") as f:
            for failure in self.failures[self._flushed_failures :]:
                f.write(json.dumps(failure.to_json(), ensure_ascii=False) + "\n")
        self._flushed_failures = len(self.failures)
        self.dirs.write_state(completed_generations, finished)

    def snapshot_inputs(self) -> None:
        """Copy config and knowledge inputs into the run dir for resume."""
        from .knowledge import save_attribute_tree

        save_attribute_tree(self.tree, self.dirs.knowledge / "tree.json")
        self.db.save(self.dirs.knowledge / "ideas.jsonl")
        if (
            self.cfg.gateway_mode == "scripted"
            and self.cfg.script_path
            and Path(self.cfg.script_path).is_file()
        ):
            shutil.copyfile(self.cfg.script_path, self.dirs.path / "script.jsonl")
        self.dirs.config_json.write_text(
            json.dumps(config_to_dict(self.cfg), indent=2) + "\n", encoding="utf-8"
        )

    # - evaluation plumbing shared by all stages -

    def _fair_prompt_factory(self, parent: Candidate) -> Callable:
        def make(rng: random.Random) -> MutationPrompt:
            target = self._targets[rng.randrange(len(self._targets))]
            idea = fair_sample(self.db, target, rng)
            directive = make_directive(idea, rng)
            return format_mutation_prompt(directive, parent)

        return make

    def _run_slot(
        self,
        parent: Candidate,
        prompt_factory: Callable,
        generation: int,
        stage: str,
        slot: int,
        step: int = 0,
        resample: Callable | None = None,
        rng: random.Random | None = None,
        prompt: MutationPrompt | None = None,
    ) -> tuple[MutationOutcome, EvaluationResult | None, str | None]:
        """Mutate once and evaluate; returns (outcome, result, failure reason)."""
        stream = self._stream(generation, stage, slot)
        if rng is None:
            rng = self._rng(stream)
        if prompt is None:
            prompt = prompt_factory(rng)
        outcome = mutate(
            parent,
            prompt,
            child_id=self._cid(generation, stage, slot, step),
            stage=stage,
            generation=generation,
            gateway=self.gateway,
            stream=stream,
            evaluator=self.evaluator,
            limits=self.cfg.limits,
            thresholds=self.cfg.thresholds,
            rng=rng,
            resample=resample,
            toggles=self.cfg.toggles,
        )
        if not outcome.ok:
            return outcome, None, outcome.failure_reason
        result = self.evaluator.train_eval(outcome.candidate.source)
        reason = guard_reason(result, self.cfg.thresholds)
        return outcome, result, reason

    def _mutation_job(
        self, parent: Candidate, generation: int, stage: str, slot: int,
        prompt_factory: Callable,
    ) -> SlotResult:
        outcome, result, reason = self._run_slot(
            parent,
            prompt_factory,
            generation,
            stage,
            slot,
            resample=prompt_factory,
        )
        if reason is not None:
            return SlotResult(
                slot,
                links=[],
                failures=[
                    FailureInfo(
                        generation, stage, slot, 0, parent.id, reason,
                        tuple(outcome.record.verification_trace),
                    )
                ],
            )
        assert outcome.candidate is not None and result is not None
        return SlotResult(slot, links=[(outcome.candidate, result, outcome.record, 0)], failures=[])

    def _chain_job(self, head: HistoryEntry, generation: int, slot: int) -> SlotResult:
        """Stage III: d chained refinements, advancing to each new child."""
        stream = self._stream(generation, STAGE_ITER, slot)
        rng = self._rng(stream)
        links: list[tuple[Candidate, EvaluationResult, MutationRecord, int]] = []
        failures: list[FailureInfo] = []
        ancestor = self.history.get(head.candidate.parent_id)
        if ancestor is not None:
            anc_source, anc_val = ancestor.candidate.source, ancestor.val_accuracy
        else:
            # chain head is the seed model: no grandparent to contrast with
            anc_source, anc_val = head.candidate.source, head.val_accuracy
        cur_cand, cur_val = head.candidate, head.val_accuracy
        for step in range(self.cfg.d):
            improved = cur_val > anc_val
            prompt = format_idea_mutation_prompt(
                cur_cand, None, self.tree, improved, anc_source
            )
            outcome, result, reason = self._run_slot(
                cur_cand,
                lambda r: prompt,
                generation,
                STAGE_ITER,
                slot,
                step=step,
                rng=rng,
                prompt=prompt,
            )
            if reason is not None:
                failures.append(
                    FailureInfo(
                        generation, STAGE_ITER, slot, step, cur_cand.id, reason,
                        tuple(outcome.record.verification_trace),
                    )
                )
                break
            assert outcome.candidate is not None and result is not None
            links.append((outcome.candidate, result, outcome.record, step))
            anc_source, anc_val = cur_cand.source, cur_val
            cur_cand, cur_val = outcome.candidate, result.val_accuracy
        return SlotResult(slot, links=links, failures=failures)

    def _run_jobs(self, jobs: list[Callable[[], SlotResult]]) -> list[SlotResult]:
        if self.cfg.workers <= 1 or len(jobs) <= 1:
            return [job() for job in jobs]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            return list(pool.map(lambda job: job(), jobs))

    def _commit(self, results: list[SlotResult]) -> None:
        for res in sorted(results, key=lambda r: r.slot):
            for cand, result, record, step in res.links:
                self.history.record(cand, result, record, slot=res.slot, step=step)
            self.failures.extend(res.failures)

    # - stages -

    def init_population(self) -> None:
        """Record the evaluated seed, then k0 fair mutations of it."""
        ok, error = self.evaluator.check_compile(self.base_source)
        if not ok:
            raise SearchError(f"base model does not compile: {error}")
        base_result = self.evaluator.train_eval(self.base_source)
        reason = guard_reason(base_result, self.cfg.thresholds)
        if reason is not None:
            raise SearchError(f"base model rejected by history guard: {reason}")
        base_cand = Candidate(
            id=self._cid(0, STAGE_INIT, -1),
            source=self.base_source,
            parent_id=None,
            stage=STAGE_INIT,
            generation=0,
        )
        base_record = MutationRecord(
            idea_text="", directive_kind="init", parent_id=None,
            verification_trace=["pass"],
        )
        self.history.record(base_cand, base_result, base_record, slot=-1)
        jobs = [
            (lambda j=j: self._mutation_job(
                base_cand, 0, STAGE_INIT, j, self._fair_prompt_factory(base_cand)
            ))
            for j in range(self.cfg.k0)
        ]
        self._commit(self._run_jobs(jobs))
        logger.info(
            "init population: %d recorded, %d failed",
            len(self.history), len(self.failures),
        )

    def run_generation(self, generation: int) -> None:
        cfg = self.cfg

        # Stage I: fair idea mutation of the current top-k
        parents = select_topk_parents(self.history.entries, min(cfg.k1, len(self.history)))
        jobs = [
            (lambda j=j, p=p: self._mutation_job(
                p.candidate, generation, STAGE_FAIR, j,
                self._fair_prompt_factory(p.candidate),
            ))
            for j, p in enumerate(parents)
        ]
        self._commit(self._run_jobs(jobs))

        # Stage II: Pareto-aware refinement
        points = [
            ScoredPoint(e.candidate.id, e.val_accuracy, e.budgets)
            for e in self.history.entries
        ]
        chosen = select_pareto_parents(points, min(cfg.k2, len(points)))
        pareto_parents = [self.history.get(p.id) for p in chosen]

        def refine_factory(entry: HistoryEntry) -> Callable:
            def make(rng: random.Random) -> MutationPrompt:
                choice = choose_refinement(
                    entry.budgets, cfg.thresholds, cfg.refinement_switch_fraction, rng
                )
                return format_refinement_prompt(
                    choice.kind, choice.instruction, entry.candidate
                )

            return make

        jobs = [
            (lambda j=j, e=e: self._mutation_job(
                e.candidate, generation, STAGE_PARETO, j, refine_factory(e)
            ))
            for j, e in enumerate(pareto_parents)
            if e is not None
        ]
        self._commit(self._run_jobs(jobs))

        # Stage III: chained LLM-driven refinement
        heads = select_topk_parents(self.history.entries, min(cfg.k3, len(self.history)))
        jobs = [
            (lambda j=j, h=h: self._chain_job(h, generation, j))
            for j, h in enumerate(heads)
        ]
        self._commit(self._run_jobs(jobs))
        logger.info(
            "generation %d done: history=%d failures=%d best=%.4f",
            generation, len(self.history), len(self.failures),
            self.history.best().val_accuracy,
        )

    def run(self, start_generation: int = 0) -> tuple[HistoryEntry, SearchSummary]:
        """Run from ``start_generation`` (0 = fresh) to completion."""
        if start_generation == 0:
            self.snapshot_inputs()
            self.init_population()
            self._flush(0)
        for g in range(start_generation + 1, self.cfg.generations + 1):
            self.run_generation(g)
            self._flush(g, finished=(g == self.cfg.generations))
        if self.cfg.generations == start_generation:
            self._flush(start_generation, finished=True)
        best = self.history.best()
        summary = SearchSummary(
            best_id=best.candidate.id,
            best_val_accuracy=best.val_accuracy,
            history_len=len(self.history),
            attempts=len(self.history) + len(self.failures),
            recorded=len(self.history),
            failures=len(self.failures),
        )
        return best, summary


def resume_run(run_dir: str | Path, *, gateway=None, evaluator=None) -> SearchRun:
    """Rebuild a SearchRun from its directory, dropping any partially
    committed generation past the last recorded barrier."""
    run = RunDir(run_dir)
    if not run.exists():
        raise SearchError(f"{run.path} is not a run directory (no state.json)")
    cfg = config_from_json(json.loads(run.config_json.read_text(encoding="utf-8")))
    state = run.read_state()
    completed = int(state["completed_generations"])
    tree = load_attribute_tree(run.knowledge / "tree.json")
    db = KnowledgeDB.load(run.knowledge / "ideas.jsonl", tree)
    script_copy = run.path / "script.jsonl"
    if cfg.gateway_mode == "scripted" and script_copy.is_file():
        cfg.script_path = str(script_copy)
    base_source = run.candidate_path("c00000").read_text(encoding="utf-8")
    search = SearchRun(
        cfg, run.path, tree=tree, db=db, base_source=base_source,
        gateway=gateway, evaluator=evaluator,
    )
    kept = run.load_history_lines(completed)
    # drop any lines flushed past the last completed barrier before state.json
    # was updated (crash window); the generation will be re-run
    with open(run.history_jsonl, "w", encoding="utf-8") as f:
        for rec in kept:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    for rec in kept:
        cand = Candidate(
            id=rec["id"],
            source=run.candidate_path(rec["id"]).read_text(encoding="utf-8"),
            parent_id=rec["parent_id"],
            stage=rec["stage"],
            generation=rec["generation"],
        )
        record = MutationRecord(
            idea_text=rec["record"]["idea_text"],
            directive_kind=rec["record"]["directive_kind"],
            parent_id=rec["record"]["parent_id"],
            prompts=[tuple(p) for p in rec["record"]["prompts"]],
            verification_trace=list(rec["record"]["trace"]),
        )
        result = EvaluationResult.ok(
            val_accuracy=rec["val_accuracy"],
            budgets=tuple(rec["budgets"]),
            test_accuracy=rec.get("test_accuracy"),
        )
        search.history.record(cand, result, record, slot=rec["slot"], step=rec["step"])
    search._flushed_entries = len(search.history.entries)
    if run.failures_jsonl.is_file():
        with open(run.failures_jsonl, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("generation", 0) <= completed:
                    search.failures.append(
                        FailureInfo(
                            rec["generation"], rec["stage"], rec["slot"], rec["step"],
                            rec.get("parent_id"), rec["reason"], tuple(rec.get("trace", ())),
                        )
                    )
        with open(run.failures_jsonl, "w", encoding="utf-8") as f:
            for failure in search.failures:
                f.write(json.dumps(failure.to_json(), ensure_ascii=False) + "\n")
    search._flushed_failures = len(search.failures)
    return search
