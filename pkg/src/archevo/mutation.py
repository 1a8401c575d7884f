"""LLM-driven candidate mutation with a verify-and-repair feedback loop.

One mutate() call owns one population slot. The generated source passes
through three gates in order: execution (debug repairs), hardware budget
(downscale repairs), and structural novelty (full regeneration with a fresh
directive). Repair ceilings are hard; exhausting one fails the slot.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from typing import Callable

from . import templates
from .evaluation import EvaluationError, judge_structure

logger = logging.getLogger(__name__)

# verification trace events
EV_COMPILE_FAIL = "compile-fail"
EV_DEBUG = "debug"
EV_BUDGET_FAIL = "budget-fail"
EV_DOWNSCALE = "downscale"
EV_STRUCT_FAIL = "struct-fail"
EV_PASS = "pass"

FAIL_COMPILE = "compile"
FAIL_BUDGET = "budget"
FAIL_STRUCT = "struct"

# a budget this far past its threshold forces the single-use restriction
OVERSIZE_FACTOR = 1.5


@dataclass(frozen=True)
class Candidate:
    id: str
    source: str
    parent_id: str | None
    stage: str  # init | fair | pareto | llm-iter
    generation: int


@dataclass
class MutationRecord:
    idea_text: str
    directive_kind: str
    parent_id: str | None
    prompts: list[tuple[str, str]] = field(default_factory=list)
    verification_trace: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RetryLimits:
    max_debug: int = 2
    max_downscale: int = 4
    max_struct_retries: int = 2


@dataclass(frozen=True)
class VerifierToggles:
    execution: bool = True
    budget: bool = True
    structural: bool = True


@dataclass(frozen=True)
class MutationPrompt:
    """Fully rendered prompt for one generation attempt."""

    kind: str
    idea_text: str
    system: str | None
    user: str


@dataclass
class MutationOutcome:
    candidate: "Candidate | None"
    failure_reason: str | None
    record: MutationRecord

    @property
    def ok(self) -> bool:
        return self.candidate is not None


class CodeExtractError(ValueError):
    pass


@dataclass(frozen=True)
class CodeExtract:
    text: str
    fenced: bool  # False = no fence found, extraction is low-confidence


_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*\n(.*?)```", re.DOTALL)
_CLASS_RE = re.compile(r"^\s*class\s+([A-Za-z_]\w*)", re.MULTILINE)


def extract_code_block(response: str) -> CodeExtract:
    """Pull model source out of an LLM reply.

    The last fenced block wins (replies often carry plan text with snippets
    before the final code). With no fence at all the whole reply is used
    and flagged low-confidence. Empty results are an error.
    """
    matches = _FENCE_RE.findall(response)
    if matches:
        text = matches[-1].strip()
        if not text:
            raise CodeExtractError("final fenced block is empty")
        return CodeExtract(text, fenced=True)
    text = response.strip()
    if not text:
        raise CodeExtractError("empty LLM response")
    return CodeExtract(text, fenced=False)


def format_mutation_prompt(directive, parent: Candidate) -> MutationPrompt:
    """Directive instruction + parent source under the shared system prompt."""
    return MutationPrompt(
        kind=directive.kind,
        idea_text=directive.idea.text,
        system=templates.load("common-mutation"),
        user=f"{directive.rendered_instruction} "
        f"Please modify the following model: {parent.source}",
    )


def format_refinement_prompt(kind: str, instruction: str, parent: Candidate) -> MutationPrompt:
    """Upscale / hyperparameter instruction routed through the same template."""
    return MutationPrompt(
        kind=f"refine-{kind}",
        idea_text=instruction,
        system=templates.load("common-mutation"),
        user=f"{instruction} Please modify the following model: {parent.source}",
    )


def refinement_ideas_text() -> str:
    lines = templates.load_lines("refinement-ideas-upscale") + templates.load_lines(
        "refinement-ideas-hyperparam"
    )
    return "\n" + "\n".join(f"- {line}" for line in lines)


def format_idea_mutation_prompt(
    parent: Candidate,
    record: MutationRecord,
    tree,
    improved: bool,
    ancestor_source: str,
) -> MutationPrompt:
    """Chained-refinement prompt contrasting the parent with its own parent.

    ``parent`` is the model being refined (the "mutated model" in the
    prompt); ``ancestor_source`` is what it was mutated from. ``improved``
    selects the template branch; equal accuracy counts as degraded.
    """
    name = "idea-mutation-improved" if improved else "idea-mutation-degraded"
    user = templates.render(
        templates.load(name),
        {
            "attributes_for_performance_improvement": tree.format_block("performance"),
            "attributes_for_efficiency_improvement": tree.format_block("efficiency"),
            "refinement_ideas": refinement_ideas_text(),
            "parent_model_code": ancestor_source,
            "current_model_code": parent.source,
        },
    )
    return MutationPrompt(kind=name, idea_text="", system=None, user=user)


@dataclass(frozen=True)
class DownscaleChoice:
    kind: str  # single-use | shrink
    idea: str


def choose_downscale_idea(
    budgets: tuple[float, ...],
    thresholds: tuple[float, ...],
    rng: random.Random,
) -> DownscaleChoice:
    """Pick the repair instruction for an over-budget candidate.

    A budget blown past OVERSIZE_FACTOR x threshold means the new module is
    almost certainly repeated: restrict it to a single use. Otherwise any of
    the four depth/width shrink ideas, uniformly.
    """
    if len(budgets) != len(thresholds):
        raise ValueError("budget/threshold dimensionality mismatch")
    if not any(b > t for b, t in zip(budgets, thresholds)):
        raise ValueError("choose_downscale_idea called while within budget")
    if any(b > OVERSIZE_FACTOR * t for b, t in zip(budgets, thresholds)):
        return DownscaleChoice(
            "single-use", templates.load_lines("downscale-single-use", "ideas")[0]
        )
    ideas = templates.load_lines("downscale-shrink-list", "ideas")
    return DownscaleChoice("shrink", ideas[rng.randrange(len(ideas))])


def _base_module_classes(source: str) -> str:
    names = _CLASS_RE.findall(source)
    return ", ".join(names) if names else "Network"


def mutate(
    parent: Candidate,
    prompt: MutationPrompt,
    *,
    child_id: str,
    stage: str,
    generation: int,
    gateway,
    stream: str,
    evaluator,
    limits: RetryLimits,
    thresholds: tuple[float, ...],
    rng: random.Random,
    resample: Callable[[random.Random], MutationPrompt] | None = None,
    toggles: VerifierToggles = VerifierToggles(),
) -> MutationOutcome:
    """Generate one child candidate from ``parent`` under ``prompt``.

    Returns a MutationOutcome; a terminal failure consumes the slot. Only a
    structural rejection restarts generation (with a freshly sampled
    directive when ``resample`` is given), up to max_struct_retries times.
    """
    record = MutationRecord(
        idea_text=prompt.idea_text,
        directive_kind=prompt.kind,
        parent_id=parent.id,
    )
    trace = record.verification_trace

    def call(system: str | None, user: str) -> str:
        response = gateway.complete(stream, system, user)
        if system is not None:
            record.prompts.append(("system", system))
        record.prompts.append(("user", user))
        record.prompts.append(("assistant", response))
        return response

    def pull_source(response: str) -> str:
        try:
            extract = extract_code_block(response)
        except CodeExtractError as exc:
            logger.warning("%s: %s", child_id, exc)
            return ""
        if not extract.fenced:
            logger.warning("%s: no code fence in reply, using whole text", child_id)
        return extract.text

    struct_retries = 0
    current = prompt
    while True:
        source = pull_source(call(current.system, current.user))

        if toggles.execution:
            debug_system_tpl = templates.load("debug", "system")
            debug_user_tpl = templates.load("debug", "user")
            debugs = 0
            while True:
                ok, error = evaluator.check_compile(source)
                if ok:
                    break
                trace.append(EV_COMPILE_FAIL)
                if debugs == limits.max_debug:
                    return MutationOutcome(None, FAIL_COMPILE, record)
                system = templates.render(
                    debug_system_tpl,
                    {"base_module_classes": _base_module_classes(parent.source)},
                )
                user = templates.render(
                    debug_user_tpl,
                    {
                        "prompt": current.user,
                        "error": error or "unknown error",
                        "sample_model_code": source,
                        "parent_model_code": parent.source,
                    },
                )
                source = pull_source(call(system, user))
                trace.append(EV_DEBUG)
                debugs += 1

        if toggles.budget:
            downscales = 0
            while True:
                try:
                    budgets = evaluator.measure_budgets(source)
                except EvaluationError as exc:
                    # unmeasurable source counts as a failed budget check
                    logger.warning("%s: budget measurement failed: %s", child_id, exc)
                    trace.append(EV_BUDGET_FAIL)
                    return MutationOutcome(None, FAIL_BUDGET, record)
                if all(b <= t for b, t in zip(budgets, thresholds)):
                    break
                trace.append(EV_BUDGET_FAIL)
                if downscales == limits.max_downscale:
                    return MutationOutcome(None, FAIL_BUDGET, record)
                choice = choose_downscale_idea(budgets, thresholds, rng)
                tpl_name = (
                    "downscale-single-use"
                    if choice.kind == "single-use"
                    else "downscale-shrink-list"
                )
                system = templates.load(tpl_name, "system")
                user = templates.render(
                    templates.load(tpl_name, "user"),
                    {
                        "prompt": current.user,
                        "downscale_idea": choice.idea,
                        "sample_model_code": source,
                        "parent_model_code": parent.source,
                    },
                )
                source = pull_source(call(system, user))
                trace.append(EV_DOWNSCALE)
                downscales += 1

        if toggles.structural:
            if not judge_structure(parent.source, source, gateway, stream):
                trace.append(EV_STRUCT_FAIL)
                if struct_retries == limits.max_struct_retries:
                    return MutationOutcome(None, FAIL_STRUCT, record)
                struct_retries += 1
                if resample is not None:
                    current = resample(rng)
                    record.idea_text = current.idea_text
                    record.directive_kind = current.kind
                continue

        trace.append(EV_PASS)
        return MutationOutcome(
            Candidate(
                id=child_id,
                source=source,
                parent_id=parent.id,
                stage=stage,
                generation=generation,
            ),
            None,
            record,
        )


class TraceError(ValueError):
    pass


def validate_trace(trace: list[str], limits: RetryLimits, ok: bool) -> None:
    """Check a verification trace against phase ordering and retry ceilings.

    A struct-fail closes an attempt segment; each regeneration attempt gets
    fresh debug/downscale budgets. Raises TraceError on any violation.
    """
    segments: list[list[str]] = [[]]
    for ev in trace:
        segments[-1].append(ev)
        if ev == EV_STRUCT_FAIL:
            segments.append([])
    if segments[-1] == []:
        segments.pop()  # trace ended on a struct-fail
        struct_terminal = True
    else:
        struct_terminal = False

    n_struct = sum(1 for ev in trace if ev == EV_STRUCT_FAIL)
    if ok:
        if n_struct > limits.max_struct_retries:
            raise TraceError("struct retries exceeded")
        if not trace or trace[-1] != EV_PASS:
            raise TraceError("successful trace must end with pass")
    else:
        if trace and trace[-1] == EV_PASS:
            raise TraceError("failed trace ends with pass")
        if struct_terminal and n_struct != limits.max_struct_retries + 1:
            raise TraceError("struct-terminal trace has wrong retry count")

    for si, seg in enumerate(segments):
        last = si == len(segments) - 1
        phase = 0  # 0=execution, 1=budget, 2=done
        debugs = downscales = 0
        expecting_repair: str | None = None
        for i, ev in enumerate(seg):
            terminal_slot = last and i == len(seg) - 1
            if ev == EV_COMPILE_FAIL:
                if phase > 0 or expecting_repair:
                    raise TraceError(f"unexpected {ev} at segment {si}")
                expecting_repair = EV_DEBUG
            elif ev == EV_DEBUG:
                if expecting_repair != EV_DEBUG:
                    raise TraceError("debug without preceding compile-fail")
                debugs += 1
                expecting_repair = None
            elif ev == EV_BUDGET_FAIL:
                if phase > 1 or expecting_repair:
                    raise TraceError(f"unexpected {ev} at segment {si}")
                phase = 1
                expecting_repair = EV_DOWNSCALE
            elif ev == EV_DOWNSCALE:
                if expecting_repair != EV_DOWNSCALE:
                    raise TraceError("downscale without preceding budget-fail")
                downscales += 1
                expecting_repair = None
            elif ev == EV_STRUCT_FAIL:
                if expecting_repair:
                    raise TraceError("struct-fail while a repair was pending")
                phase = 2
            elif ev == EV_PASS:
                if not terminal_slot or expecting_repair:
                    raise TraceError("pass must be the final event")
                phase = 2
            else:
                raise TraceError(f"unknown trace event {ev!r}")
        if expecting_repair and ok:
            raise TraceError("successful trace left a failure unrepaired")
        if expecting_repair and not last:
            raise TraceError(f"segment {si} ended with an unrepaired failure")
        if debugs > limits.max_debug:
            raise TraceError(f"segment {si}: {debugs} debug events > max_debug")
        if downscales > limits.max_downscale:
            raise TraceError(
                f"segment {si}: {downscales} downscale events > max_downscale"
            )
