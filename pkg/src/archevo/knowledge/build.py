"""Corpus ingestion: filter abstracts, extract ideas, grow the attribute tree."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .. import templates
from ..gateway import TagParseError, parse_tag_response
from .ideas import MAX_IDEA_WORDS, DesignIdea, KnowledgeDB, make_idea
from .tree import (
    AttributeTree,
    TARGETS,
    normalize_granularity,
    normalize_name,
)

logger = logging.getLogger(__name__)

ABSTRACT_MARKER = "# ABSTRACT"
BODY_MARKER = "# BODY"


class CorpusFormatError(ValueError):
    pass


class ClassificationParseError(ValueError):
    """Filter response unusable: bad marker, arity, or unknown tag."""


class AttributeParseError(ValueError):
    """Attribute-structuring response missing its labeled blocks."""


@dataclass(frozen=True)
class PaperDoc:
    name: str
    title: str
    abstract: str
    body: str

    @property
    def text(self) -> str:
        return f"{self.title}\n\n{self.abstract}\n\n{self.body}"


def parse_corpus_file(path: str | Path) -> PaperDoc:
    """One paper per file: title line, blank line, marked abstract and body."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    if not lines or not lines[0].strip():
        raise CorpusFormatError(f"{path.name}: first line must be the title")
    if len(lines) < 2 or lines[1].strip():
        raise CorpusFormatError(f"{path.name}: second line must be blank")
    rest = "\n".join(lines[2:])
    a = rest.find(ABSTRACT_MARKER)
    b = rest.find(BODY_MARKER)
    if a < 0 or b < 0 or b < a:
        raise CorpusFormatError(
            f"{path.name}: body must contain '{ABSTRACT_MARKER}' then '{BODY_MARKER}'"
        )
    abstract = rest[a + len(ABSTRACT_MARKER) : b].strip()
    body = rest[b + len(BODY_MARKER) :].strip()
    if not abstract:
        raise CorpusFormatError(f"{path.name}: empty abstract")
    return PaperDoc(name=path.stem, title=lines[0].strip(), abstract=abstract, body=body)


def _attribute_slots(tree: AttributeTree) -> dict[str, str]:
    return {
        "attributes_for_performance_improvement": tree.format_block("performance"),
        "attributes_for_efficiency_improvement": tree.format_block("efficiency"),
    }


def classify_abstract(
    doc: PaperDoc, tree: AttributeTree, gateway, stream: str
) -> tuple[str, str, str, str | None] | None:
    """Ask whether the paper speaks to model design; return its tag or None.

    None means a clean "no" verdict (the paper is filtered out). Anything
    that cannot be read as a verdict or does not resolve in the tree raises
    ClassificationParseError so the caller can retry once before discarding.
    """
    user = templates.render(
        templates.load("paper-filtering"),
        {"title": doc.title, "abstract": doc.abstract, **_attribute_slots(tree)},
    )
    response = gateway.complete(stream, None, user)
    try:
        payload = parse_tag_response(response)
    except TagParseError as exc:
        raise ClassificationParseError(f"{doc.name}: {exc}") from exc
    if payload == "no":
        return None
    parts = [normalize_name(p) for p in payload.split("*")]
    if len(parts) != 4:
        raise ClassificationParseError(
            f"{doc.name}: expected 4 '*'-separated fields, got {len(parts)}"
        )
    target, gran_raw, main, sub_raw = parts
    gran = normalize_granularity(gran_raw)
    sub = None if sub_raw in ("", "-", "none") else sub_raw
    if target not in TARGETS or gran is None or not tree.resolves(target, gran, main, sub):
        raise ClassificationParseError(
            f"{doc.name}: tag {payload!r} does not resolve in the attribute tree"
        )
    return target, gran, main, sub


_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+\.)\s+(.*\S)\s*$")


def parse_idea_bullets(text: str) -> list[str]:
    return [m.group(1) for line in text.split("\n") if (m := _BULLET_RE.match(line))]


def extract_ideas(
    doc: PaperDoc,
    tag: tuple[str, str, str, str | None],
    tree: AttributeTree,
    gateway,
    stream: str,
) -> tuple[list[DesignIdea], int]:
    """Pull bulleted design ideas out of the paper under its classified tag.

    Returns (ideas, truncated_count). Over-long bullets are cut to the word
    cap rather than dropped.
    """
    user = templates.render(
        templates.load("knowledge-extraction"),
        {"paper": doc.text, **_attribute_slots(tree)},
    )
    response = gateway.complete(stream, None, user)
    target, gran, main, sub = tag
    ideas: list[DesignIdea] = []
    truncated = 0
    for bullet in parse_idea_bullets(response):
        words = bullet.split()
        if len(words) > MAX_IDEA_WORDS:
            bullet = " ".join(words[:MAX_IDEA_WORDS])
            truncated += 1
            logger.warning("%s: idea truncated to %d words", doc.name, MAX_IDEA_WORDS)
        ideas.append(make_idea(bullet, target, gran, main, sub, doc.name))
    if not ideas:
        logger.warning("%s: extraction produced no ideas", doc.name)
    return ideas, truncated


@dataclass
class ExtractStats:
    papers: int = 0
    kept: int = 0
    filtered_no: int = 0
    parse_discarded: int = 0
    unreadable_files: int = 0
    retries: int = 0
    ideas_added: int = 0
    duplicate_ideas: int = 0
    truncated_ideas: int = 0
    histogram: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "papers": self.papers,
            "kept": self.kept,
            "filtered_no": self.filtered_no,
            "parse_discarded": self.parse_discarded,
            "unreadable_files": self.unreadable_files,
            "retries": self.retries,
            "ideas_added": self.ideas_added,
            "duplicate_ideas": self.duplicate_ideas,
            "truncated_ideas": self.truncated_ideas,
            "histogram": dict(self.histogram),
        }


def ingest_corpus(
    corpus_dir: str | Path,
    tree: AttributeTree,
    gateway,
    db: KnowledgeDB | None = None,
) -> tuple[KnowledgeDB, ExtractStats]:
    """Run the filter-then-extract pipeline over every file in a corpus dir.

    Classification gets one retry on a parse error; a second failure
    discards the paper. Files are visited in sorted name order so scripted
    replays line up.
    """
    corpus_dir = Path(corpus_dir)
    if db is None:
        db = KnowledgeDB(tree)
    stats = ExtractStats()
    files = sorted(p for p in corpus_dir.iterdir() if p.is_file())
    for path in files:
        try:
            doc = parse_corpus_file(path)
        except CorpusFormatError as exc:
            logger.warning("skipping unreadable file: %s", exc)
            stats.unreadable_files += 1
            continue
        stats.papers += 1
        stream = f"paper.{doc.name}"
        try:
            tag = classify_abstract(doc, tree, gateway, stream)
        except ClassificationParseError:
            stats.retries += 1
            try:
                tag = classify_abstract(doc, tree, gateway, stream)
            except ClassificationParseError as exc:
                logger.warning("discarding %s: %s", doc.name, exc)
                stats.parse_discarded += 1
                continue
        if tag is None:
            stats.filtered_no += 1
            continue
        stats.kept += 1
        ideas, truncated = extract_ideas(doc, tag, tree, gateway, stream)
        stats.truncated_ideas += truncated
        for idea in ideas:
            if db.add(idea):
                stats.ideas_added += 1
            else:
                stats.duplicate_ideas += 1
    stats.histogram = db.counts()
    return db, stats


# --- attribute tree construction from reference models ---

_BLOCK_RE = re.compile(
    r"([a-z][a-z\s-]*?)\s+level\s*:?\s*\{(.*?)\}", re.IGNORECASE | re.DOTALL
)
_PAIR_RE = re.compile(r"([^:{}\[\]\n]+?)\s*:\s*\[([^\]]*)\]")


def parse_attribute_response(text: str) -> dict[str, dict[str, dict[str, list[str]]]]:
    """Parse the **Performance** / **Efficiency** blocks of a structuring reply.

    The reply format is JSON-flavored but not JSON (bare keys), so this is a
    tolerant scan: granularity blocks, then ``main: [subs]`` pairs inside.
    """
    perf_pos = text.find("**Performance**")
    eff_pos = text.find("**Efficiency**")
    if perf_pos < 0 or eff_pos < 0 or eff_pos < perf_pos:
        raise AttributeParseError("missing **Performance** / **Efficiency** blocks")
    segments = {
        "performance": text[perf_pos:eff_pos],
        "efficiency": text[eff_pos:],
    }
    out: dict[str, dict[str, dict[str, list[str]]]] = {}
    for target, segment in segments.items():
        out[target] = {}
        for m in _BLOCK_RE.finditer(segment):
            gran = normalize_granularity(m.group(1) + " level")
            if gran is None:
                continue
            mains: dict[str, list[str]] = {}
            for pm in _PAIR_RE.finditer(m.group(2)):
                main = normalize_name(pm.group(1))
                subs = [
                    normalize_name(s) for s in pm.group(2).split(",") if s.strip()
                ]
                if main:
                    mains.setdefault(main, []).extend(subs)
            out[target][gran] = mains
    return out


def merge_attribute_response(
    tree: AttributeTree, parsed: dict[str, dict[str, dict[str, list[str]]]]
) -> int:
    """Fold parsed sub-categories into the tree; returns how many were new.

    Only leaves ever change. Unknown main categories and granularity
    mismatches are skipped with a warning.
    """
    added = 0
    for target, grans in parsed.items():
        for gran, mains in grans.items():
            for main, subs in mains.items():
                actual = tree.granularity_of(target, main)
                if actual is None:
                    logger.warning(
                        "skipping unknown main category %r (target %s)", main, target
                    )
                    continue
                if actual != gran:
                    logger.warning(
                        "skipping %r: response placed it under %s, tree has %s",
                        main, gran, actual,
                    )
                    continue
                for sub in subs:
                    if tree.add_sub(target, main, sub):
                        added += 1
    return added


def build_attribute_tree(
    references: list[tuple[str, str]],
    gateway,
    base: AttributeTree,
) -> AttributeTree:
    """Grow a copy of the base tree from reference-model analyses.

    ``references`` is a list of (model name, model source) pairs. A reply
    that cannot be parsed skips that reference with a warning.
    """
    tree = base.copy()
    system = templates.render(
        templates.load("attribute-template", "system"),
        {
            "attribute_examples_for_performance_improvements": templates.load(
                "attribute-examples-performance"
            ),
            "attribute_examples_for_efficiency_improvements": templates.load(
                "attribute-examples-efficiency"
            ),
        },
    )
    user_tpl = templates.load("attribute-template", "user")
    for name, code in references:
        user = templates.render(
            user_tpl, {"reference_model_name": name, "reference_model_code": code}
        )
        response = gateway.complete(f"attr.{name}", system, user)
        try:
            parsed = parse_attribute_response(response)
        except AttributeParseError as exc:
            logger.warning("skipping reference %s: %s", name, exc)
            continue
        merge_attribute_response(tree, parsed)
    return tree
