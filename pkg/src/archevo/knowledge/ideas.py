"""Design ideas, the idea database, fair sampling and directive assembly."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, asdict
from pathlib import Path

from .. import templates
from .tree import AttributeTree, GRANULARITIES, TARGETS

MAX_IDEA_WORDS = 50

# directive kinds per granularity; network-granularity ideas always rewire
# the network itself, the other two pick a module-level template at random
MODULE_KINDS = ("new-module", "modify-module")
NETWORK_KIND = "network-level"


class TagError(ValueError):
    """Idea tag does not resolve against the attribute tree."""


@dataclass(frozen=True)
class DesignIdea:
    id: str
    text: str
    target: str
    granularity: str
    main_category: str
    sub_category: str | None
    source_paper: str


def make_idea(
    text: str,
    target: str,
    granularity: str,
    main_category: str,
    sub_category: str | None,
    source_paper: str,
) -> DesignIdea:
    """Build an idea with its deterministic content-hash id."""
    text = text.strip()
    if not text:
        raise ValueError("idea text is empty")
    if len(text.split()) > MAX_IDEA_WORDS:
        raise ValueError(f"idea text exceeds {MAX_IDEA_WORDS} words")
    if target not in TARGETS or granularity not in GRANULARITIES:
        raise TagError(f"bad tag ({target!r}, {granularity!r})")
    key = "\x1f".join(
        [text, target, granularity, main_category, sub_category or "", source_paper]
    )
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return DesignIdea(
        id=digest,
        text=text,
        target=target,
        granularity=granularity,
        main_category=main_category,
        sub_category=sub_category,
        source_paper=source_paper,
    )


class KnowledgeDB:
    """Idea store indexed by (target, main_category).

    Insertion order is preserved per category so sampling is reproducible.
    """

    def __init__(self, tree: AttributeTree):
        self.tree = tree
        self._by_id: dict[str, DesignIdea] = {}
        self._index: dict[tuple[str, str], list[DesignIdea]] = {}

    def __len__(self) -> int:
        return len(self._by_id)

    @property
    def ideas(self) -> list[DesignIdea]:
        return list(self._by_id.values())

    def add(self, idea: DesignIdea) -> bool:
        """Insert an idea; returns False for an already-present id."""
        if not self.tree.resolves(
            idea.target, idea.granularity, idea.main_category, idea.sub_category
        ):
            raise TagError(
                f"tag ({idea.target}, {idea.granularity}, {idea.main_category}, "
                f"{idea.sub_category}) does not resolve in the attribute tree"
            )
        if idea.id in self._by_id:
            return False
        self._by_id[idea.id] = idea
        self._index.setdefault((idea.target, idea.main_category), []).append(idea)
        return True

    def for_category(self, target: str, main: str) -> list[DesignIdea]:
        return list(self._index.get((target, main), ()))

    def categories(self, target: str) -> list[str]:
        """Non-empty main categories of a target, in tree order."""
        return [
            m
            for m in self.tree.main_categories(target)
            if self._index.get((target, m))
        ]

    def targets_with_ideas(self) -> list[str]:
        return [t for t in TARGETS if self.categories(t)]

    def counts(self) -> dict[str, int]:
        """Histogram keyed 'target/main category'."""
        return {
            f"{t}/{m}": len(v)
            for (t, m), v in sorted(self._index.items())
            if v
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for idea in self._by_id.values():
                f.write(json.dumps(asdict(idea), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path, tree: AttributeTree) -> "KnowledgeDB":
        db = cls(tree)
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    idea = DesignIdea(
                        id=rec["id"],
                        text=rec["text"],
                        target=rec["target"],
                        granularity=rec["granularity"],
                        main_category=rec["main_category"],
                        sub_category=rec.get("sub_category"),
                        source_paper=rec.get("source_paper", ""),
                    )
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad idea record ({exc})")
                db.add(idea)
        return db


def fair_sample(db: KnowledgeDB, target: str, rng: random.Random) -> DesignIdea:
    """Two-stage uniform draw: main category first, then an idea within it.

    Every non-empty category is equally likely regardless of how many ideas
    it holds, which keeps over-represented topics from dominating.
    """
    cats = db.categories(target)
    if not cats:
        raise ValueError(f"no ideas for target {target!r}")
    cat = cats[rng.randrange(len(cats))]
    pool = db.for_category(target, cat)
    return pool[rng.randrange(len(pool))]


@dataclass(frozen=True)
class MutationDirective:
    """A sampled idea bound to a concrete instruction template."""

    idea: DesignIdea
    kind: str  # new-module | modify-module | network-level
    rendered_instruction: str


def make_directive(idea: DesignIdea, rng: random.Random) -> MutationDirective:
    if idea.granularity == "network":
        kind = NETWORK_KIND
    else:
        kind = MODULE_KINDS[rng.randrange(len(MODULE_KINDS))]
    tpl = templates.load("target-templates", kind)
    return MutationDirective(
        idea=idea,
        kind=kind,
        rendered_instruction=templates.render(tpl, {"idea": idea.text}),
    )
