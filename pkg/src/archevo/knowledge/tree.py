"""Design-attribute tree: target -> granularity -> main category -> sub-categories.

The two targets (performance, efficiency) and the three granularities are
fixed; corpus ingestion only ever grows the sub-category leaves.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

TARGETS = ("performance", "efficiency")
GRANULARITIES = ("operation", "block-and-connectivity", "network")

# label used in LLM-facing text for each granularity key
GRANULARITY_LABELS = {
    "operation": "operation level",
    "block-and-connectivity": "block and connectivity level",
    "network": "network level",
}


class TreeFormatError(ValueError):
    """Attribute tree file violates the expected structure."""


def normalize_name(name: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return re.sub(r"\s+", " ", name.strip()).lower()


def normalize_granularity(name: str) -> str | None:
    """Map free-form granularity text to a canonical key.

    Accepts both the canonical hyphenated keys and LLM-facing labels such
    as ``"operation level"``. Returns None when unrecognized.
    """
    n = normalize_name(name)
    if n.endswith(" level"):
        n = n[: -len(" level")]
    n = n.replace(" ", "-")
    return n if n in GRANULARITIES else None


class AttributeTree:
    """In-memory attribute tree with canonical JSON (de)serialization."""

    def __init__(self, data: dict[str, dict[str, dict[str, list[str]]]]):
        self._data = data
        # main categories are unique per target, so this lookup is total
        self._granularity_of: dict[tuple[str, str], str] = {}
        for target, grans in data.items():
            for gran, mains in grans.items():
                for main in mains:
                    self._granularity_of[(target, main)] = gran

    @classmethod
    def from_dict(cls, raw: object) -> "AttributeTree":
        if not isinstance(raw, dict):
            raise TreeFormatError("top level must be an object")
        if list(raw.keys()) != list(TARGETS):
            raise TreeFormatError(
                f"top-level keys must be {list(TARGETS)}, got {list(raw.keys())}"
            )
        data: dict[str, dict[str, dict[str, list[str]]]] = {}
        for target, grans in raw.items():
            if not isinstance(grans, dict) or list(grans.keys()) != list(GRANULARITIES):
                raise TreeFormatError(
                    f"{target}: granularity keys must be {list(GRANULARITIES)} in order"
                )
            seen_mains: set[str] = set()
            data[target] = {}
            for gran, mains in grans.items():
                if not isinstance(mains, dict):
                    raise TreeFormatError(f"{target}.{gran}: must be an object")
                data[target][gran] = {}
                for main, subs in mains.items():
                    cls._check_name(f"{target}.{gran}", main)
                    if main in seen_mains:
                        raise TreeFormatError(
                            f"{target}: duplicate main category {main!r}"
                        )
                    seen_mains.add(main)
                    if not isinstance(subs, list):
                        raise TreeFormatError(
                            f"{target}.{gran}.{main}: sub-categories must be a list"
                        )
                    seen_subs: set[str] = set()
                    for sub in subs:
                        cls._check_name(f"{target}.{gran}.{main}", sub)
                        if sub in seen_subs:
                            raise TreeFormatError(
                                f"{target}.{gran}.{main}: duplicate sub-category {sub!r}"
                            )
                        seen_subs.add(sub)
                    data[target][gran][main] = list(subs)
        return cls(data)

    @staticmethod
    def _check_name(path: str, name: object) -> None:
        if not isinstance(name, str) or not name.strip():
            raise TreeFormatError(f"{path}: empty or non-string name")
        if name != normalize_name(name):
            raise TreeFormatError(f"{path}: name {name!r} is not lowercase-normalized")

    def to_dict(self) -> dict:
        return {
            t: {g: {m: list(s) for m, s in mains.items()} for g, mains in grans.items()}
            for t, grans in self._data.items()
        }

    def copy(self) -> "AttributeTree":
        return AttributeTree(self.to_dict())

    # --- queries ---

    def main_categories(self, target: str) -> list[str]:
        """All main categories of a target, granularity order then insertion order."""
        out: list[str] = []
        for gran in GRANULARITIES:
            out.extend(self._data[target][gran].keys())
        return out

    def granularity_of(self, target: str, main: str) -> str | None:
        return self._granularity_of.get((target, main))

    def subs(self, target: str, main: str) -> list[str]:
        gran = self._granularity_of[(target, main)]
        return list(self._data[target][gran][main])

    def resolves(
        self, target: str, granularity: str, main: str, sub: str | None
    ) -> bool:
        """True when the full tag names an existing path in the tree."""
        if target not in TARGETS:
            return False
        if self._granularity_of.get((target, main)) != granularity:
            return False
        if sub is None:
            return True
        return sub in self._data[target][granularity][main]

    def count_mains(self) -> int:
        return len(self._granularity_of)

    def count_subs(self) -> int:
        return sum(
            len(s) for grans in self._data.values() for mains in grans.values()
            for s in mains.values()
        )

    # --- mutation (leaves only) ---

    def add_sub(self, target: str, main: str, sub: str) -> bool:
        """Add a sub-category leaf; no-op when already present (normalized).

        Returns True when the leaf was added. Raises KeyError for an unknown
        (target, main) pair: the top two levels are fixed.
        """
        gran = self._granularity_of.get((target, main))
        if gran is None:
            raise KeyError(f"unknown main category {main!r} for target {target!r}")
        norm = normalize_name(sub)
        if not norm:
            return False
        subs = self._data[target][gran][main]
        if norm in subs:
            return False
        subs.append(norm)
        return True

    # --- prompt rendering ---

    def format_block(self, target: str) -> str:
        """Render one target's categories the way prompts expect them."""
        lines: list[str] = []
        for gran in GRANULARITIES:
            lines.append(f"{GRANULARITY_LABELS[gran]}:")
            for main, subs in self._data[target][gran].items():
                lines.append(f"    {main}: [{', '.join(subs)}]")
        return "\n".join(lines)


def _reject_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    d: dict = {}
    for k, v in pairs:
        if k in d:
            raise TreeFormatError(f"duplicate key {k!r}")
        d[k] = v
    return d


def serialize_attribute_tree(tree: AttributeTree) -> str:
    """Canonical serialization; loading then serializing is byte-stable."""
    return json.dumps(tree.to_dict(), indent=2, ensure_ascii=False) + "\n"


def load_attribute_tree(path: str | Path) -> AttributeTree:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"{path}: not valid JSON ({exc})") from exc
    return AttributeTree.from_dict(raw)


def save_attribute_tree(tree: AttributeTree, path: str | Path) -> None:
    Path(path).write_text(serialize_attribute_tree(tree), encoding="utf-8")


def default_tree_path() -> Path:
    """Packaged tree built from the curated reference-model analysis."""
    return Path(__file__).resolve().parent.parent / "data" / "attribute_tree.json"


def load_default_tree() -> AttributeTree:
    return load_attribute_tree(default_tree_path())
