"""Prompt template registry.

Templates ship as UTF-8 text files under ``archevo/templates/``, one file per
registry key. A file is either a single block of text or a set of named parts
introduced by ``[part]`` header lines (e.g. ``[system]`` / ``[user]``).
List-valued templates ([ideas] parts, target-templates, refinement idea
files) hold one entry per line.

Rendering replaces ``{slot}`` tokens literally. Braces inside substituted
values are never re-interpreted, so model source code is safe to inline.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

_SECTION_RE = re.compile(r"^\[([a-z-]+)\]$")

# single cache shared by every caller; files are package data and immutable
_cache: dict[str, dict[str, str]] = {}


class TemplateError(KeyError):
    """Unknown template name or missing part."""


def _template_dir() -> Path:
    return Path(str(resources.files("archevo").joinpath("templates")))


def _parse(text: str) -> dict[str, str]:
    """Split a template file into named parts.

    A file whose first non-blank line is not a ``[part]`` header is a single
    part stored under ``""``. Part bodies never contain header-shaped lines
    (headers are lowercase-only; prompt text like ``[Depth or Width
    Shrinking]`` does not qualify).
    """
    lines = text.split("\n")
    first = next((ln for ln in lines if ln.strip()), "")
    if not _SECTION_RE.match(first):
        return {"": text.strip("\n")}
    parts: dict[str, str] = {}
    name: str | None = None
    buf: list[str] = []
    for line in lines:
        m = _SECTION_RE.match(line)
        if m:
            if name is not None:
                parts[name] = "\n".join(buf).strip("\n")
            name = m.group(1)
            buf = []
        elif name is not None:
            buf.append(line)
    if name is not None:
        parts[name] = "\n".join(buf).strip("\n")
    return parts


def load(name: str, part: str = "") -> str:
    """Return one part of a named template, verbatim."""
    if name not in _cache:
        path = _template_dir() / f"{name}.txt"
        if not path.is_file():
            raise TemplateError(f"no template named {name!r}")
        _cache[name] = _parse(path.read_text(encoding="utf-8"))
    parts = _cache[name]
    if part not in parts:
        raise TemplateError(f"template {name!r} has no part {part!r}")
    return parts[part]


def load_lines(name: str, part: str = "") -> list[str]:
    """Return a list-valued template as one entry per non-empty line."""
    return [ln for ln in load(name, part).split("\n") if ln.strip()]


def render(template: str, slots: dict[str, str]) -> str:
    """Substitute ``{slot}`` tokens.

    Single left-to-right pass over the template text only; braces occurring
    inside substituted values are copied through untouched.
    """
    out: list[str] = []
    i = 0
    n = len(template)
    while i < n:
        ch = template[i]
        if ch == "{":
            end = template.find("}", i + 1)
            if end != -1:
                key = template[i + 1 : end]
                if key in slots:
                    out.append(slots[key])
                    i = end + 1
                    continue
        out.append(ch)
        i += 1
    return "".join(out)
