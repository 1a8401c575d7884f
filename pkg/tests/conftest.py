from __future__ import annotations

from pathlib import Path

import pytest

from archevo.cli import main as cli_main
from archevo.evolution import SearchRun, load_config
from archevo.knowledge import KnowledgeDB, load_default_tree

REPO = Path(__file__).resolve().parent.parent
DEMO = REPO / "demo"
CORPUS = Path(__file__).parent / "data" / "corpus"


def run_demo(out: Path, workers: int = 1, seed: int | None = None):
    """Run the committed demo search into ``out``; returns (best, summary)."""
    cfg = load_config(DEMO / "config.toml")
    cfg.workers = workers
    if seed is not None:
        cfg.seed = seed
    tree = load_default_tree()
    db = KnowledgeDB.load(DEMO / "ideas.jsonl", tree)
    search = SearchRun(
        cfg,
        out,
        tree=tree,
        db=db,
        base_source=(DEMO / "base_model.py").read_text(encoding="utf-8"),
    )
    return search.run()


@pytest.fixture(scope="session")
def demo_run_dir(tmp_path_factory) -> Path:
    """One completed demo run shared by read-only tests."""
    out = tmp_path_factory.mktemp("demo") / "run"
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"), "--out", str(out)]
    )
    assert rc == 0
    return out
