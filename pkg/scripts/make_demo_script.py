#!/usr/bin/env python3
"""Regenerate the demo fixtures: idea database and gateway replay script.

The replay script is recorded by running the real engine against a
deterministic stand-in LLM. Whatever requests the engine makes, the
transcript of this run answers them, so replaying it later reproduces the
run exactly. A handful of (stream, seq) slots deliberately misbehave to
exercise the repair loops: a compile failure, two over-budget responses at
different severities, one budget exhaustion, and one structural rejection.

Usage: python3 scripts/make_demo_script.py
"""

from __future__ import annotations

import hashlib
import shutil
import sys
import tempfile
import threading
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from archevo.evolution import SearchRun, load_config  # noqa: E402
from archevo.gateway import ChatExchange, TranscriptWriter  # noqa: E402
from archevo.knowledge import KnowledgeDB, load_default_tree, make_idea  # noqa: E402

DEMO = REPO / "demo"

BONUS_TAGS = ("attn", "se", "dwconv", "mlp")

# (text, target, granularity, main category, sub category, source)
IDEAS = [
    ("Insert a lightweight multi-head self-attention block after the final "
     "convolution stage so the network can model long-range spatial "
     "dependencies.",
     "performance", "operation", "feature extraction operators", "attention",
     "demo:long-range-attn"),
    ("Replace the middle convolution with parallel 3x3 and 5x5 branches whose "
     "outputs are concatenated, capturing patterns at two receptive-field "
     "sizes.",
     "performance", "operation", "feature extraction operators", "convolution",
     "demo:inception-branches"),
    ("Add batch normalization after every convolution to stabilize "
     "activations and allow a higher learning rate.",
     "performance", "operation", "normalization", "batch normalization",
     "demo:batchnorm"),
    ("Swap ReLU activations for GELU to give smoother gradients around zero.",
     "performance", "operation", "activation", "gelu", "demo:gelu-swap"),
    ("Prepend a small convolutional stem of two 3x3 layers so early features "
     "are learned before any downsampling.",
     "performance", "block-and-connectivity", "input encoding", "cnn stem",
     "demo:conv-stem"),
    ("Wrap every pair of convolutions in an identity residual connection so "
     "deeper stacks remain trainable.",
     "performance", "block-and-connectivity",
     "residual connections and multi-branch architectures",
     "residual connections", "demo:residual"),
    ("Add a squeeze-and-excitation block after each stage to reweight "
     "channels by global context.",
     "performance", "block-and-connectivity", "adaptive feature recalibration",
     "channel attention (se block)", "demo:se-stages"),
    ("Organize the network into three stages that halve resolution and double "
     "width, forming a hierarchical feature pyramid.",
     "performance", "network", "network structural patterns",
     "multi-stage hierarchical structure", "demo:three-stages"),
    ("Replace standard convolutions with depthwise separable ones to cut "
     "parameters and FLOPs roughly ninefold at similar accuracy.",
     "efficiency", "operation", "efficient convolution",
     "depthwise convolution", "demo:dwconv"),
    ("Split wide convolutions into four groups to reduce parameter count "
     "while keeping channel width.",
     "efficiency", "operation", "efficient convolution", "grouped convolution",
     "demo:grouped-conv"),
    ("Restrict self-attention to non-overlapping 7x7 windows so its cost "
     "grows linearly with image size.",
     "efficiency", "operation", "efficient transformer", "windowed attention",
     "demo:windowed-attn"),
    ("Use 1x1 convolutions to squeeze channels before and expand after each "
     "3x3 convolution, shrinking the heavy operation.",
     "efficiency", "block-and-connectivity", "efficient block structures",
     "bottleneck block", "demo:bottleneck"),
    ("Concatenate each block's input with its output so later layers reuse "
     "early features instead of recomputing them.",
     "efficiency", "block-and-connectivity",
     "dense connectivity for feature reuse", None, "demo:dense-reuse"),
    ("Scale depth and width together by a single compound coefficient instead "
     "of growing either alone.",
     "efficiency", "network", "network-wise scaling", "compound scaling",
     "demo:compound-scaling"),
    ("Randomly drop entire residual blocks during training so the effective "
     "network is shallower and regularized.",
     "efficiency", "network", "dynamic computation", "stochastic depth",
     "demo:stochastic-depth"),
]


def _h(stream: str, seq: int) -> int:
    key = f"{stream}|{seq}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _code(depth: int, width: int, tags: list[str], note: str) -> str:
    tag_str = ",".join(tags)
    return (
        f"{note}\n\n"
        "```python\n"
        "# candidate architecture\n"
        f"#SURROGATE depth={depth} width={width} tags={tag_str}\n"
        "class Network:\n"
        "    def forward(self, x):\n"
        "        return x\n"
        "```\n"
    )


def _in_budget(h: int, cap: float = 1.5e6) -> tuple[int, int, list[str]]:
    depth = 2 + h % 5
    max_width = int((cap / (64 * depth)) ** 0.5)
    width = 8 + (h >> 16) % (max_width - 8)
    tags = [t for i, t in enumerate(BONUS_TAGS) if (h >> i) & 1]
    return depth, width, tags


class SynthGateway:
    """Deterministic request-classifying responder used only for recording."""

    def __init__(self, transcript: TranscriptWriter):
        self._transcript = transcript
        self._seq: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, stream: str, system: str | None, user: str) -> str:
        with self._lock:
            seq = self._seq.get(stream, 0)
            self._seq[stream] = seq + 1
        response = self._respond(stream, seq, system, user)
        self._transcript.append(ChatExchange(stream, seq, system, user, response, 0.0))
        return response

    def _respond(self, stream: str, seq: int, system: str | None, user: str) -> str:
        # the debug user prompt also opens with "The target model was
        # mutated", so the structural check is recognized by its bare
        # (system-less) request instead
        if system and "specializing in debugging" in system:
            d, w, tags = _in_budget(_h(stream, seq))
            return _code(d, w, tags, "Fixed the reported error.")
        if system is None and user.startswith("The target model was mutated"):
            if stream == "g1.pareto.0" and seq == 1:
                return "The added block does not change the computation.\n**response** no"
            return "All three conditions hold.\n##response## yes"
        if system and "reduce FLOPs and parameter size" in system:
            if stream == "g2.fair.0":
                return _code(6, 64, ["attn"], "Reduced the block width.")  # still too big
            d, w, tags = _in_budget(_h(stream, seq), cap=6e5)
            return _code(d, w, tags, "Shrunk the model as instructed.")
        # ordinary mutation request
        if stream == "init.2" and seq == 0:
            return ("Here is the updated model.\n\n"
                    "```python\nclass Network:\n    def forward(self, x):\n"
                    "        return x\n```\n")  # no descriptor: compile fails
        if stream == "g1.fair.1" and seq == 0:
            return _code(6, 64, ["se"], "Widened every stage.")  # 1.57M params
        if stream == "g2.fair.0":
            return _code(6, 64, ["attn"], "Widened every stage.")
        if stream == "g3.pareto.2" and seq == 0:
            return _code(8, 80, ["mlp"], "Doubled depth and width.")  # 3.28M params
        d, w, tags = _in_budget(_h(stream, seq))
        return _code(d, w, tags, "Applied the requested design change.")


def write_ideas(path: Path) -> KnowledgeDB:
    tree = load_default_tree()
    db = KnowledgeDB(tree)
    for text, target, gran, main, sub, source in IDEAS:
        db.add(make_idea(text, target, gran, main, sub, source))
    db.save(path)
    return db


def main() -> int:
    DEMO.mkdir(exist_ok=True)
    db = write_ideas(DEMO / "ideas.jsonl")
    print(f"ideas.jsonl: {len(db)} ideas")

    cfg = load_config(DEMO / "config.toml")
    tmp = Path(tempfile.mkdtemp(prefix="demo-record-"))
    try:
        transcript = TranscriptWriter(tmp / "transcript.jsonl")
        gateway = SynthGateway(transcript)
        search = SearchRun(
            cfg,
            tmp / "run",
            tree=db.tree,
            db=db,
            base_source=(DEMO / "base_model.py").read_text(encoding="utf-8"),
            gateway=gateway,
        )
        best, summary = search.run()
        shutil.copyfile(tmp / "transcript.jsonl", DEMO / "script.jsonl")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"script.jsonl: recorded; history={summary.recorded} "
          f"failures={summary.failures} best={best.candidate.id} "
          f"({best.val_accuracy:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
