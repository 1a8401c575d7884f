"""Candidate evaluation backends and the LLM structural judge.

Two interchangeable evaluators: a closed-form surrogate for fast
deterministic runs and tests, and a bridge to external worker processes
that compile and train real PyTorch sources over a line-delimited JSON
protocol.
"""

from __future__ import annotations

import json
import logging
import math
import re
import subprocess
import threading
import queue
from dataclasses import dataclass
from typing import Protocol

from . import templates
from .gateway import TagParseError, parse_tag_response

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    """Evaluator infrastructure failure (not a property of the candidate)."""


@dataclass(frozen=True)
class EvaluationResult:
    valid: bool
    val_accuracy: float | None = None
    test_accuracy: float | None = None
    budgets: tuple[float, ...] | None = None
    compile_error: str | None = None

    def __post_init__(self) -> None:
        if self.valid:
            if self.val_accuracy is None or self.budgets is None:
                raise ValueError("valid result requires val_accuracy and budgets")
        elif not self.compile_error:
            raise ValueError("invalid result requires compile_error")

    @classmethod
    def ok(
        cls,
        val_accuracy: float,
        budgets: tuple[float, ...],
        test_accuracy: float | None = None,
    ) -> "EvaluationResult":
        return cls(True, val_accuracy, test_accuracy, budgets)

    @classmethod
    def fail(cls, error: str) -> "EvaluationResult":
        return cls(False, compile_error=error)


class Evaluator(Protocol):
    def check_compile(self, source: str) -> tuple[bool, str | None]: ...
    def measure_budgets(self, source: str) -> tuple[float, ...]: ...
    def train_eval(self, source: str) -> EvaluationResult: ...


# --- surrogate ---

_DESCRIPTOR_RE = re.compile(
    r"^#SURROGATE depth=(\d+) width=(\d+) tags=([A-Za-z0-9_,-]*)$"
)
_DESCRIPTOR_PREFIX = "#SURROGATE"

SURROGATE_BONUS_TAGS = frozenset({"attn", "se", "dwconv", "mlp"})


class SurrogateEvaluator:
    """Closed-form stand-in evaluator driven by a descriptor comment.

    Sources declare ``#SURROGATE depth=<int> width=<int> tags=<a,b,...>`` on
    any line; the first such line wins. Costs and accuracy are pure
    functions of (depth, width, tags), so runs are exactly reproducible:

        params  = depth * width^2 * 64
        flops   = params * 1024
        val_acc = min(99, 100 * (1 - exp(-depth*width/256)) * (1 + 0.01*b))

    where b counts tags inside the bonus set. depth >= 2 stands in for the
    multi-layer validity rule; shallower descriptors fail compilation.
    """

    def _parse(self, source: str) -> tuple[int, int, list[str]]:
        for line in source.split("\n"):
            line = line.strip()
            if not line.startswith(_DESCRIPTOR_PREFIX):
                continue
            m = _DESCRIPTOR_RE.match(line)
            if not m:
                raise EvaluationError(f"malformed surrogate descriptor: {line!r}")
            depth, width = int(m.group(1)), int(m.group(2))
            tags = [t for t in m.group(3).split(",") if t]
            if depth < 2:
                raise EvaluationError("depth must be >= 2 (multi-layer rule)")
            if width < 1:
                raise EvaluationError("width must be >= 1")
            return depth, width, tags
        raise EvaluationError("missing surrogate descriptor")

    def check_compile(self, source: str) -> tuple[bool, str | None]:
        try:
            self._parse(source)
        except EvaluationError as exc:
            return False, str(exc)
        return True, None

    def measure_budgets(self, source: str) -> tuple[float, ...]:
        depth, width, _ = self._parse(source)
        params = depth * width * width * 64
        return (float(params), float(params * 1024))

    def train_eval(self, source: str) -> EvaluationResult:
        try:
            depth, width, tags = self._parse(source)
        except EvaluationError as exc:
            return EvaluationResult.fail(str(exc))
        bonus = len(set(tags) & SURROGATE_BONUS_TAGS)
        val = min(
            99.0,
            100.0 * (1.0 - math.exp(-(depth * width) / 256.0)) * (1.0 + 0.01 * bonus),
        )
        return EvaluationResult.ok(
            val_accuracy=val,
            test_accuracy=val - 0.3,
            budgets=self.measure_budgets(source),
        )


# --- structural judge ---


def _squash_ws(text: str) -> str:
    return "".join(text.split())


def judge_structure(parent_source: str, child_source: str, gateway, stream: str) -> bool:
    """LLM verdict on whether the child is a real architectural change.

    An unparsable verdict always fails the candidate: explicitly when the
    child is the parent modulo whitespace, conservatively otherwise.
    """
    user = templates.render(
        templates.load("structural-verify"),
        {"sample_model_code": child_source, "parent_model_code": parent_source},
    )
    response = gateway.complete(stream, None, user)
    try:
        payload = parse_tag_response(response)
    except TagParseError:
        payload = ""
    if payload.startswith("yes"):
        return True
    if payload.startswith("no"):
        return False
    if _squash_ws(child_source) == _squash_ws(parent_source):
        logger.info("structural verdict unparsable; child identical to parent")
    else:
        logger.info("structural verdict unparsable; failing conservatively")
    return False


# --- sandbox worker bridge ---


class _WorkerProc:
    """One worker child process plus its request bookkeeping."""

    def __init__(self, cmd: list[str]):
        self.cmd = cmd
        self.proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self.next_id = 0

    def request(self, payload: dict) -> dict:
        assert self.proc.stdin and self.proc.stdout
        req_id = f"r{self.next_id}"
        self.next_id += 1
        line = json.dumps({"id": req_id, **payload}, ensure_ascii=False)
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        while True:
            out = self.proc.stdout.readline()
            if not out:
                raise EvaluationError("worker closed its output stream")
            try:
                resp = json.loads(out)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"worker wrote a non-JSON line: {exc}")
            if resp.get("id") == req_id:
                return resp
            # stale response from a restarted request; skip it

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class SandboxEvaluator:
    """Bridges evaluation calls to a pool of worker processes.

    The worker command is launched with the worker config appended as a
    single JSON argument. A worker that dies is restarted and the request
    retried once before the error surfaces.
    """

    def __init__(self, cmd: list[str], worker_config: dict, procs: int = 1):
        if not cmd:
            raise ValueError("sandbox worker command is empty")
        self._cmd = list(cmd) + [json.dumps(worker_config, ensure_ascii=False)]
        self._pool: "queue.Queue[_WorkerProc]" = queue.Queue()
        self._lock = threading.Lock()
        self._spawned = 0
        self._max_procs = max(1, procs)

    def _acquire(self) -> _WorkerProc:
        try:
            return self._pool.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            if self._spawned < self._max_procs:
                self._spawned += 1
                return _WorkerProc(self._cmd)
        return self._pool.get()

    def _release(self, worker: _WorkerProc) -> None:
        self._pool.put(worker)

    def _call(self, payload: dict) -> dict:
        worker = self._acquire()
        try:
            try:
                resp = worker.request(payload)
            except EvaluationError:
                worker.close()
                worker = _WorkerProc(self._cmd)
                resp = worker.request(payload)
            return resp
        finally:
            if worker.alive():
                self._release(worker)
            else:
                worker.close()
                with self._lock:
                    self._spawned -= 1

    def check_compile(self, source: str) -> tuple[bool, str | None]:
        resp = self._call({"cmd": "compile", "source": source})
        if resp.get("ok"):
            return True, None
        return False, str(resp.get("error", "unknown compile failure"))

    def measure_budgets(self, source: str) -> tuple[float, ...]:
        resp = self._call({"cmd": "budget", "source": source})
        if not resp.get("ok"):
            raise EvaluationError(str(resp.get("error", "budget measurement failed")))
        return (float(resp["params"]), float(resp["flops"]))

    def train_eval(self, source: str) -> EvaluationResult:
        resp = self._call({"cmd": "train", "source": source})
        if not resp.get("ok"):
            return EvaluationResult.fail(str(resp.get("error", "training failed")))
        return EvaluationResult.ok(
            val_accuracy=float(resp["val_acc"]),
            test_accuracy=float(resp.get("test_acc", resp["val_acc"])),
            budgets=(float(resp["params"]), float(resp["flops"])),
        )

    def close(self) -> None:
        while True:
            try:
                self._pool.get_nowait().close()
            except queue.Empty:
                break
