"""Line-delimited JSON request loop over stdio.

One JSON object per stdin line, one JSON response line per request, ids
echoed verbatim. A malformed line gets an error response with a null id;
nothing a request contains may kill the loop. stdout carries protocol
lines only, diagnostics go to stderr.
"""

from __future__ import annotations

import contextlib
import io
import json
import logging
import sys
import traceback
from typing import TextIO

import torch

from .config import ConfigError, WorkerConfig, parse_config
from .probe import (
    DeadlineExceeded,
    ProbeError,
    handle_budget,
    handle_compile,
    handle_train,
    request_deadline,
)

logger = logging.getLogger(__name__)

_HANDLERS = {
    "compile": handle_compile,
    "budget": handle_budget,
    "train": handle_train,
}


def respond(line: str, cfg: WorkerConfig) -> dict:
    """Answer one request line; every failure mode maps to an error response."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "ok": False, "error": f"malformed request line: {exc}"}
    if not isinstance(req, dict):
        return {"id": None, "ok": False, "error": "request must be a JSON object"}
    req_id = req.get("id")
    cmd = req.get("cmd")
    handler = _HANDLERS.get(cmd)
    if handler is None:
        return {"id": req_id, "ok": False, "error": f"unknown cmd {cmd!r}"}
    source = req.get("source")
    if not isinstance(source, str):
        return {"id": req_id, "ok": False, "error": "source must be a string"}
    try:
        with request_deadline(cfg.time_limit_s):
            fields = handler(source, cfg)
    except DeadlineExceeded:
        logger.warning("request %r hit the %.1fs deadline", req_id, cfg.time_limit_s)
        return {"id": req_id, "ok": False, "error": "worker timeout"}
    except ProbeError as exc:
        return {"id": req_id, "ok": False, "error": str(exc)}
    except Exception:
        return {"id": req_id, "ok": False, "error": traceback.format_exc()}
    return {"id": req_id, "ok": True, **fields}


def serve(cfg: WorkerConfig, stdin: TextIO, stdout: TextIO) -> None:
    """Single-threaded request loop; returns on EOF."""
    for line in stdin:
        if not line.strip():
            continue
        # Shield the protocol stream from stray prints in candidate code.
        with contextlib.redirect_stdout(io.StringIO()):
            response = respond(line, cfg)
        stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if len(args) != 1:
        print("usage: modelprobe '<config-json>'", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(args[0])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    # Several workers may share one box; keep each one single-threaded.
    torch.set_num_threads(1)
    logger.info("serving with config %s", cfg)
    serve(cfg, sys.stdin, sys.stdout)
    return 0
