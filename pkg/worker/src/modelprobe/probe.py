"""Compile, budget and smoke-train probes for generated PyTorch model sources.

Each probe loads the candidate source into a throwaway namespace, picks up
its ``Network`` class and answers one protocol request. Failures raised by
candidate code are left to the caller, which formats the full traceback.
"""

from __future__ import annotations

import contextlib
import io
import signal

import torch
from torch import nn
from torch.nn import functional as F

from .config import WorkerConfig


class ProbeError(RuntimeError):
    """Contract failure with a message that needs no traceback."""


class DeadlineExceeded(BaseException):
    # BaseException so a candidate's blanket `except Exception` cannot eat it.
    pass


@contextlib.contextmanager
def request_deadline(seconds: float):
    """Abort the block with DeadlineExceeded after `seconds` of wall time.

    SIGALRM based, so it only works in the main thread; the interval refires
    in case candidate code swallows the first alarm mid-exception.
    """

    def _alarm(signum, frame):
        raise DeadlineExceeded()

    previous = signal.signal(signal.SIGALRM, _alarm)
    signal.setitimer(signal.ITIMER_REAL, seconds, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, previous)


def load_network(source: str, cfg: WorkerConfig) -> nn.Module:
    """Exec the source in an isolated namespace and instantiate its Network."""
    namespace: dict = {"__name__": "candidate"}
    # Candidate prints must not leak into the protocol stream.
    with contextlib.redirect_stdout(io.StringIO()):
        exec(compile(source, "<candidate>", "exec"), namespace)
        cls = namespace.get("Network")
        if cls is None:
            raise ProbeError("source defines no Network class")
        if not (isinstance(cls, type) and issubclass(cls, nn.Module)):
            raise ProbeError("Network is not a torch.nn.Module subclass")
        model = cls()
    return model.to(torch.device(cfg.device))


def _dummy_batch(cfg: WorkerConfig, batch: int) -> torch.Tensor:
    return torch.randn(
        batch, cfg.channels, cfg.resolution, cfg.resolution,
        device=torch.device(cfg.device),
    )


def handle_compile(source: str, cfg: WorkerConfig) -> dict:
    """One forward and one backward pass on a dummy batch.

    Batch size 2, train mode: catches batch-dependent breakage such as
    normalization over a single sample.
    """
    torch.manual_seed(cfg.seed)
    model = load_network(source, cfg)
    model.train()
    with contextlib.redirect_stdout(io.StringIO()):
        out = model(_dummy_batch(cfg, batch=2))
        out.sum().backward()
    return {}


def trainable_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def measure_flops(model: nn.Module, cfg: WorkerConfig) -> int:
    """FLOPs for one sample at the configured resolution.

    Counted as multiply-accumulates x 2 via forward hooks on Conv2d and
    Linear modules; normalization, activations and pooling are ignored.
    """
    macs = 0

    def conv_hook(mod: nn.Conv2d, args, output) -> None:
        nonlocal macs
        kh, kw = mod.kernel_size
        macs += output.numel() * (mod.in_channels // mod.groups) * kh * kw

    def linear_hook(mod: nn.Linear, args, output) -> None:
        nonlocal macs
        macs += output.numel() * mod.in_features

    handles = []
    for mod in model.modules():
        if isinstance(mod, nn.Conv2d):
            handles.append(mod.register_forward_hook(conv_hook))
        elif isinstance(mod, nn.Linear):
            handles.append(mod.register_forward_hook(linear_hook))
    model.eval()
    try:
        with torch.no_grad(), contextlib.redirect_stdout(io.StringIO()):
            model(_dummy_batch(cfg, batch=1))
    finally:
        for handle in handles:
            handle.remove()
    return 2 * macs


def handle_budget(source: str, cfg: WorkerConfig) -> dict:
    torch.manual_seed(cfg.seed)
    model = load_network(source, cfg)
    return {"params": trainable_params(model), "flops": measure_flops(model, cfg)}


# Desk-scale synthetic split sizes; labels come from a fixed random linear
# teacher so an epoch of training has signal to latch onto.
_TRAIN_N = 128
_VAL_N = 64
_TEST_N = 64


def _synthetic_splits(cfg: WorkerConfig):
    gen = torch.Generator().manual_seed(cfg.seed)
    flat = cfg.channels * cfg.resolution * cfg.resolution
    teacher = torch.randn(cfg.classes, flat, generator=gen)

    def split(n: int):
        x = torch.randn(n, cfg.channels, cfg.resolution, cfg.resolution, generator=gen)
        y = (x.flatten(1) @ teacher.t()).argmax(1)
        device = torch.device(cfg.device)
        return x.to(device), y.to(device)

    return split(_TRAIN_N), split(_VAL_N), split(_TEST_N)


def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    model.eval()
    hits = 0
    with torch.no_grad(), contextlib.redirect_stdout(io.StringIO()):
        for i in range(0, len(x), batch):
            pred = model(x[i : i + batch]).argmax(1)
            hits += int((pred == y[i : i + batch]).sum())
    return round(100.0 * hits / len(x), 4)


def handle_train(source: str, cfg: WorkerConfig) -> dict:
    """Train for the configured epochs and report accuracies plus budgets.

    epochs = 0 skips training and scores the freshly initialized model, so
    a 10-class run lands near chance.
    """
    if cfg.dataset != "synthetic":
        raise ProbeError(
            f"unknown dataset {cfg.dataset!r}; this worker only ships 'synthetic'"
        )
    torch.manual_seed(cfg.seed)
    model = load_network(source, cfg)
    params = trainable_params(model)
    flops = measure_flops(model, cfg)
    (train_x, train_y), (val_x, val_y), (test_x, test_y) = _synthetic_splits(cfg)

    if cfg.epochs > 0:
        opt = torch.optim.SGD(model.parameters(), lr=0.05, momentum=0.9)
        for _ in range(cfg.epochs):
            model.train()
            for i in range(0, len(train_x), cfg.batch_size):
                with contextlib.redirect_stdout(io.StringIO()):
                    out = model(train_x[i : i + cfg.batch_size])
                    loss = F.cross_entropy(out, train_y[i : i + cfg.batch_size])
                if not torch.isfinite(loss):
                    raise ProbeError("training diverged")
                opt.zero_grad()
                loss.backward()
                opt.step()

    return {
        "params": params,
        "flops": flops,
        "val_acc": _accuracy(model, val_x, val_y, cfg.batch_size),
        "test_acc": _accuracy(model, test_x, test_y, cfg.batch_size),
    }
