import json
import select
import subprocess
import sys

import pytest

DEFAULT_CONFIG = {
    "dataset": "synthetic",
    "resolution": 32,
    "epochs": 0,
    "batch_size": 32,
    "device": "cpu",
    "time_limit_s": 30.0,
    "seed": 0,
}

SMALL_NET = '''
import torch
from torch import nn

class Network(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 8, 3, padding=1)
        self.bn = nn.BatchNorm2d(8)
        self.fc = nn.Linear(8, 10)

    def forward(self, x):
        x = torch.relu(self.bn(self.conv(x)))
        x = x.mean(dim=(2, 3))
        return self.fc(x)
'''

# conv 8*3*3*3+8 = 224, bn 8+8 = 16, fc 8*10+10 = 90
SMALL_NET_PARAMS = 330
# conv MACs 8*32*32*27 = 221184, fc MACs 10*8 = 80; flops = 2 * 221264
SMALL_NET_FLOPS_32 = 442528

FULLY_CONV = '''
import torch
from torch import nn

class Network(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 10, 1)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = self.conv2(x)
        return x.mean(dim=(2, 3))
'''

SHAPE_MISMATCH = '''
from torch import nn

class Network(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = nn.Linear(10, 10)

    def forward(self, x):
        return self.fc(x.flatten(1))
'''

IMPORT_RAISES = 'raise RuntimeError("boom at import")\n'

NO_NETWORK = "def network():\n    pass\n"

NOT_A_MODULE = "Network = 42\n"

NAN_NET = '''
from torch import nn

class Network(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = nn.Linear(3072, 10)

    def forward(self, x):
        return self.fc(x.flatten(1)) * float("nan")
'''

SPIN_FOREVER = '''
from torch import nn

class Network(nn.Module):
    def forward(self, x):
        while True:
            pass
'''

PRINTY_NET = '''
print("hello from import")
import torch
from torch import nn

class Network(nn.Module):
    def __init__(self):
        super().__init__()
        print("hello from init")
        self.fc = nn.Linear(3072, 10)

    def forward(self, x):
        print("hello from forward")
        return self.fc(x.flatten(1))
'''


class WorkerHandle:
    """Drives one worker child over the line-delimited JSON protocol."""

    def __init__(self, config: dict):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "modelprobe", json.dumps(config)],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send(self, line: str) -> None:
        assert self.proc.stdin
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def read_response(self, deadline_s: float = 60.0) -> dict:
        assert self.proc.stdout
        ready, _, _ = select.select([self.proc.stdout], [], [], deadline_s)
        if not ready:
            raise TimeoutError(f"no worker response within {deadline_s}s")
        line = self.proc.stdout.readline()
        if not line:
            raise EOFError("worker closed stdout")
        return json.loads(line)

    def ask(self, payload: dict, deadline_s: float = 60.0) -> dict:
        self.send(json.dumps(payload))
        return self.read_response(deadline_s)

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                assert self.proc.stdin
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        if self.proc.stdout:
            self.proc.stdout.close()
        if self.proc.stderr:
            self.proc.stderr.close()


@pytest.fixture(scope="module")
def worker():
    handle = WorkerHandle(DEFAULT_CONFIG)
    yield handle
    handle.close()
