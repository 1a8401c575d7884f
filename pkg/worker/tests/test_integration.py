"""Round trip through the search engine's sandbox bridge, when it is installed."""

import sys

import pytest

from conftest import IMPORT_RAISES, SMALL_NET, SMALL_NET_FLOPS_32, SMALL_NET_PARAMS

evaluation = pytest.importorskip("archevo.evaluation")


@pytest.fixture(scope="module")
def bridge():
    ev = evaluation.SandboxEvaluator(
        [sys.executable, "-m", "modelprobe"],
        {"epochs": 0, "time_limit_s": 30.0},
        procs=1,
    )
    yield ev
    ev.close()


def test_bridge_compile_round_trip(bridge):
    okay, error = bridge.check_compile(SMALL_NET)
    assert okay is True
    assert error is None
    okay, error = bridge.check_compile(IMPORT_RAISES)
    assert okay is False
    assert "boom at import" in error


def test_bridge_budget_round_trip(bridge):
    params, flops = bridge.measure_budgets(SMALL_NET)
    assert params == float(SMALL_NET_PARAMS)
    assert flops == float(SMALL_NET_FLOPS_32)


def test_bridge_train_round_trip(bridge):
    result = bridge.train_eval(SMALL_NET)
    assert result.valid is True
    assert 0.0 <= result.val_accuracy <= 30.0
    assert result.budgets == (float(SMALL_NET_PARAMS), float(SMALL_NET_FLOPS_32))
