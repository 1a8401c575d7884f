import pytest

from archevo.evaluation import (
    EvaluationError,
    EvaluationResult,
    SurrogateEvaluator,
    judge_structure,
)
from archevo.gateway import ScriptedGateway

from oracles import surrogate_flops, surrogate_params, surrogate_val


def src(depth, width, tags=""):
    return f"# candidate\n#SURROGATE depth={depth} width={width} tags={tags}\nclass Network: pass\n"


@pytest.fixture
def ev():
    return SurrogateEvaluator()


# --- hand-frozen values, recomputed independently in oracles.py ---


def test_budgets_base_model(ev):
    params, flops = ev.measure_budgets(src(2, 16))
    assert params == 32768.0 == surrogate_params(2, 16)
    assert flops == 33554432.0 == surrogate_flops(2, 16)


def test_val_accuracy_base_model(ev):
    res = ev.train_eval(src(2, 16))
    assert res.valid
    assert res.val_accuracy == pytest.approx(11.7503, abs=1e-3)
    assert res.val_accuracy == pytest.approx(surrogate_val(2, 16, 0), abs=1e-9)
    assert res.test_accuracy == pytest.approx(res.val_accuracy - 0.3, abs=1e-9)


def test_budget_guard_example_exceeds_cap(ev):
    # depth=6 width=64 lands over a 1.5e6 parameter cap
    params, flops = ev.measure_budgets(src(6, 64))
    assert params == 1572864.0 == surrogate_params(6, 64)
    assert params > 1.5e6
    assert flops == surrogate_flops(6, 64)


def test_bonus_tags_counted_once_and_filtered(ev):
    plain = ev.train_eval(src(4, 32)).val_accuracy
    tagged = ev.train_eval(src(4, 32, "attn,se,attn,junk")).val_accuracy
    assert tagged == pytest.approx(surrogate_val(4, 32, 2), abs=1e-9)
    assert tagged > plain


def test_val_accuracy_capped_at_99(ev):
    res = ev.train_eval(src(64, 512, "attn,se,dwconv,mlp"))
    assert res.val_accuracy == 99.0


def test_accuracy_monotone_in_depth_and_width(ev):
    widths = (8, 16, 32, 64)
    for width in widths:
        vals = [ev.train_eval(src(d, width)).val_accuracy for d in range(2, 9)]
        assert all(a < b for a, b in zip(vals, vals[1:]))
    for depth in range(2, 9):
        vals = [ev.train_eval(src(depth, w)).val_accuracy for w in widths]
        assert all(a < b for a, b in zip(vals, vals[1:]))


def test_params_coupling(ev):
    # doubling width quadruples params; doubling depth doubles them
    p0, _ = ev.measure_budgets(src(2, 16))
    assert ev.measure_budgets(src(2, 32))[0] == 4 * p0
    assert ev.measure_budgets(src(4, 16))[0] == 2 * p0


# --- descriptor handling ---


def test_missing_descriptor(ev):
    ok, err = ev.check_compile("class Network: pass\n")
    assert not ok and "missing" in err
    res = ev.train_eval("class Network: pass\n")
    assert not res.valid and "missing" in res.compile_error


def test_malformed_descriptor(ev):
    ok, err = ev.check_compile("#SURROGATE depth=two width=8 tags=\n")
    assert not ok and "malformed" in err


def test_shallow_descriptor_fails_multi_layer_rule(ev):
    ok, err = ev.check_compile(src(1, 16))
    assert not ok and "depth" in err
    ok, err = ev.check_compile(src(2, 0))
    assert not ok and "width" in err


def test_first_descriptor_wins(ev):
    source = src(2, 16) + "#SURROGATE depth=8 width=64 tags=\n"
    assert ev.measure_budgets(source)[0] == 32768.0


def test_measure_budgets_raises_on_bad_source(ev):
    with pytest.raises(EvaluationError):
        ev.measure_budgets("no descriptor")


# --- result invariants ---


def test_result_invariants():
    with pytest.raises(ValueError):
        EvaluationResult(valid=True)
    with pytest.raises(ValueError):
        EvaluationResult(valid=False)
    ok = EvaluationResult.ok(50.0, (1.0, 2.0))
    assert ok.valid and ok.compile_error is None
    bad = EvaluationResult.fail("boom")
    assert not bad.valid and bad.val_accuracy is None


# --- structural judge ---

PARENT = "class Network:\n    def forward(self, x):\n        return x\n"
CHILD = "class Network:\n    def forward(self, x):\n        return x + 1\n"


def _judge(response):
    gw = ScriptedGateway({("s", 0): response})
    return judge_structure(PARENT, CHILD, gw, "s")


def test_judge_yes_and_no():
    assert _judge("reasoning...\n##response## yes") is True
    assert _judge("reasoning...\n**response** no, only hyperparameters moved") is False
    assert _judge("##response## Yes, the topology changed") is True


def test_judge_unparsable_fails_conservatively():
    assert _judge("I cannot decide.") is False
    assert _judge("##response## maybe") is False


def test_judge_unparsable_identical_child():
    # whitespace-only differences count as identical
    gw = ScriptedGateway({("s", 0): "no marker"})
    padded = PARENT.replace("\n", "\n\n")
    assert judge_structure(PARENT, padded, gw, "s") is False


def test_judge_prompt_contains_both_sources():
    captured = {}

    class Spy:
        def complete(self, stream, system, user):
            captured["system"] = system
            captured["user"] = user
            return "##response## yes"

    assert judge_structure(PARENT, CHILD, Spy(), "s") is True
    assert captured["system"] is None
    assert PARENT in captured["user"]
    assert CHILD in captured["user"]
