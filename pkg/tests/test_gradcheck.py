import numpy as np
import pytest

from qstar import tensor as tn
from qstar.gradcheck import grad_check, grad_check_parameters
from qstar.gradsuite import ZERO_ATOL, run_gradient_suite
from qstar.tensor import Tensor


def broken_square(x: Tensor) -> Tensor:
    """x² with a backward pass that forgets the factor 2."""

    def bw(g):
        tn._accum(x, g * x.data)

    return tn._make(x.data**2, (x,), bw, "broken_square")


def test_detects_a_wrong_gradient():
    rep = grad_check(lambda x: tn.sum(broken_square(x)), [np.array([0.5, -1.2, 2.0])], op_name="broken")
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(0.5, abs=1e-6)
    assert rep.worst_input.startswith("arg0")
    assert str(rep).startswith("FAIL broken")


def test_detects_a_missing_gradient():
    def dropped(x):
        return tn._make(x.data * 3, (x,), lambda g: None, "dropped")

    assert not grad_check(lambda x: tn.sum(dropped(x)), [np.ones(2)]).passed


def test_passes_on_a_correct_composite():
    rng = np.random.default_rng(0)
    rep = grad_check(
        lambda x, w: tn.sum(tn.tanh(tn.matmul(x, w))),
        {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((4, 2))},
        op_name="tanh_matmul",
    )
    assert rep.passed and rep.checked == 20


def test_non_scalar_output_rejected():
    with pytest.raises(ValueError):
        grad_check(lambda x: x, [np.ones(3)])


def test_parameter_check_restores_values_and_honours_skip():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([0.5]), requires_grad=True)
    before = w.data.copy()
    rep = grad_check_parameters(lambda: tn.sum(tn.mul(w, w)), [("w", w), ("b", b)], skip=lambda n: n == "b")
    assert rep.passed and rep.checked == 2
    np.testing.assert_array_equal(w.data, before)


@pytest.mark.slow
def test_gradient_suite_one_seed():
    reports = run_gradient_suite(1)
    names = {r.op_name for r in reports}
    assert {"self_attention", "cross_attention", "ffn", "conv_block", "frequency_attention", "qstar_forward_to_loss"} <= names
    for r in reports:
        assert r.passed, str(r)
    zero = [r for r in reports if hasattr(r, "max_abs")]
    assert zero and all(r.atol == ZERO_ATOL for r in zero)
