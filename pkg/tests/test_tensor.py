import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from src.common.errors import ContractError, DimensionError
from src.tensor.autodiff import (
    DTYPE,
    as_tensor,
    backward,
    check_broadcast,
    elementwise,
    gradient_check,
    matmul,
    softplus,
)
from src.tensor.noise import NoiseStream, member_seeds


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ([[1, 0], [0, 1]], [[1, 2], [3, 4]], [[1, 2], [3, 4]]),
        ([[1, 2], [3, 4]], [[0, 0], [0, 0]], [[0, 0], [0, 0]]),
        ([[1, 2], [3, 4]], [[5], [6]], [[17], [39]]),
    ],
)
def test_matmul_examples(a, b, expected):
    assert torch.equal(matmul(as_tensor(a), as_tensor(b)), as_tensor(expected))


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as info:
        matmul(as_tensor([[1.0, 2.0, 3.0]]), as_tensor([[1.0], [2.0]]))
    assert "1×3" in str(info.value) and "2×1" in str(info.value)


def test_matmul_gradient_rule():
    a = as_tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = as_tensor([[5.0], [6.0]], requires_grad=True)
    backward(matmul(a, b).sum())
    assert torch.equal(a.grad, as_tensor([[5.0, 6.0], [5.0, 6.0]]))
    assert torch.equal(b.grad, as_tensor([[4.0], [6.0]]))


def test_softplus_values():
    assert softplus(as_tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert softplus(as_tensor(100.0)).item() == pytest.approx(100.0, abs=1e-12)
    tiny = softplus(as_tensor(-100.0)).item()
    assert tiny > 0
    assert tiny == pytest.approx(3.720075976020836e-44, rel=1e-9)


def test_softplus_gradient_finite_at_extremes():
    x = as_tensor([-200.0, 0.0, 200.0], requires_grad=True)
    backward(softplus(x).sum())
    assert torch.all(torch.isfinite(x.grad))
    assert x.grad[2].item() == pytest.approx(1.0)
    assert x.grad[1].item() == pytest.approx(0.5)


@pytest.mark.parametrize(
    "op, value, expected",
    [("relu", -1.5, 0.0), ("sigmoid", 0.0, 0.5), ("tanh", 1.0, 0.761594155955765)],
)
def test_unary_examples(op, value, expected):
    assert elementwise(op, as_tensor(value)).item() == pytest.approx(expected, abs=1e-12)


def test_broadcast_rule_accepts_suffix_and_rejects_others():
    check_broadcast(torch.zeros(4, 3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
    out = elementwise("add", torch.ones(2, 3, dtype=DTYPE), as_tensor([1.0, 2.0, 3.0]))
    assert torch.equal(out[1], as_tensor([2.0, 3.0, 4.0]))
    with pytest.raises(DimensionError):
        elementwise("mul", torch.ones(2, 3, dtype=DTYPE), torch.ones(2, dtype=DTYPE))


def test_elementwise_operand_contracts():
    with pytest.raises(ContractError):
        elementwise("add", as_tensor(1.0))
    with pytest.raises(ContractError):
        elementwise("cube", as_tensor(1.0))


def test_backward_quadratic():
    w = as_tensor([1.0, 2.0, 3.0], requires_grad=True)
    (grad,) = backward((w * w).sum(), [w])
    assert torch.equal(grad, as_tensor([2.0, 4.0, 6.0]))


def test_backward_constant_root_populates_nothing():
    c = as_tensor(3.0)
    unrelated = as_tensor([1.0], requires_grad=True)
    backward(c)
    assert unrelated.grad is None


def test_backward_unreachable_leaf_gets_zero():
    w = as_tensor([1.0, 2.0], requires_grad=True)
    v = as_tensor([5.0], requires_grad=True)
    _, grad_v = backward(w.sum(), [w, v])
    assert torch.equal(grad_v, torch.zeros(1, dtype=DTYPE))


def test_backward_needs_scalar_root():
    with pytest.raises(ContractError):
        backward(as_tensor([1.0, 2.0], requires_grad=True) * 2)


def test_backward_is_linear():
    x = as_tensor([0.3, -1.2, 0.7], requires_grad=True)
    f = lambda t: (torch.tanh(t) * t).sum()
    g = lambda t: softplus(t).sum()
    (gf,) = torch.autograd.grad(f(x), x)
    (gg,) = torch.autograd.grad(g(x), x)
    (combined,) = torch.autograd.grad(2.5 * f(x) - 0.5 * g(x), x)
    assert torch.allclose(combined, 2.5 * gf - 0.5 * gg, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from(["sigmoid", "tanh", "exp", "square", "softplus"]))
def test_unary_primitives_pass_gradient_check(seed, op):
    generator = torch.Generator().manual_seed(seed)
    x = torch.rand(3, 4, generator=generator, dtype=DTYPE) * 4 - 2
    assert gradient_check(lambda t: elementwise(op, t).sum(), [x]) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_binary_primitives_and_matmul_pass_gradient_check(seed):
    generator = torch.Generator().manual_seed(seed)
    a = torch.rand(3, 4, generator=generator, dtype=DTYPE) * 4 - 2
    b = torch.rand(4, 2, generator=generator, dtype=DTYPE) * 4 - 2
    c = torch.rand(4, generator=generator, dtype=DTYPE) * 4 - 2

    def composite(a, b, c):
        z = elementwise("mul", elementwise("sub", a, c), elementwise("add", a, c))
        return elementwise("tanh", matmul(z, b)).sum()

    assert gradient_check(composite, [a, b, c]) < 1e-6


def test_log_gradient_check_on_positive_inputs():
    x = torch.rand(5, generator=torch.Generator().manual_seed(3), dtype=DTYPE) + 0.5
    assert gradient_check(lambda t: elementwise("log", t).sum(), [x]) < 1e-6


def test_noise_stream_is_seeded_and_counts_draws():
    first = NoiseStream(seed=11).standard_normal((3,), key="w")
    stream = NoiseStream(seed=11)
    assert torch.equal(stream.standard_normal((3,), key="w"), first)
    stream.keep_mask((4,), 0.5, key="d")
    assert stream.draws == {"w": 1, "d": 1}


def test_member_seeds_are_distinct_and_reproducible():
    seeds = member_seeds(7, 11)
    assert len(set(seeds)) == 11
    assert seeds == member_seeds(7, 11)
