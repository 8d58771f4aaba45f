"""Dense float64 tensors with reverse-mode differentiation.

`Tensor` is `torch.Tensor` restricted to float64; the autograd graph torch
records during a forward pass is the tape. The helpers here add the shape
contracts and numerically safe primitives the rest of the package relies on.

Broadcast rule: two operands are compatible when their shapes are equal or
when the shape of one is a suffix of the other's (the shorter operand is
repeated along the leading axes). No other rank promotion happens.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

import torch

from src.common.errors import ContractError, DimensionError, describe_shape

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DTYPE = torch.float64
SOFTPLUS_LINEAR_THRESHOLD = 30.0

Tensor = torch.Tensor


def as_tensor(data, requires_grad: bool = False) -> Tensor:
    tensor = torch.as_tensor(data, dtype=DTYPE).clone()
    tensor.requires_grad_(requires_grad)
    return tensor


def check_broadcast(a: Tensor, b: Tensor) -> None:
    sa, sb = tuple(a.shape), tuple(b.shape)
    if sa == sb:
        return
    shorter, longer = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(shorter) == 0 or longer[len(longer) - len(shorter):] == shorter:
        return
    raise DimensionError(
        f"Shapes {describe_shape(sa)} and {describe_shape(sb)} are not broadcastable along leading axes"
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes of `a` are batch axes)."""
    if a.dim() < 2 or b.dim() != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(
            f"Cannot multiply {describe_shape(a.shape)} by {describe_shape(b.shape)}"
        )
    return a @ b


def softplus(x: Tensor) -> Tensor:
    # Both branches are evaluated by torch.where; the clamps keep the unused
    # branch finite so its (zero-weighted) gradient stays finite too.
    large = x + torch.log1p(torch.exp(-torch.clamp(x, min=SOFTPLUS_LINEAR_THRESHOLD)))
    small = torch.log1p(torch.exp(torch.clamp(x, max=SOFTPLUS_LINEAR_THRESHOLD)))
    return torch.where(x > SOFTPLUS_LINEAR_THRESHOLD, large, small)


def safe_exp(x: Tensor) -> Tensor:
    return torch.exp(torch.clamp(x, max=SOFTPLUS_LINEAR_THRESHOLD))


_UNARY: Dict[str, Callable[[Tensor], Tensor]] = {
    "sigmoid": torch.sigmoid,
    "tanh": torch.tanh,
    "relu": torch.relu,
    "exp": safe_exp,
    "log": torch.log,
    "square": torch.square,
    "softplus": softplus,
}

_BINARY: Dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": torch.add,
    "sub": torch.sub,
    "mul": torch.mul,
}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"Operation '{op}' takes a single operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"Operation '{op}' takes two operands")
        check_broadcast(a, b)
        return _BINARY[op](a, b)
    raise ContractError(f"Unknown elementwise operation: {op}")


def backward(root: Tensor, leaves: Sequence[Tensor] = ()) -> List[Tensor]:
    """Populate `.grad` of every leaf reachable from a scalar root.

    Leaves passed explicitly that the root does not depend on get a zero
    gradient. Returns the gradients of `leaves` in order.
    """
    if root.numel() != 1:
        raise ContractError(f"backward needs a scalar root, got shape {describe_shape(root.shape)}")
    if root.requires_grad:
        root.backward()
    else:
        logger.debug("Root is a constant; no gradients populated")
    grads = []
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = torch.zeros_like(leaf)
        grads.append(leaf.grad)
    return grads


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Largest |analytic − central difference| / max(1, |analytic|) over all inputs."""
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    if out.numel() != 1:
        raise ContractError("gradient_check needs a scalar-valued function")
    analytic = torch.autograd.grad(out, leaves, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for index, leaf in enumerate(leaves):
            grad = analytic[index] if analytic[index] is not None else torch.zeros_like(leaf)
            flat = leaf.view(-1)
            for k in range(flat.numel()):
                original = flat[k].item()
                flat[k] = original + h
                up = fn(*leaves).item()
                flat[k] = original - h
                down = fn(*leaves).item()
                flat[k] = original
                numeric = (up - down) / (2 * h)
                exact = grad.reshape(-1)[k].item()
                worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
    return worst
