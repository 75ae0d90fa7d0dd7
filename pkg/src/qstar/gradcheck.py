"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, backward

FD_STEP = 1e-5
REL_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    worst_input: str = ""
    checked: int = 0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at {self.worst_input}" if self.worst_input else ""
        return f"{status} {self.op_name}: max rel err {self.max_rel_error:.3e}{where} (tol {self.tolerance:.0e}, {self.checked} coords)"


def _as_named(inputs) -> dict[str, np.ndarray]:
    if isinstance(inputs, Mapping):
        return {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    return {f"arg{i}": np.array(v, dtype=np.float64) for i, v in enumerate(inputs)}


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray] | Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    *,
    op_name: str = "closure",
    h: float = FD_STEP,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``fn`` receives one :class:`Tensor` per input (keyword arguments when
    ``inputs`` is a mapping) and must return a scalar. The error for each
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. ``max_coords`` limits
    the coordinates probed per input to a seeded random subset.
    """
    named = _as_named(inputs)
    keyword = isinstance(inputs, Mapping)

    def call(arrays: dict[str, np.ndarray], requires_grad: bool):
        ts = {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}
        out = fn(**ts) if keyword else fn(*ts.values())
        return out, ts

    loss, tensors = call(named, True)
    if loss.data.size != 1:
        raise ValueError(f"grad_check: {op_name} must return a scalar, got {loss.shape}")
    backward(loss)
    rng = np.random.default_rng(seed)
    worst, worst_at, checked = 0.0, "", 0
    for key, base in named.items():
        analytic = tensors[key].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        if not np.all(np.isfinite(analytic)):
            return GradCheckReport(op_name, float("inf"), tolerance, False, f"{key} (non-finite)", checked)
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))
        for flat in coords:
            idx = np.unravel_index(flat, base.shape)
            plus = dict(named)
            minus = dict(named)
            plus[key] = base.copy()
            minus[key] = base.copy()
            plus[key][idx] += h
            minus[key][idx] -= h
            fp = call(plus, False)[0].item()
            fm = call(minus, False)[0].item()
            numeric = (fp - fm) / (2 * h)
            a = float(analytic[idx])
            if not np.isfinite(numeric):
                return GradCheckReport(op_name, float("inf"), tolerance, False, f"{key}{[int(i) for i in idx]} (non-finite)", checked)
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{key}{[int(i) for i in idx]}"
    return GradCheckReport(op_name, worst, tolerance, worst <= tolerance, worst_at, checked)


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    tolerance: float = 1e-4,
    *,
    op_name: str = "model",
    h: float = FD_STEP,
    max_coords: int | None = None,
    seed: int = 0,
    skip: Callable[[str], bool] | None = None,
) -> GradCheckReport:
    """Like :func:`grad_check` but perturbs existing parameter tensors in place.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Parameters for which ``skip(name)`` is true are left out of the check.
    """
    params = [(n, t) for n, t in params if skip is None or not skip(n)]
    for _, t in params:
        t.grad = None
    loss = loss_fn()
    if loss.data.size != 1:
        raise ValueError(f"grad_check: {op_name} must return a scalar, got {loss.shape}")
    backward(loss)
    grads = {n: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for n, t in params}
    rng = np.random.default_rng(seed)
    worst, worst_at, checked = 0.0, "", 0
    for name, t in params:
        analytic = grads[name]
        if not np.all(np.isfinite(analytic)):
            return GradCheckReport(op_name, float("inf"), tolerance, False, f"{name} (non-finite)", checked)
        coords = np.arange(t.data.size)
        if max_coords is not None and t.data.size > max_coords:
            coords = np.sort(rng.choice(t.data.size, size=max_coords, replace=False))
        for flat in coords:
            idx = np.unravel_index(flat, t.data.shape)
            old = t.data[idx]
            t.data[idx] = old + h
            fp = loss_fn().item()
            t.data[idx] = old - h
            fm = loss_fn().item()
            t.data[idx] = old
            numeric = (fp - fm) / (2 * h)
            a = float(analytic[idx])
            if not np.isfinite(numeric):
                return GradCheckReport(op_name, float("inf"), tolerance, False, f"{name}{[int(i) for i in idx]} (non-finite)", checked)
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}{[int(i) for i in idx]}"
    return GradCheckReport(op_name, worst, tolerance, worst <= tolerance, worst_at, checked)
