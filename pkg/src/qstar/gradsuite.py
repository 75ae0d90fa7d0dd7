"""Gradient checks over every block and the assembled model at toy sizes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .config import RunConfig
from .gradcheck import grad_check_parameters
from .model import Batch, ModelParams, QStar
from .nn import (
    AttentionParams,
    ConvBlockParams,
    FFNParams,
    ParamFactory,
    conv_block,
    cross_attention,
    ffn,
    named_parameters,
    self_attention,
)
from .qcr import ASPECTS, PromptBank, QcrParams, cross_entropy_loss
from .qgmc import QgmcParams
from .stfi import StiParams, TfiParams, frequency_attention
from .tensor import Tensor

# toy sizes for the checks
TOY = dict(t=4, m_prime=2, n=3, f=4, d=8, heads=2, v=4)

# Some true gradients are identically zero: conv biases feeding batch
# normalisation, and the band-constant question term of the band scores
# (its weight and, inside band attention alone, the word features). A
# relative error is meaningless there, so they are checked for absolute
# smallness instead.
ZERO_ATOL = 1e-8


class _Features(dict):
    """Feature tensors readable as attributes, like a :class:`Batch`."""

    __getattr__ = dict.__getitem__


@dataclass(frozen=True)
class ZeroCheck:
    op_name: str
    max_abs: float
    atol: float
    passed: bool

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op_name}: structurally zero gradients, max |grad| {self.max_abs:.2e} (atol {self.atol:.0e})"


def _inputs(rng, **shapes) -> dict[str, Tensor]:
    return {k: Tensor(rng.standard_normal(s), requires_grad=True) for k, s in shapes.items()}


def _projector(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _scalar(out: Tensor, proj: np.ndarray) -> Tensor:
    return tn.sum(tn.mul(out, Tensor(proj)))


def _check(name, loss_fn, params, inputs, seed, max_coords, zero_names=()):
    pairs = list(params) + list(inputs.items())
    rep = grad_check_parameters(
        loss_fn, pairs, op_name=name, seed=seed, max_coords=max_coords, skip=lambda n: n in zero_names
    )
    out = [rep]
    zeros = [(n, t) for n, t in pairs if n in zero_names]
    if zeros:
        out.append(_zero_check(name, loss_fn, zeros))
    return out


def _zero_check(name, loss_fn, zeros, h: float = 1e-5) -> ZeroCheck:
    for _, t in zeros:
        t.grad = None
    tn.backward(loss_fn())
    worst = 0.0
    for _, t in zeros:
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        worst = max(worst, float(np.abs(g).max()))
        for flat in range(t.data.size):
            idx = np.unravel_index(flat, t.data.shape)
            old = t.data[idx]
            t.data[idx] = old + h
            fp = loss_fn().item()
            t.data[idx] = old - h
            fm = loss_fn().item()
            t.data[idx] = old
            worst = max(worst, abs(fp - fm) / (2 * h))
    return ZeroCheck(name, worst, ZERO_ATOL, worst <= ZERO_ATOL)


def toy_model(seed: int, batch: int = 3):
    """A QStar at toy sizes with random inputs and labels."""
    T, M, N, F, D, H, V = (TOY[k] for k in ("t", "m_prime", "n", "f", "d", "heads", "v"))
    pf = ParamFactory(seed)
    params = ModelParams(
        qgmc=QgmcParams.init(pf.child("qgmc"), D, H),
        sti=StiParams.init(pf.child("sti"), D, H),
        tfi=TfiParams.init(pf.child("tfi"), D, H),
        qcr=QcrParams.init(pf.child("qcr"), D, H, V),
    )
    rng = np.random.default_rng(seed)
    bank = PromptBank(ASPECTS, Tensor(rng.standard_normal((len(ASPECTS), D)) / np.sqrt(D)))
    model = QStar(RunConfig(), params, bank)
    data = Batch(
        F_v=rng.standard_normal((batch, T, D)),
        F_p=rng.standard_normal((batch, T, M, D)),
        F_a=rng.standard_normal((batch, T, D)),
        F_ast=rng.standard_normal((batch, T, F, D)),
        F_w=rng.standard_normal((batch, N, D)),
        F_sentence=rng.standard_normal((batch, D)),
    )
    labels = rng.integers(0, V, size=batch)
    return model, data, labels


def run_gradient_suite(seed: int, max_coords: int = 10, model_coords: int = 5) -> list:
    """Gradient checks for SA, CA, FFN, ConvBlock, band attention and the full model."""
    T, N, F, D, H = (TOY[k] for k in ("t", "n", "f", "d", "heads"))
    rng = np.random.default_rng([seed, 7])
    pf = ParamFactory(seed, "check.")
    reports = []

    p = AttentionParams.init(pf.child("sa"), D, H)
    x = _inputs(rng, X=(T, D))
    proj = _projector(rng, (T, D))
    reports += _check("self_attention", lambda: _scalar(self_attention(x["X"], p), proj), named_parameters(p), x, seed, max_coords)

    p = AttentionParams.init(pf.child("ca"), D, H)
    x = _inputs(rng, Q=(N, D), KV=(T, D))
    proj = _projector(rng, (N, D))
    reports += _check("cross_attention", lambda: _scalar(cross_attention(x["Q"], x["KV"], p), proj), named_parameters(p), x, seed, max_coords)

    p = FFNParams.init(pf.child("ffn"), D)
    x = _inputs(rng, X=(T, D))
    proj = _projector(rng, (T, D))
    reports += _check("ffn", lambda: _scalar(ffn(x["X"], p), proj), named_parameters(p), x, seed, max_coords)

    p = FFNParams.init(pf.child("ffn_fuse"), 2 * D, D)
    x = _inputs(rng, X=(T, 2 * D))
    reports += _check("ffn_2d_to_d", lambda: _scalar(ffn(x["X"], p), proj), named_parameters(p), x, seed, max_coords)

    p = ConvBlockParams.init(pf.child("conv"), D)
    x = _inputs(rng, X=(3, T, 2 * D))
    proj = _projector(rng, (3, T, D))
    reports += _check(
        "conv_block", lambda: _scalar(conv_block(x["X"], p), proj), named_parameters(p), x, seed, max_coords, ("b1", "b2")
    )

    p = TfiParams.init(pf.child("tfi"), D, H)
    x = _inputs(rng, F_ast=(T, F, D), F_w=(N, D))
    proj_a, proj_f = _projector(rng, (F,)), _projector(rng, (T, F, D))

    def band_loss():
        a_f, weighted = frequency_attention(x["F_ast"], x["F_w"], p)
        return tn.add(_scalar(a_f, proj_a), _scalar(weighted, proj_f))

    reports += _check("frequency_attention", band_loss, named_parameters(p), x, seed, max_coords, ("w1", "F_w"))

    model, data, labels = toy_model(seed)
    model.train()
    feats = _Features({k: Tensor(getattr(data, k), requires_grad=True) for k in ("F_v", "F_p", "F_a", "F_ast", "F_w", "F_sentence")})

    def model_loss():
        dist = model.forward_tensors(feats.F_v, feats.F_p, feats.F_a, feats, feats.F_w, feats.F_sentence)
        return cross_entropy_loss(dist, labels)

    reports += _check(
        "qstar_forward_to_loss", model_loss, model.named_parameters(), dict(feats), seed, model_coords,
        ("tfi.conv.b1", "tfi.conv.b2", "tfi.w1"),
    )
    return reports
