"""Parameterised building blocks: SA / CA attention units, FFN and ConvBlock.

All blocks are pure functions of ``(input, params)``. Inputs carry any
number of leading batch axes; the last two axes are ``[tokens, features]``.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as tn
from .tensor import BatchNormState, ShapeError, Tensor


class ParamFactory:
    """Deterministic parameter initialiser.

    Each parameter draws from its own stream keyed by ``(seed, full name)``,
    so adding or dropping a module never perturbs the initial values of the
    others.
    """

    def __init__(self, seed: int, prefix: str = ""):
        self.seed = int(seed)
        self.prefix = prefix

    def child(self, name: str) -> "ParamFactory":
        return ParamFactory(self.seed, f"{self.prefix}{name}.")

    def _rng(self, name: str) -> np.random.Generator:
        key = zlib.crc32(f"{self.prefix}{name}".encode())
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = math.sqrt(6.0 / fan_in)  # He uniform
        return Tensor(self._rng(name).uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(self, shape: tuple[int, ...]) -> Tensor:
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(self, shape: tuple[int, ...]) -> Tensor:
        return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    heads: int = 4

    def __post_init__(self):
        d = self.w_q.shape[0]
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            if w.shape != (d, d):
                raise ShapeError(f"attention projections must all be {d}x{d}, got {w.shape}")
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"model width {d} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def init(cls, pf: ParamFactory, d: int, heads: int) -> "AttentionParams":
        return cls(
            pf.uniform("w_q", (d, d), d),
            pf.uniform("w_k", (d, d), d),
            pf.uniform("w_v", (d, d), d),
            pf.uniform("w_o", (d, d), d),
            pf.ones((d,)),
            pf.zeros((d,)),
            heads,
        )


@dataclass
class FFNParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor

    @classmethod
    def init(cls, pf: ParamFactory, d_in: int, d_out: int | None = None, d_ff: int | None = None) -> "FFNParams":
        d_out = d_in if d_out is None else d_out
        d_ff = 4 * d_out if d_ff is None else d_ff
        if d_ff < d_out:
            raise ShapeError(f"FFN hidden width {d_ff} must be at least the output width {d_out}")
        return cls(
            pf.uniform("w1", (d_in, d_ff), d_in),
            pf.zeros((d_ff,)),
            pf.uniform("w2", (d_ff, d_out), d_ff),
            pf.zeros((d_out,)),
            pf.ones((d_out,)),
            pf.zeros((d_out,)),
        )


@dataclass
class ConvBlockParams:
    w1: Tensor  # [D, 2D, 3]
    b1: Tensor
    bn1_gamma: Tensor
    bn1_beta: Tensor
    w2: Tensor  # [D, D, 3]
    b2: Tensor
    bn2_gamma: Tensor
    bn2_beta: Tensor
    bn1: BatchNormState
    bn2: BatchNormState

    @classmethod
    def init(cls, pf: ParamFactory, d: int, kernel: int = 3) -> "ConvBlockParams":
        return cls(
            pf.uniform("w1", (d, 2 * d, kernel), 2 * d * kernel),
            pf.zeros((d,)),
            pf.ones((d,)),
            pf.zeros((d,)),
            pf.uniform("w2", (d, d, kernel), d * kernel),
            pf.zeros((d,)),
            pf.ones((d,)),
            pf.zeros((d,)),
            BatchNormState.create(d),
            BatchNormState.create(d),
        )


# -- parameter traversal ------------------------------------------------------


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every learnable tensor inside ``obj``."""
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield prefix.rstrip("."), obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}{f.name}.")
    elif isinstance(obj, dict):
        for k in obj:
            yield from named_parameters(obj[k], f"{prefix}{k}.")


def batchnorm_states(obj) -> Iterator[BatchNormState]:
    if isinstance(obj, BatchNormState):
        yield obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from batchnorm_states(getattr(obj, f.name))
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from batchnorm_states(v)


def count_parameters(obj) -> int:
    return int(np.sum([t.data.size for _, t in named_parameters(obj)], dtype=np.int64))


# -- blocks ---------------------------------------------------------------------


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, L, d = x.shape
    x = tn.reshape(x, (*lead, L, heads, d // heads))
    return tn.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = tn.swapaxes(x, -2, -3)
    *lead, L, h, dh = x.shape
    return tn.reshape(x, (*lead, L, h * dh))


def _attend(q_in: Tensor, kv_in: Tensor, p: AttentionParams, keep: list | None) -> Tensor:
    d = p.dim
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise ShapeError(f"attention width mismatch: query {q_in.shape}, key/value {kv_in.shape}, model {d}")
    if q_in.shape[-2] < 1 or kv_in.shape[-2] < 1:
        raise ShapeError("attention needs at least one query and one key token")
    h = p.heads
    q = _split_heads(tn.linear(q_in, p.w_q), h)
    k = _split_heads(tn.linear(kv_in, p.w_k), h)
    v = _split_heads(tn.linear(kv_in, p.w_v), h)
    scores = tn.scale(tn.matmul(q, tn.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d // h))
    weights = tn.softmax(scores, axis=-1)
    if keep is not None:
        keep.append(weights.data)
    ctx = _merge_heads(tn.matmul(weights, v))
    return tn.layer_norm(tn.add(q_in, tn.linear(ctx, p.w_o)), p.ln_gamma, p.ln_beta)


def self_attention(X: Tensor, p: AttentionParams, weights_out: list | None = None) -> Tensor:
    """Multi-head self-attention with residual and post layer norm: ``LN(X + MHA(X, X))``.

    If ``weights_out`` is a list, the ``[..., heads, L, L]`` attention
    matrix is appended to it.
    """
    return _attend(X, X, p, weights_out)


def cross_attention(Q_in: Tensor, KV_in: Tensor, p: AttentionParams, weights_out: list | None = None) -> Tensor:
    """Queries from ``Q_in``, keys and values from ``KV_in``; ``LN(Q_in + MHA(Q_in, KV_in))``.

    Batch axes of the two inputs broadcast, e.g. ``[B, T, M, D]`` queries
    against ``[B, 1, T, D]`` keys.
    """
    return _attend(Q_in, KV_in, p, weights_out)


def ffn(X: Tensor, p: FFNParams) -> Tensor:
    """Position-wise ``LN(X + W2 relu(W1 X + b1) + b2)``.

    When the block changes the feature width there is no residual term.
    """
    if X.shape[-1] != p.w1.shape[0]:
        raise ShapeError(f"ffn: input width {X.shape[-1]} does not match {p.w1.shape[0]}")
    hidden = tn.relu(tn.linear(X, p.w1, p.b1))
    out = tn.linear(hidden, p.w2, p.b2)
    if p.w1.shape[0] == p.w2.shape[1]:
        out = tn.add(X, out)
    return tn.layer_norm(out, p.ln_gamma, p.ln_beta)


def conv_block(X: Tensor, p: ConvBlockParams) -> Tensor:
    """Two same-length conv1d -> batchnorm -> relu stages over the token axis.

    ``X`` is ``[..., T, 2D]``; features act as channels. Returns ``[..., T, D]``.
    """
    c_in = p.w1.shape[1]
    if X.shape[-1] != c_in:
        raise ShapeError(f"conv_block: expected feature width {c_in}, got {X.shape[-1]}")
    x = tn.swapaxes(X, -1, -2)
    x = tn.relu(tn.batchnorm(tn.conv1d(x, p.w1, p.b1), p.bn1_gamma, p.bn1_beta, p.bn1))
    x = tn.relu(tn.batchnorm(tn.conv1d(x, p.w2, p.b2), p.bn2_gamma, p.bn2_beta, p.bn2))
    return tn.swapaxes(x, -1, -2)
