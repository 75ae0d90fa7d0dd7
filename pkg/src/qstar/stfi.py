"""Spatial-temporal (STI) and temporal-frequency (TFI) interaction."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tn
from .nn import AttentionParams, ConvBlockParams, FFNParams, ParamFactory, conv_block, cross_attention, ffn, self_attention
from .tensor import ShapeError, Tensor


@dataclass
class StiParams:
    sa_p: AttentionParams
    ca_sp: AttentionParams
    ffn_fuse: FFNParams  # 2D -> D

    @classmethod
    def init(cls, pf: ParamFactory, d: int, heads: int) -> "StiParams":
        return cls(
            AttentionParams.init(pf.child("sa_p"), d, heads),
            AttentionParams.init(pf.child("ca_sp"), d, heads),
            FFNParams.init(pf.child("ffn_fuse"), 2 * d, d),
        )


@dataclass
class TfiParams:
    w2: Tensor  # [H, 1]
    w3: Tensor  # [D, H]
    conv: ConvBlockParams
    w1: Tensor | None = None  # [D, 1]; absent when the question term is removed

    @classmethod
    def init(cls, pf: ParamFactory, d: int, hidden: int | None = None, question_term: bool = True) -> "TfiParams":
        hidden = d if hidden is None else hidden
        if hidden < 1:
            raise ShapeError(f"TFI hidden width must be positive, got {hidden}")
        return cls(
            w2=pf.uniform("w2", (hidden, 1), hidden),
            w3=pf.uniform("w3", (d, hidden), d),
            conv=ConvBlockParams.init(pf.child("conv"), d),
            w1=pf.uniform("w1", (d, 1), d) if question_term else None,
        )


def _same_segments(*xs: tuple[str, Tensor, int]) -> None:
    counts = {name: t.shape[axis] for name, t, axis in xs}
    if len(set(counts.values())) != 1:
        raise ShapeError(f"segment counts differ: {counts}")


def temporal_interaction(F_aq: Tensor, F_vq: Tensor) -> Tensor:
    """``F_vq · softmax(F_aqᵀ · F_vq)`` with the softmax over the last axis of the D×D map."""
    corr = tn.softmax(tn.matmul(tn.swapaxes(F_aq, -1, -2), F_vq), axis=-1)
    return tn.matmul(F_vq, corr)


def sti_forward(F_p: Tensor, F_aq: Tensor, F_vq: Tensor, p: StiParams) -> Tensor:
    """Refine patch features against query-guided audio and fuse with the temporal path.

    Each segment's patches self-attend, then cross-attend to the whole
    audio sequence; the result is mean-pooled over patches and
    concatenated with the temporal path before the fusion FFN.
    """
    _same_segments(("F_p", F_p, -3), ("F_aq'", F_aq, -2), ("F_vq'", F_vq, -2))
    patches = self_attention(F_p, p.sa_p)
    F_si = cross_attention(patches, tn.expand_dims(F_aq, -3), p.ca_sp)
    pooled = tn.reduce_mean(F_si, axis=-2)
    F_ti = temporal_interaction(F_aq, F_vq)
    return ffn(tn.concat([pooled, F_ti], axis=-1), p.ffn_fuse)


def frequency_attention(F_ast: Tensor, F_w: Tensor | None, p: TfiParams) -> tuple[Tensor, Tensor]:
    """Band weights ``a_f`` from time-averaged spectral features plus the question.

    score(f) = w1·mean(F_w) + w2·relu(w3·f_mean[f]). The question term is
    shared by every band; it is skipped when ``p.w1`` is None or ``F_w``
    is None. Returns ``(a_f [..., F], F_ast' [..., T, F, D])``.
    """
    f_mean = tn.reduce_mean(F_ast, axis=-3)
    band = tn.linear(tn.relu(tn.linear(f_mean, p.w3)), p.w2)
    scores = tn.reshape(band, band.shape[:-1])
    if p.w1 is not None and F_w is not None:
        q = tn.linear(tn.reduce_mean(F_w, axis=-2), p.w1)
        scores = tn.add(scores, q)
    a_f = tn.softmax(scores, axis=-1)
    weights = tn.reshape(a_f, (*a_f.shape[:-1], 1, a_f.shape[-1], 1))
    return a_f, tn.mul(F_ast, weights)


def tfi_forward(F_ast: Tensor, F_aq: Tensor, F_w: Tensor | None, p: TfiParams) -> Tensor:
    """Band-attended spectral features collapsed over bands, joined with audio, through ConvBlock."""
    _same_segments(("F_ast", F_ast, -3), ("F_aq'", F_aq, -2))
    _, weighted = frequency_attention(F_ast, F_w, p)
    collapsed = tn.sum(weighted, axis=-2)
    return conv_block(tn.concat([collapsed, F_aq], axis=-1), p.conv)
