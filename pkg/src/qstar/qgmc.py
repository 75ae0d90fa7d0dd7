"""Query-guided multimodal correlation.

Three stages turn frame-level visual and audio features into
question-conditioned streams:

* self-enhance each modality and the word tokens with SA units,
* capture: the enhanced words query each modality (CA), and the two
  captures are summed with the enhanced words into a guidance context,
* propagate: each raw modality queries the guidance context, then a
  residual with the raw modality feeds an FFN.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tn
from .nn import AttentionParams, FFNParams, ParamFactory, cross_attention, ffn, self_attention
from .tensor import ShapeError, Tensor

VARIANTS = ("avst_early_fusion", "separate_ca", "sequential_ca", "qgmc")
VARIANT_ALIASES = {"a": "avst_early_fusion", "b": "separate_ca", "c": "sequential_ca", "d": "qgmc"}


# sub-blocks each strategy actually uses; the rest stay None
_USES = {
    "qgmc": ("sa_v", "sa_a", "sa_w", "ca_capture_v", "ca_capture_a", "ca_prop_v", "ca_prop_a"),
    "avst_early_fusion": ("ca_prop_v", "ca_prop_a"),
    "separate_ca": ("sa_w", "ca_prop_v", "ca_prop_a"),
    "sequential_ca": ("sa_w", "ca_capture_v", "ca_capture_a", "ca_prop_v", "ca_prop_a"),
    "no_query": ("sa_v", "sa_a"),
}


@dataclass
class QgmcParams:
    ffn_v: FFNParams
    ffn_a: FFNParams
    sa_v: AttentionParams | None = None
    sa_a: AttentionParams | None = None
    sa_w: AttentionParams | None = None
    ca_capture_v: AttentionParams | None = None
    ca_capture_a: AttentionParams | None = None
    ca_prop_v: AttentionParams | None = None
    ca_prop_a: AttentionParams | None = None

    @classmethod
    def init(cls, pf: ParamFactory, d: int, heads: int, variant: str = "qgmc") -> "QgmcParams":
        variant = VARIANT_ALIASES.get(variant, variant)
        att = {name: AttentionParams.init(pf.child(name), d, heads) for name in _USES[variant]}
        return cls(ffn_v=FFNParams.init(pf.child("ffn_v"), d), ffn_a=FFNParams.init(pf.child("ffn_a"), d), **att)


def _check(F_v: Tensor, F_a: Tensor, F_w: Tensor) -> None:
    if not (F_v.shape[-1] == F_a.shape[-1] == F_w.shape[-1]):
        raise ShapeError(f"qgmc: feature widths differ: F_v {F_v.shape}, F_a {F_a.shape}, F_w {F_w.shape}")
    if F_v.shape[-2] != F_a.shape[-2]:
        raise ShapeError(f"qgmc: F_v {F_v.shape} and F_a {F_a.shape} have different segment counts")


def qgmc_forward(F_v: Tensor, F_a: Tensor, F_w: Tensor, p: QgmcParams) -> tuple[Tensor, Tensor]:
    _check(F_v, F_a, F_w)
    words = self_attention(F_w, p.sa_w)
    vis = self_attention(F_v, p.sa_v)
    aud = self_attention(F_a, p.sa_a)
    F_qv = cross_attention(words, vis, p.ca_capture_v)
    F_qa = cross_attention(words, aud, p.ca_capture_a)
    F_qg = tn.add(tn.add(F_qv, F_qa), words)
    assert F_qg.shape[-2:] == F_w.shape[-2:]
    F_vq = cross_attention(F_v, F_qg, p.ca_prop_v)
    F_aq = cross_attention(F_a, F_qg, p.ca_prop_a)
    return ffn(tn.add(F_vq, F_v), p.ffn_v), ffn(tn.add(F_aq, F_a), p.ffn_a)


def qgmc_without_query(F_v: Tensor, F_a: Tensor, p: QgmcParams) -> tuple[Tensor, Tensor]:
    """Self-enhancement and FFN refinement only; the question never enters."""
    if F_v.shape[-1] != F_a.shape[-1]:
        raise ShapeError(f"qgmc: feature widths differ: F_v {F_v.shape}, F_a {F_a.shape}")
    F_vq = self_attention(F_v, p.sa_v)
    F_aq = self_attention(F_a, p.sa_a)
    return ffn(tn.add(F_vq, F_v), p.ffn_v), ffn(tn.add(F_aq, F_a), p.ffn_a)


def qgmc_variant(F_v: Tensor, F_a: Tensor, F_w: Tensor, p: QgmcParams, variant: str) -> tuple[Tensor, Tensor]:
    """Early-stage processing strategies compared against the full module.

    ``avst_early_fusion`` lets audio and visual attend to each other and
    never reads the question; ``separate_ca`` lets each modality attend to
    the enhanced words; ``sequential_ca`` attends to the other modality
    first and to the words second; ``qgmc`` is :func:`qgmc_forward`.
    """
    variant = VARIANT_ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise ValueError(f"unknown QGMC variant {variant!r}; expected one of {VARIANTS}")
    if variant == "qgmc":
        return qgmc_forward(F_v, F_a, F_w, p)
    _check(F_v, F_a, F_w)
    if any(getattr(p, name) is None for name in _USES[variant]):
        raise ValueError(f"parameters were not built for QGMC variant {variant!r}")
    if variant == "avst_early_fusion":
        F_vq = cross_attention(F_v, F_a, p.ca_prop_v)
        F_aq = cross_attention(F_a, F_v, p.ca_prop_a)
    elif variant == "separate_ca":
        words = self_attention(F_w, p.sa_w)
        F_vq = cross_attention(F_v, words, p.ca_prop_v)
        F_aq = cross_attention(F_a, words, p.ca_prop_a)
    else:
        words = self_attention(F_w, p.sa_w)
        F_vq = cross_attention(cross_attention(F_v, F_a, p.ca_capture_v), words, p.ca_prop_v)
        F_aq = cross_attention(cross_attention(F_a, F_v, p.ca_capture_a), words, p.ca_prop_a)
    return ffn(tn.add(F_vq, F_v), p.ffn_v), ffn(tn.add(F_aq, F_a), p.ffn_a)
