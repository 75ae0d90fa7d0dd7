"""Query context reasoning and answer prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .nn import AttentionParams, ParamFactory, cross_attention, self_attention
from .tensor import ShapeError, Tensor

ASPECTS = ("type", "performance duration", "location", "temporal sequence", "loudness")
PROMPT_MODES = ("none", "keywords", "declarative_translation", "caption")


class UnimplementedVariantError(NotImplementedError):
    pass


@dataclass
class PromptBank:
    """Context keywords and their fixed embeddings ``[K, D]`` (K may be 0)."""

    keywords: tuple[str, ...]
    embeddings: Tensor | None

    def __post_init__(self):
        self.keywords = tuple(self.keywords)
        unknown = [k for k in self.keywords if k not in ASPECTS]
        if unknown:
            raise ValueError(f"unknown prompt aspects {unknown}; expected a subset of {ASPECTS}")
        if len(set(self.keywords)) != len(self.keywords):
            raise ValueError(f"duplicate prompt aspects in {self.keywords}")
        if not self.keywords:
            self.embeddings = None
            return
        if self.embeddings is None or self.embeddings.shape[0] != len(self.keywords):
            raise ShapeError("prompt embeddings must have one row per keyword")
        norms = np.linalg.norm(self.embeddings.data, axis=-1)
        if np.any(norms <= 0) or np.any(norms > 10):
            raise ValueError(f"prompt embedding norms must lie in (0, 10], got {norms}")

    def __len__(self) -> int:
        return len(self.keywords)

    @classmethod
    def empty(cls) -> "PromptBank":
        return cls((), None)


def qcr_prompt_variant(mode: str, bank: PromptBank) -> PromptBank:
    """Prompt set for an ablation mode: the full keyword bank, or no prompts at all."""
    if mode == "keywords":
        return bank
    if mode == "none":
        return PromptBank.empty()
    if mode in ("declarative_translation", "caption"):
        raise UnimplementedVariantError(
            f"prompt mode {mode!r} needs an external question rewriter or captioner and is not implemented"
        )
    raise ValueError(f"unknown prompt mode {mode!r}; expected one of {PROMPT_MODES}")


@dataclass
class QcrParams:
    sa_qc: AttentionParams | None
    ca_v: AttentionParams | None
    ca_a: AttentionParams | None
    w_fc: Tensor  # [2D, D]
    b_fc: Tensor
    w_cls: Tensor  # [D, V]
    b_cls: Tensor

    @property
    def vocab_size(self) -> int:
        return self.w_cls.shape[1]

    @classmethod
    def init(cls, pf: ParamFactory, d: int, heads: int, vocab: int, reasoning: bool = True) -> "QcrParams":
        att = (
            {n: AttentionParams.init(pf.child(n), d, heads) for n in ("sa_qc", "ca_v", "ca_a")}
            if reasoning
            else {"sa_qc": None, "ca_v": None, "ca_a": None}
        )
        return cls(
            **att,
            w_fc=pf.uniform("w_fc", (2 * d, d), 2 * d),
            b_fc=pf.zeros((d,)),
            w_cls=pf.uniform("w_cls", (d, vocab), d),
            b_cls=pf.zeros((vocab,)),
        )


@dataclass
class AnswerDistribution:
    logits: Tensor

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    @property
    def argmax(self) -> np.ndarray:
        return self.logits.data.argmax(axis=-1)


def query_context(F_sentence: Tensor, bank: PromptBank, p: QcrParams) -> Tensor:
    """Self-attended context tokens: the prompt rows followed by the sentence as one token."""
    sent = tn.expand_dims(F_sentence, -2)
    if len(bank) == 0:
        return self_attention(sent, p.sa_qc)
    lead = F_sentence.shape[:-1]
    prompt = bank.embeddings
    if lead:
        prompt = tn.broadcast_to(prompt, (*lead, *prompt.shape))
    return self_attention(tn.concat([prompt, sent], axis=-2), p.sa_qc)


def fuse_and_classify(pooled_v: Tensor, pooled_a: Tensor, F_sentence: Tensor, p: QcrParams) -> AnswerDistribution:
    """``e = F_sentence ∘ tanh(W_fc [v; a] + b)``; logits ``= W_cls e + b``."""
    F_av = tn.tanh(tn.linear(tn.concat([pooled_v, pooled_a], axis=-1), p.w_fc, p.b_fc))
    e = tn.mul(F_sentence, F_av)
    return AnswerDistribution(tn.linear(e, p.w_cls, p.b_cls))


def qcr_forward(F_vi: Tensor, F_ai: Tensor, F_sentence: Tensor, bank: PromptBank, p: QcrParams) -> AnswerDistribution:
    if p.sa_qc is None:
        raise ValueError("qcr_forward needs reasoning parameters; use fuse_and_classify for the ablated head")
    if F_vi.shape[-1] != F_sentence.shape[-1] or F_ai.shape[-1] != F_sentence.shape[-1]:
        raise ShapeError(f"qcr: widths differ: F_vi {F_vi.shape}, F_ai {F_ai.shape}, F_sentence {F_sentence.shape}")
    F_qc = query_context(F_sentence, bank, p)
    F_fv = cross_attention(F_qc, F_vi, p.ca_v)
    F_fa = cross_attention(F_qc, F_ai, p.ca_a)
    return fuse_and_classify(tn.reduce_mean(F_fv, axis=-2), tn.reduce_mean(F_fa, axis=-2), F_sentence, p)


def cross_entropy_loss(dist: AnswerDistribution, label) -> Tensor:
    """Mean negative log-likelihood of ``label`` (an index or an array of indices)."""
    label = np.asarray(label)
    v = dist.logits.shape[-1]
    if np.any(label < 0) or np.any(label >= v):
        raise ValueError(f"label {label} out of range for an answer vocabulary of size {v}")
    return tn.cross_entropy(dist.logits, label)
