"""Full QSTar assembly with ablation pass-throughs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .config import RunConfig
from .nn import ParamFactory, batchnorm_states, count_parameters, named_parameters
from .qcr import AnswerDistribution, PromptBank, QcrParams, fuse_and_classify, qcr_forward, qcr_prompt_variant
from .qgmc import QgmcParams, qgmc_variant, qgmc_without_query
from .stfi import StiParams, TfiParams, sti_forward, tfi_forward
from .synth import Dataset, prompt_bank
from .tensor import Tensor


@dataclass
class ModelParams:
    qgmc: QgmcParams | None
    sti: StiParams | None
    tfi: TfiParams | None
    qcr: QcrParams


@dataclass
class Batch:
    F_v: np.ndarray
    F_p: np.ndarray
    F_a: np.ndarray
    F_ast: np.ndarray
    F_w: np.ndarray
    F_sentence: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, idx=slice(None)) -> "Batch":
        return cls(ds.F_v[idx], ds.F_p[idx], ds.F_a[idx], ds.F_ast[idx], ds.F_w[idx], ds.F_sentence[idx])

    @classmethod
    def from_bundle(cls, bundle) -> "Batch":
        return cls(bundle.F_v, bundle.F_p, bundle.F_a, bundle.F_ast, bundle.F_w, bundle.F_sentence)


class QStar:
    """Parameters plus the switches that decide which modules run."""

    def __init__(self, config: RunConfig, params: ModelParams, bank: PromptBank):
        self.config = config
        self.params = params
        self.bank = bank
        removed = config.query_guidance_removed
        if config.disable_qgmc:
            self.qgmc_mode = "off"
        elif "beginning" in removed:
            self.qgmc_mode = "no_query"
        else:
            self.qgmc_mode = config.qgmc_variant

    # -- modes ----------------------------------------------------------------
    def train(self) -> None:
        for s in batchnorm_states(self.params):
            s.training = True

    def eval(self) -> None:
        for s in batchnorm_states(self.params):
            s.training = False

    def named_parameters(self):
        return list(named_parameters(self.params))

    def parameter_count(self) -> int:
        return count_parameters(self.params)

    # -- forward --------------------------------------------------------------
    def forward(self, batch) -> AnswerDistribution:
        """Answer distribution for one sample (``[T, D]`` features) or a batch."""
        F_v, F_a = Tensor(batch.F_v), Tensor(batch.F_a)
        F_w, F_s = Tensor(batch.F_w), Tensor(batch.F_sentence)
        return self.forward_tensors(F_v, Tensor(batch.F_p), F_a, batch, F_w, F_s)

    def forward_tensors(self, F_v, F_p, F_a, F_ast_source, F_w, F_s) -> AnswerDistribution:
        """Forward on tensors; ``F_ast_source`` is read lazily so disabled TFI never touches it."""
        p = self.params
        if self.qgmc_mode == "off":
            F_vq, F_aq = F_v, F_a
        elif self.qgmc_mode == "no_query":
            F_vq, F_aq = qgmc_without_query(F_v, F_a, p.qgmc)
        else:
            F_vq, F_aq = qgmc_variant(F_v, F_a, F_w, p.qgmc, self.qgmc_mode)
        F_vi = sti_forward(F_p, F_aq, F_vq, p.sti) if p.sti is not None else F_vq
        if p.tfi is not None:
            F_ast = F_ast_source.F_ast
            F_ast = F_ast if isinstance(F_ast, Tensor) else Tensor(F_ast)
            F_ai = tfi_forward(F_ast, F_aq, F_w, p.tfi)
        else:
            F_ai = F_aq
        if p.qcr.sa_qc is not None:
            return qcr_forward(F_vi, F_ai, F_s, self.bank, p.qcr)
        return fuse_and_classify(tn.reduce_mean(F_vi, axis=-2), tn.reduce_mean(F_ai, axis=-2), F_s, p.qcr)

    def predict(self, batch) -> np.ndarray:
        return self.forward(batch).argmax


def build_model(config: RunConfig) -> QStar:
    """Instantiate parameters for ``config``; disabled modules get no parameters."""
    pf = ParamFactory(config.seed)
    d, heads = config.d, config.heads
    removed = config.query_guidance_removed
    if config.disable_qgmc:
        qgmc = None
    else:
        variant = "no_query" if "beginning" in removed else config.qgmc_variant
        qgmc = QgmcParams.init(pf.child("qgmc"), d, heads, variant)
    sti = None if config.disable_sti else StiParams.init(pf.child("sti"), d, heads)
    tfi = None
    if not config.disable_tfi:
        tfi = TfiParams.init(pf.child("tfi"), d, config.hidden, question_term="middle" not in removed)
    qcr = QcrParams.init(pf.child("qcr"), d, heads, config.v, reasoning=not config.disable_qcr)
    mode = "none" if "final" in removed else config.prompt_mode
    bank = qcr_prompt_variant(mode, prompt_bank(config)) if not config.disable_qcr else PromptBank.empty()
    return QStar(config, ModelParams(qgmc, sti, tfi, qcr), bank)


def save_params(model: QStar, path) -> None:
    arrays = {name: t.data for name, t in model.named_parameters()}
    for i, s in enumerate(batchnorm_states(model.params)):
        arrays[f"__bn{i}.mean"] = s.mean
        arrays[f"__bn{i}.var"] = s.var
    if len(model.bank):
        arrays["__prompt"] = model.bank.embeddings.data
    np.savez(path, **arrays)


def load_params(model: QStar, path) -> None:
    with np.load(path) as z:
        for name, t in model.named_parameters():
            if z[name].shape != t.shape:
                raise ValueError(f"parameter {name}: stored shape {z[name].shape} != {t.shape}")
            t.data = np.array(z[name])
        for i, s in enumerate(batchnorm_states(model.params)):
            s.mean = np.array(z[f"__bn{i}.mean"])
            s.var = np.array(z[f"__bn{i}.var"])
        if len(model.bank):
            if "__prompt" not in z or z["__prompt"].shape != model.bank.embeddings.shape:
                raise ValueError("stored prompt embeddings are missing or have the wrong shape")
            model.bank.embeddings = Tensor(np.array(z["__prompt"]))
