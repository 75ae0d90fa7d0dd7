"""Training, evaluation and the ablation grid."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .model import Batch, QStar, build_model
from .optim import AdamW, step_decay
from .qcr import cross_entropy_loss
from .synth import TAGS, TEMPLATES, Dataset, build_split
from .tensor import backward

log = logging.getLogger(__name__)

ABLATIONS: dict[str, dict] = {
    "full": {},
    "wo_qgmc": {"disable_qgmc": True},
    "wo_sti": {"disable_sti": True},
    "wo_tfi": {"disable_tfi": True},
    "wo_stfi": {"disable_sti": True, "disable_tfi": True},
    "wo_qcr": {"disable_qcr": True},
    "wo_all": {"disable_qgmc": True, "disable_sti": True, "disable_tfi": True, "disable_qcr": True},
    "rm_b": {"query_guidance_removed": frozenset({"beginning"})},
    "rm_m": {"query_guidance_removed": frozenset({"middle"})},
    "rm_f": {"query_guidance_removed": frozenset({"final"})},
    "qgmc_a": {"qgmc_variant": "avst_early_fusion"},
    "qgmc_b": {"qgmc_variant": "separate_ca"},
    "qgmc_c": {"qgmc_variant": "sequential_ca"},
    "qgmc_d": {"qgmc_variant": "qgmc"},
}
# prompt-mode rows of the suite coincide with existing ones
ABLATION_ALIASES = {"prompt_none": "rm_f", "prompt_keywords": "full"}
TABLE_COLUMNS = ("variant", "audio_acc", "visual_acc", "av_acc", "overall_acc")


class NumericalError(RuntimeError):
    pass


def ablation_config(base: RunConfig, name: str) -> RunConfig:
    name = ABLATION_ALIASES.get(name, name)
    if name not in ABLATIONS:
        raise KeyError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS) + sorted(ABLATION_ALIASES)}")
    return base.replace(**ABLATIONS[name])


@dataclass
class RunReport:
    seed: int
    config: dict
    epoch_losses: list[float]
    accuracy: dict[str, float | None]
    template_accuracy: dict[str, float | None]
    frequency_critical: dict[str, float | int | None]
    parameter_count: int
    wall_clock_seconds: float = field(default=0.0, compare=False)

    def document(self) -> str:
        """Deterministic results document (wall-clock time lives in a sidecar)."""
        doc = {
            "seed": self.seed,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "accuracy": self.accuracy,
            "template_accuracy": self.template_accuracy,
            "frequency_critical": self.frequency_critical,
            "parameter_count": self.parameter_count,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path, name: str = "report") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{name}.json"
        path.write_text(self.document())
        (out / f"{name}.timing.json").write_text(json.dumps({"wall_clock_seconds": self.wall_clock_seconds}) + "\n")
        return path


def _acc(hit: np.ndarray, mask: np.ndarray) -> float | None:
    n = int(mask.sum())
    return float(hit[mask].mean()) if n else None


def evaluate(model, dataset: Dataset, batch_size: int = 250) -> dict:
    """Argmax accuracy: sample-weighted overall, per question-type tag, per template and on the frequency-critical subset.

    ``model`` is anything with ``predict(batch) -> indices``; QStar models
    are switched to eval mode first.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if isinstance(model, QStar):
        model.eval()
    preds = []
    for lo in range(0, len(dataset), batch_size):
        idx = slice(lo, lo + batch_size)
        preds.append(np.asarray(model.predict(Batch.from_dataset(dataset, idx))).reshape(-1))
    hit = np.concatenate(preds) == dataset.labels
    everything = np.ones(len(dataset), dtype=bool)
    return {
        "accuracy": {"overall": _acc(hit, everything), **{t: _acc(hit, dataset.tags == i) for i, t in enumerate(TAGS)}},
        "template_accuracy": {t: _acc(hit, dataset.templates == i) for i, t in enumerate(TEMPLATES)},
        "frequency_critical": {"accuracy": _acc(hit, dataset.critical), "count": int(dataset.critical.sum())},
    }


def train(
    config: RunConfig,
    train_set: Dataset | None = None,
    val_set: Dataset | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[RunReport, QStar]:
    """Train from scratch with AdamW and step decay; evaluate on the validation split."""
    start = time.perf_counter()
    train_set = train_set if train_set is not None else build_split(config, "train")
    val_set = val_set if val_set is not None else build_split(config, "val")
    model = build_model(config)
    params = [t for _, t in model.named_parameters()]
    opt = AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    losses = []
    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = step_decay(config.learning_rate, config.decay_factor, config.decay_period, epoch)
        order = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED, epoch])).permutation(n)
        model.train()
        total = 0.0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            dist = model.forward(Batch.from_dataset(train_set, idx))
            loss = cross_entropy_loss(dist, train_set.labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += value * len(idx)
        losses.append(total / n)
        log.info("epoch %d lr %.2e loss %.4f", epoch, opt.lr, losses[-1])
        if progress is not None:
            progress(epoch, losses[-1])
    metrics = evaluate(model, val_set)
    report = RunReport(
        seed=config.seed,
        config=config.as_dict(),
        epoch_losses=losses,
        parameter_count=model.parameter_count(),
        wall_clock_seconds=time.perf_counter() - start,
        **metrics,
    )
    return report, model


def run_ablation_suite(
    base: RunConfig,
    names: list[str] | None = None,
    progress: Callable[[str, RunReport], None] | None = None,
) -> list[tuple[str, RunReport]]:
    """Train every named ablation row with the base seed; the data splits are shared."""
    names = list(ABLATIONS) if names is None else names
    train_set, val_set = build_split(base, "train"), build_split(base, "val")
    rows = []
    for name in names:
        report, _ = train(ablation_config(base, name), train_set, val_set)
        rows.append((name, report))
        if progress is not None:
            progress(name, report)
    return rows


def _fmt(x) -> str:
    return "nan" if x is None else f"{x:.4f}"


def ablation_table(rows: list[tuple[str, RunReport]], delimiter: str = ",") -> str:
    lines = [delimiter.join(TABLE_COLUMNS)]
    for name, r in rows:
        a = r.accuracy
        lines.append(delimiter.join([name, _fmt(a["audio"]), _fmt(a["visual"]), _fmt(a["audio-visual"]), _fmt(a["overall"])]))
    return "\n".join(lines) + "\n"
