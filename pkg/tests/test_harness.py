import json

import numpy as np
import pytest

import qstar.harness as harness
from qstar.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from qstar.config import RunConfig
from qstar.harness import (
    ABLATION_ALIASES,
    ABLATIONS,
    TABLE_COLUMNS,
    NumericalError,
    ablation_config,
    ablation_table,
    evaluate,
    run_ablation_suite,
    train,
)
from qstar.optim import AdamW, step_decay
from qstar.synth import build_split
from qstar.tensor import Tensor

TINY = RunConfig(d=8, heads=2, n_train=48, n_val=24, epochs=2, batch_size=16)
TINY_TEXT = "d = 8\nheads = 2\nn_train = 48\nn_val = 24\nepochs = 2\nbatch_size = 16\n"


def test_step_decay():
    assert step_decay(1e-4, 0.1, 10, 9) == 1e-4
    assert step_decay(1e-4, 0.1, 10, 10) == pytest.approx(1e-5, rel=1e-12)
    assert step_decay(1e-4, 0.1, 10, 25) == pytest.approx(1e-6, rel=1e-12)


def test_adamw_single_step_closed_form():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    g = np.array([0.3, -0.1, 0.0])
    p.grad = g.copy()
    lr, wd, eps = 1e-2, 0.1, 1e-8
    AdamW([p], lr=lr, weight_decay=wd, eps=eps).step()
    # after one step the bias-corrected moments are g and g², so the update is lr·g/(|g|+eps)
    want = np.array([1.0, -2.0, 0.5]) * (1 - lr * wd) - lr * g / (np.abs(g) + eps)
    np.testing.assert_allclose(p.data, want, rtol=1e-14)


def test_adamw_skips_parameters_without_gradients():
    p = Tensor(np.ones(2), requires_grad=True)
    AdamW([p], lr=1.0).step()
    np.testing.assert_array_equal(p.data, np.ones(2))


class Stub:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, batch):
        return self.fn(batch)


@pytest.fixture(scope="module")
def val_set():
    return build_split(RunConfig(n_train=1, n_val=600), "val")


def test_evaluate_perfect_and_always_wrong(val_set):
    chunks = [val_set.labels[i : i + 250] for i in range(0, len(val_set), 250)]
    right = iter(chunks)

    def perfect(batch):
        return next(right)

    res = evaluate(Stub(perfect), val_set)
    assert res["accuracy"]["overall"] == 1.0
    assert all(v == 1.0 for v in res["template_accuracy"].values())
    labels = iter(chunks)
    res = evaluate(Stub(lambda b: (next(labels) + 1) % 8), val_set)
    assert res["accuracy"]["overall"] == 0.0
    assert res["frequency_critical"]["accuracy"] == 0.0 and res["frequency_critical"]["count"] > 0


def test_evaluate_uniform_guessing_is_near_one_eighth(val_set):
    rng = np.random.default_rng(0)
    res = evaluate(Stub(lambda b: rng.integers(0, 8, size=len(b.F_sentence))), val_set)
    sigma = np.sqrt(1 / 8 * 7 / 8 / len(val_set))
    assert abs(res["accuracy"]["overall"] - 1 / 8) <= 3 * sigma


def test_evaluate_groups_are_sample_weighted(val_set):
    rng = np.random.default_rng(1)
    res = evaluate(Stub(lambda b: rng.integers(0, 8, size=len(b.F_sentence))), val_set)
    tags = np.bincount(val_set.tags, minlength=3) / len(val_set)
    acc = res["accuracy"]
    combined = tags[0] * acc["audio"] + tags[1] * acc["visual"] + tags[2] * acc["audio-visual"]
    assert combined == pytest.approx(acc["overall"], abs=1e-12)


def test_evaluate_rejects_empty(val_set):
    with pytest.raises(ValueError):
        evaluate(Stub(lambda b: b), val_set.subset(slice(0, 0)))


def test_suite_has_fourteen_rows_and_aliases():
    assert len(ABLATIONS) == 14
    assert ablation_config(TINY, "prompt_none") == ablation_config(TINY, "rm_f")
    assert set(ABLATION_ALIASES) == {"prompt_none", "prompt_keywords"}
    with pytest.raises(KeyError):
        ablation_config(TINY, "wo_everything")


def test_training_is_deterministic():
    a, _ = train(TINY)
    b, _ = train(TINY)
    assert a.document() == b.document()
    assert len(a.epoch_losses) == TINY.epochs
    c, _ = train(TINY.replace(seed=1))
    assert c.document() != a.document()


def test_non_finite_loss_raises(monkeypatch):
    monkeypatch.setattr(harness, "cross_entropy_loss", lambda dist, y: Tensor(np.array(np.nan)))
    with pytest.raises(NumericalError, match="epoch 0, step 0"):
        train(TINY)


def test_ablation_table_format(tmp_path):
    rows = run_ablation_suite(TINY.replace(epochs=1), ["full", "wo_tfi"])
    table = ablation_table(rows)
    lines = table.strip().split("\n")
    assert lines[0] == ",".join(TABLE_COLUMNS)
    assert [ln.split(",")[0] for ln in lines[1:]] == ["full", "wo_tfi"]
    for ln in lines[1:]:
        for cell in ln.split(",")[1:]:
            assert cell == "nan" or (0 <= float(cell) <= 1 and len(cell.split(".")[1]) == 4)
    assert ablation_table(rows, delimiter="\t").startswith("variant\taudio_acc")
    path = rows[0][1].write(tmp_path, "full")
    doc = json.loads(path.read_text())
    assert "wall_clock_seconds" not in doc
    assert json.loads((tmp_path / "full.timing.json").read_text())["wall_clock_seconds"] > 0


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_TEXT)
    return path


def test_cli_train_then_eval(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    for name in ("report.json", "report.timing.json", "params.npz", "loss.png"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg_file), "--out", str(out), "--params", str(out / "params.npz")]) == EXIT_OK
    evaluated = json.loads((out / "eval.json").read_text())
    assert evaluated["accuracy"] == report["accuracy"]


def test_cli_ablate_subset(cfg_file, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg_file), "--out", str(out), "--ablate", "full,rm_m"]) == EXIT_OK
    for name in ("ablation.csv", "ablation.png", "ablation_losses.png", "full.json", "rm_m.json"):
        assert (out / name).exists(), name


def test_cli_gen_data(cfg_file, tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_file), "--out", str(out), "--count", "3"]) == EXIT_OK
    assert len(list(out.glob("*.qstf"))) == 3
    assert (out / "manifest.csv").read_text().count("\n") == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--seed", "-1"],
        ["train", "--prompt-mode", "caption"],
        ["train", "--prompt-mode", "declarative_translation"],
        ["train", "--ablate", "wo_everything"],
        ["ablate", "--ablate", "full,nope"],
        ["train", "--qgmc-variant", "e"],
        ["train", "--config", "/nonexistent.cfg"],
    ],
)
def test_cli_config_errors(argv, cfg_file):
    if "--config" not in argv:
        argv = [*argv, "--config", str(cfg_file)]
    assert main(argv) == EXIT_CONFIG


def test_cli_numerical_failure(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "cross_entropy_loss", lambda dist, y: Tensor(np.array(np.inf)))
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_constant_stub_on_balanced_eight_classes():
    from qstar.synth import Dataset

    rng = np.random.default_rng(8)
    n = 1000
    labels = np.repeat(np.arange(8), n // 8)
    rng.shuffle(labels)
    ds = Dataset(
        F_v=np.zeros((n, 1, 1)), F_p=np.zeros((n, 1, 1, 1)), F_a=np.zeros((n, 1, 1)), F_ast=np.zeros((n, 1, 1, 1)),
        F_w=np.zeros((n, 1, 1)), F_sentence=np.zeros((n, 1)), labels=labels,
        tags=rng.integers(0, 3, n), templates=rng.integers(0, 6, n), critical=np.zeros(n, dtype=bool),
    )
    res = evaluate(Stub(lambda b: np.full(len(b.F_sentence), 3)), ds)
    assert abs(res["accuracy"]["overall"] - 1 / 8) <= 3 * np.sqrt(1 / 8 * 7 / 8 / n)
    assert res["frequency_critical"] == {"accuracy": None, "count": 0}


def test_full_row_repeated_in_the_suite_is_bitwise_identical():
    rows = dict(run_ablation_suite(TINY.replace(epochs=1), ["full", "qgmc_d"]))
    assert rows["full"].document() == rows["qgmc_d"].document()
