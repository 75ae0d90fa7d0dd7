import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstar.config import ConfigError, RunConfig, load_config, parse_config_text
from qstar.qcr import ASPECTS


def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.hidden == cfg.d and cfg.v >= 7


def test_text_round_trip():
    cfg = RunConfig(
        seed=7, learning_rate=3e-4, disable_sti=True, prompt_keywords=("type", "loudness"),
        query_guidance_removed=frozenset({"final", "middle"}), qgmc_variant="b",
    )
    assert cfg.qgmc_variant == "separate_ca"
    assert parse_config_text(cfg.to_text()) == cfg


@given(
    seed=st.integers(0, 2**64 - 1),
    lr=st.floats(1e-6, 1.0, allow_nan=False),
    epochs=st.integers(1, 50),
    stages=st.sets(st.sampled_from(["beginning", "middle", "final"])),
    keywords=st.lists(st.sampled_from(ASPECTS), min_size=1, unique=True),
)
@settings(max_examples=60, deadline=None)
def test_round_trip_property(seed, lr, epochs, stages, keywords):
    cfg = RunConfig(seed=seed, learning_rate=lr, epochs=epochs, query_guidance_removed=stages, prompt_keywords=keywords)
    assert parse_config_text(cfg.to_text()) == cfg


def test_comments_blank_lines_and_base(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# tiny run\n\nepochs = 2  # short\ndisable_tfi = yes\n")
    cfg = load_config(path)
    assert cfg.epochs == 2 and cfg.disable_tfi and cfg.d == RunConfig().d


@pytest.mark.parametrize(
    "text",
    [
        "epochs 3",
        "colour = blue",
        "epochs = three",
        "disable_tfi = maybe",
        "seed = -1",
        f"seed = {2**64}",
        "d = 30\nheads = 4",
        "v = 6",
        "n = 4",
        "classes = 9",
        "classes = 2",
        "decay_factor = 0",
        "qgmc_variant = e",
        "prompt_mode = caption_only",
        "prompt_keywords = tempo",
        "query_guidance_removed = end",
        "disable_qcr = true\nprompt_mode = none",
        "disable_qgmc = true\nqgmc_variant = b",
        "disable_tfi = true\nquery_guidance_removed = middle",
        "epochs = 0",
        "noise_sigma = -0.1",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")
