"""Key=value config parsing and override merging."""

import pytest

from cmjivnet.config import ConfigError, RunConfig, known_keys, load_config, parse_config_text


def test_defaults_round_trip():
    cfg = parse_config_text("")
    assert cfg.synth.n_subjects == 256
    assert cfg.train.batch_size >= 2
    assert cfg.train.weights.fc == 1.0


def test_sections_route_to_dataclasses():
    text = """
    # generator
    synth.n_subjects = 32
    synth.noise_fc = 0.2

    train.max_epochs=7   # inline comment
    train.lr = 5e-4
    loss.sc = 0.5
    """
    cfg = parse_config_text(text)
    assert cfg.synth.n_subjects == 32
    assert cfg.synth.noise_fc == pytest.approx(0.2)
    assert cfg.train.max_epochs == 7
    assert cfg.train.lr == pytest.approx(5e-4)
    assert cfg.train.weights.sc == pytest.approx(0.5)


def test_traits_list_parses_to_tuple():
    cfg = parse_config_text("train.traits=0,2")
    assert cfg.train.traits == (0, 2)
    cfg = parse_config_text("train.traits=")
    assert cfg.train.traits is None


@pytest.mark.parametrize(
    "line",
    [
        "synth.banana=1",
        "weights.fc=2",
        "n_subjects=32",
        "train.weights=oops",
        "just a stray line",
        "train.max_epochs=soon",
        "synth.noise_fc=very",
    ],
)
def test_rejects_malformed_input(line):
    with pytest.raises(ConfigError):
        parse_config_text(line)


def test_error_names_offending_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("synth.v=68\nnot-an-assignment")


def test_known_keys_cover_all_sections():
    keys = known_keys()
    assert "synth.n_subjects" in keys
    assert "train.batch_size" in keys
    assert "loss.mi" in keys
    assert "train.weights" not in keys
    assert keys == sorted(keys)


def test_load_config_merges_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.max_epochs=3\nsynth.seed=7\n")
    cfg = load_config(str(path), overrides=["train.max_epochs=9", "loss.mi=0.0"])
    assert cfg.train.max_epochs == 9
    assert cfg.synth.seed == 7
    assert cfg.train.weights.mi == 0.0


def test_load_config_rejects_bad_override():
    with pytest.raises(ConfigError, match="--set"):
        load_config(None, overrides=["train.max_epochs"])


def test_apply_seed_sets_both_sections():
    cfg = RunConfig()
    cfg.apply_seed(99)
    assert cfg.synth.seed == 99
    assert cfg.train.seed == 99
