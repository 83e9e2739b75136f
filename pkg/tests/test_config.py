from pathlib import Path

import pytest

from pseudoae.config import (
    ConfigError,
    ExperimentConfig,
    SkipConfig,
    config_from_dict,
    load_config,
    save_config,
)


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


class TestParsing:
    def test_default_p_needs_a_kind(self):
        with pytest.raises(ConfigError, match="no \\[pseudo"):
            config_from_dict({})

    def test_sections_enable_kinds(self, tmp_path):
        cfg = load_config(write(tmp_path, "[train]\np = 0.2\n[pseudo.skip]\ns = [2, 3]\n"))
        assert cfg.pseudo_kinds == ("skip",) and cfg.skip.s == [2, 3]

    def test_baseline(self, tmp_path):
        cfg = load_config(write(tmp_path, "[train]\np = 0.0\n"))
        assert cfg.pseudo_kinds == () and cfg.train.p == 0.0

    def test_unknown_top_level_key_named(self, tmp_path):
        with pytest.raises(ConfigError, match="pseudoo"):
            load_config(write(tmp_path, "[pseudoo.skip]\ns = [2]\n"))

    def test_unknown_nested_key_named(self, tmp_path):
        with pytest.raises(ConfigError, match="'lrr'"):
            load_config(write(tmp_path, "[train]\nlrr = 0.1\n"))

    def test_unknown_pseudo_kind(self, tmp_path):
        with pytest.raises(ConfigError, match="pseudo.blur"):
            load_config(write(tmp_path, "[pseudo.blur]\n"))

    def test_type_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="epochs"):
            load_config(write(tmp_path, '[train]\nepochs = "five"\n'))

    def test_int_promoted_to_float(self, tmp_path):
        cfg = load_config(write(tmp_path, "[train]\np = 1\n[pseudo.skip]\n"))
        assert isinstance(cfg.train.p, float)

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[train\n"))

    @pytest.mark.parametrize("doc", [
        {"train": {"p": 1.5}, "pseudo": {"skip": {}}},
        {"train": {"p": 0.2}},
        {"train": {"lr": 0.0}},
        {"data": {"frames": 1}},
        {"pseudo": {"skip": {"s": [1, 2]}}},
        {"pseudo": {"patch": {"alpha": 0.0}}},
    ])
    def test_invalid_values(self, doc):
        with pytest.raises(ConfigError):
            config_from_dict(doc)


class TestRoundTrip:
    def test_save_load(self, tmp_path):
        cfg = ExperimentConfig(skip=SkipConfig(s=[2, 4]))
        cfg.train.lr = 3e-4
        save_config(cfg, tmp_path / "c.toml")
        back = load_config(tmp_path / "c.toml")
        assert back == cfg and back.hash() == cfg.hash()

    def test_hash_tracks_changes(self):
        a, b = ExperimentConfig(), ExperimentConfig()
        b.train.seed = 1
        assert a.hash() != b.hash()


@pytest.mark.parametrize("name,kinds", [("baseline", ()), ("patch", ("patch",)), ("skip", ("skip",))])
def test_shipped_configs(name, kinds):
    cfg = load_config(Path(__file__).parents[1] / "configs" / f"{name}.toml")
    assert cfg.pseudo_kinds == kinds
