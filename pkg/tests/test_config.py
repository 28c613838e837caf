import pytest

from skintone_debias.config import ConfigError, build, defaults, read_kv, split_file
from skintone_debias.evalbias import ProbeConfig, SyntheticBiasSpec
from skintone_debias.imageproc import ToneConfig
from skintone_debias.unlearn import TrainConfig


@pytest.fixture
def cfg_file(tmp_path):
    def make(text):
        path = tmp_path / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path
    return make


class TestReadKv:
    def test_comments_and_blanks(self, cfg_file):
        assert read_kv(cfg_file("# header\n\nlr = 0.1  # trailing\nmethod=clgr\n")) == {
            "lr": "0.1", "method": "clgr"}

    def test_malformed_line(self, cfg_file):
        with pytest.raises(ConfigError, match=":2:"):
            read_kv(cfg_file("lr = 1\njust words\n"))

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_kv(tmp_path / "absent.cfg")


class TestBuild:
    def test_defaults(self):
        assert build(TrainConfig) == TrainConfig()
        assert defaults(ToneConfig)["kernel_size"] == ToneConfig().kernel_size

    def test_later_layer_wins_and_none_falls_through(self):
        cfg = build(TrainConfig, {"lr": "0.1", "epochs": "3"}, {"lr": "0.2", "epochs": None})
        assert cfg.lr == 0.2 and cfg.epochs == 3

    def test_bool_coercion(self):
        assert build(ToneConfig, {"mask_hair": "false"}).mask_hair is False
        with pytest.raises(ConfigError):
            build(ToneConfig, {"mask_hair": "maybe"})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            build(TrainConfig, {"learning_rate": "0.1"})

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="epochs"):
            build(TrainConfig, {"epochs": "many"})

    def test_invariant_violation_is_config_error(self):
        with pytest.raises(ConfigError):
            build(TrainConfig, {"method": "magic"})


class TestSplitFile:
    SECTIONS = (("train", TrainConfig), ("spec", SyntheticBiasSpec), ("probe", ProbeConfig))

    def test_routing(self, cfg_file):
        train, spec, probe = split_file(
            cfg_file("lr = 0.01\nprobe.lr = 0.5\nbias_shift = 1.5\nseed = 7\n"), *self.SECTIONS)
        assert train == {"lr": "0.01", "seed": "7"}
        assert spec == {"bias_shift": "1.5", "seed": "7"}
        assert probe == {"lr": "0.5", "seed": "7"}

    def test_qualified_overrides_bare(self, cfg_file):
        train, _, _ = split_file(cfg_file("train.epochs = 5\nepochs = 9\n"), *self.SECTIONS)
        assert train["epochs"] == "5"

    def test_unknown(self, cfg_file):
        with pytest.raises(ConfigError, match="nonsense"):
            split_file(cfg_file("nonsense = 1\n"), *self.SECTIONS)

    def test_wrong_section(self, cfg_file):
        with pytest.raises(ConfigError):
            split_file(cfg_file("spec.momentum = 0.5\n"), *self.SECTIONS)

    def test_no_file(self):
        assert split_file(None, *self.SECTIONS) == [{}, {}, {}]
