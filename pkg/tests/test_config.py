import math

import pytest

from okwugbe.audio import ConfigError
from okwugbe.config import load_config, parse_config, shipped_configs, with_overrides

MINIMAL = """
[frontend]
sample_rate = 8000
n_fft = 256
hop_length = 256
n_mels = 32

[model]
N = 2
M = 1
embedding_size = 32

[data]
charset = synthetic
"""


class TestShipped:
    def test_available(self):
        assert shipped_configs() == ["fon", "igbo", "synthetic"]

    def test_fon(self):
        cfg = load_config("fon")
        fe, m, t = cfg.frontend, cfg.model, cfg.training
        assert (fe.sample_rate, fe.n_fft, fe.hop_length, fe.n_mels) == (16000, 512, 512, 128)
        assert (m.n_rcnn_blocks, m.n_rnn_blocks, m.rnn_hidden, m.dropout_p, m.batch_norm) == (5, 3, 512, 0.1, True)
        assert (t.max_lr, t.batch_size, t.epochs, t.early_stop_patience, t.optimizer) == (5e-4, 20, 500, 100, "adamw")
        assert (cfg.min_duration, cfg.max_duration) == (2.0, 5.0)
        assert m.charset_size == len(cfg.load_charset())

    def test_igbo(self):
        cfg = load_config("igbo")
        assert (cfg.frontend.sample_rate, cfg.frontend.n_mels) == (8000, 64)
        assert (cfg.training.max_lr, cfg.training.epochs, cfg.training.optimizer) == (3e-4, 1000, "nesterov")
        assert cfg.model.n_mels == 64

    def test_synthetic_is_reduced(self):
        m = load_config("synthetic").model
        assert (m.n_rcnn_blocks, m.n_rnn_blocks, m.rnn_hidden) == (2, 1, 32)
        assert m.charset_size <= 8


class TestParsing:
    def test_defaults_fill_in(self):
        cfg = parse_config(MINIMAL)
        assert cfg.training.optimizer == "adamw" and cfg.specaugment is None
        assert math.isinf(cfg.max_duration)

    def test_inline_comments(self):
        cfg = parse_config(MINIMAL.replace("N = 2", "N = 2  # two blocks"))
        assert cfg.model.n_rcnn_blocks == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'depth'"):
            parse_config(MINIMAL + "\n[training]\ndepth = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown sections"):
            parse_config(MINIMAL + "\n[extras]\n")

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="n_fft"):
            parse_config(MINIMAL.replace("n_fft = 256", "n_fft = big"))

    def test_activation_must_be_gelu(self):
        with pytest.raises(ConfigError, match="gelu"):
            parse_config(MINIMAL.replace("N = 2", "N = 2\nactivation_function = relu"))

    def test_unknown_optimizer(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL + "\n[training]\noptimizer = sgd\n")

    def test_filterbank_checked(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL.replace("n_mels = 32", "n_mels = 400"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.cfg")

    def test_relative_paths_resolve_against_file(self, tmp_path):
        (tmp_path / "run.cfg").write_text(MINIMAL + "train_manifest = data/train.jsonl\n")
        assert load_config(tmp_path / "run.cfg").train_manifest == tmp_path / "data" / "train.jsonl"

    def test_overrides(self):
        cfg = with_overrides(parse_config(MINIMAL), seed=7, epochs=3, out_dir=None)
        assert (cfg.training.seed, cfg.training.epochs, cfg.out_dir) == (7, 3, None)
