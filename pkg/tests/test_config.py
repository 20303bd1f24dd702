import pytest

from epcgaze.config import RunConfig, dump_config, load_config, parse_value
from epcgaze.errors import ConfigError


def test_published_defaults():
    c = RunConfig()
    assert (c.k, c.embedding_dim, c.mu) == (4, 16, 0.15)
    assert (c.batch_source, c.batch_target) == (64, 64)
    assert (c.learning_rate, c.momentum, c.weight_decay) == (0.001, 0.9, 5e-4)
    assert c.pretrain_epochs == 5 and (c.lambda_epc, c.lambda_gaze) == (1.0, 1.0)
    t = c.train_config()
    assert t.neighbors.k == 4 and t.loss_weights.lambda_epc == 1.0


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\nmu = 0.3\nk = 6\n\n[model]\nhidden_layers = 8, 8\n")
    c = load_config(path, k=3)
    assert c.mu == 0.3 and c.k == 3 and c.hidden_layers == (8, 8)


@pytest.mark.parametrize("text", [
    "[train]\nmuu = 0.3\n",
    "[training]\nmu = 0.3\n",
    "[model]\nmu = 0.3\n",
    "[train]\nk = four\n",
    "[train]\nk = 1\n",
])
def test_bad_files_are_hard_errors(tmp_path, text):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_override():
    with pytest.raises(ConfigError):
        RunConfig().replace(nonsense=1)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.ini")


def test_snapshot_round_trip(tmp_path):
    c = RunConfig(seed=7, mu=0.05, lambda_reg=1e-4, early_stop_tol=None, subjects=(1, 3),
                  identical_subjects=True, learning_rate=0.1 + 0.2)
    back = load_config(dump_config(c, tmp_path / "snap.ini"))
    assert back == c


def test_parse_values():
    assert parse_value("lambda_reg", "none") is None
    assert parse_value("head_bias", "false") is False
    assert parse_value("subjects", "2,4") == (2, 4)
    assert parse_value("activation", "relu") == "relu"
