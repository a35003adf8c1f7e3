import pytest

from sysca.config import DEFAULT_SNR_GRID, ExperimentConfig


def test_defaults_and_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.n == 3 and cfg.n_traces == 20000
    assert cfg.snr_grid == DEFAULT_SNR_GRID
    path = tmp_path / "cfg.json"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg


def test_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(strategy="adaptive")
    with pytest.raises(ValueError):
        ExperimentConfig(target_snr=-1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(input_hw=9)
    with pytest.raises(ValueError):
        ExperimentConfig(n_traces=1)
    with pytest.raises(ValueError):
        ExperimentConfig(weights=[[1, 2], [3, 4]])  # wrong shape for n=3
    with pytest.raises(ValueError):
        ExperimentConfig(n=2, weights=[[1, 2], [3, 400]])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus_key": 1})


def test_out_dir_env_default(monkeypatch):
    monkeypatch.setenv("SYSCA_OUT_DIR", "/tmp/elsewhere")
    assert ExperimentConfig().out_dir == "/tmp/elsewhere"
    monkeypatch.delenv("SYSCA_OUT_DIR")
    assert ExperimentConfig().out_dir == "results"


def test_replace():
    cfg = ExperimentConfig().replace(seed=7, target_snr=2.0)
    assert cfg.seed == 7 and cfg.target_snr == 2.0
