import subprocess
import sys

import pytest

from mmnowcast import cli, datagen, harness
from mmnowcast.tensor import ConfigurationError

TINY_TOML = """
[experiment]
models = ["perfect", "um-base1"]
trials = 1
master_seed = 4

[train]
max_epochs = 1
batch_size = 32
"""


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "ds"
    ds = datagen.build_dataset(config=datagen.DatasetConfig(seed=2, n_samples=60, n_days=4, render_resolution=64))
    datagen.save_dataset(ds, d)
    return d


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_config_file_and_overrides(tmp_path):
    p = _write(tmp_path, TINY_TOML)
    cfg = cli.load_config(str(p))
    assert cfg.models == ("perfect", "um-base1") and cfg.trials == 1 and cfg.train.max_epochs == 1
    assert cfg.e2e.lr == 1e-4  # untouched section keeps its defaults
    cfg = cli.load_config(str(p), {"trials": 3, "train.max_epochs": 7, "e2e.max_epochs": 2, "fusion": None})
    assert cfg.trials == 3 and cfg.train.max_epochs == 7 and cfg.e2e.max_epochs == 2 and cfg.fusion == "concat"


def test_load_config_rejects_unknown(tmp_path):
    with pytest.raises(ConfigurationError, match="colour"):
        cli.load_config(str(_write(tmp_path, "[experiment]\ncolour = 1\n")))
    with pytest.raises(ConfigurationError, match="momentum"):
        cli.load_config(str(_write(tmp_path, "[train]\nmomentum = 0.9\n")))
    with pytest.raises(FileNotFoundError):
        cli.load_config(str(tmp_path / "missing.toml"))


def test_resolved_snapshot_roundtrips(tmp_path):
    cfg = cli.load_config(str(_write(tmp_path, TINY_TOML)), {"fusion": "bilinear"})
    again = cli.load_config(str(_write(tmp_path, harness.config_to_toml(cfg), "r.toml")))
    assert again.train == cfg.train and again.e2e == cfg.e2e
    assert (again.models, again.trials, again.fusion, again.master_seed) == (cfg.models, cfg.trials, "bilinear", 4)


def test_subcommands_exist():
    p = cli.build_parser()
    for cmd in ("datagen", "train", "experiment", "surface", "report"):
        with pytest.raises(SystemExit) as ex:
            p.parse_args([cmd, "--help"])
        assert ex.value.code == 0


def test_errors_exit_with_two(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert cli.main(["experiment", "--trials", "1"]) == 2
    assert cli.main(["surface", "--out", str(tmp_path), "--step", "0"]) == 2


def test_datagen_command(tmp_path):
    assert cli.main(["datagen", "--seed", "1", "--n-samples", "40", "--resolution", "64", "--out", str(tmp_path / "d")]) == 0
    ds = datagen.load_dataset(tmp_path / "d")
    assert len(ds) == 40 and ds.config.render_resolution == 64


def test_surface_command(tmp_path):
    assert cli.main(["surface", "--max-error", "5", "--step", "5", "--scales", "1.0", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "surface_scale100.csv").read_text().splitlines()
    assert len(rows) == 1 + 9


def test_train_command(tmp_path, dataset_dir):
    cfg = _write(tmp_path, TINY_TOML)
    out = tmp_path / "t"
    assert cli.main(["train", "um-base2", "--trial", "0", "--config", str(cfg), "--dataset", str(dataset_dir),
                     "--out", str(out)]) == 0
    rows = harness.read_results_csv(out / "results.csv")
    assert [r.model for r in rows] == ["um-base2"]
    assert "models = [\"um-base2\"]" in (out / "config.resolved.toml").read_text()


def test_experiment_and_report_commands(tmp_path, dataset_dir):
    cfg = _write(tmp_path, TINY_TOML)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["experiment", "--config", str(cfg), "--dataset", str(dataset_dir), "--out", str(out)]) == 0
        runs.append(out)
    for f in ("results.csv", "summary.csv", "histories.csv", "seeds.txt"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
    assert cli.main(["report", str(runs[0] / "results.csv"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "summary.csv").read_bytes() == (runs[0] / "summary.csv").read_bytes()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mmnowcast", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "experiment" in out.stdout
