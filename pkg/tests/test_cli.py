import csv

import numpy as np
import pytest

from elsim.agent import METRICS_HEADER
from elsim.cli import main

SMALL = "hidden = 16\nbuffer_size = 200\nn_envs = 2\nbatch_size = 16\n"


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_train_writes_all_outputs(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--env", "four-rooms", "--out", str(out),
                 "--seed", "5", "--steps", "600"]) == 0
    with open(out / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRICS_HEADER and len(rows) == 7
    layout = (out / "layout.txt").read_text().splitlines()
    assert len(layout) == 19 and all(len(r) == 19 for r in layout)
    assert (out / "tree.json").exists()
    grid = np.loadtxt(out / "density_root.csv", delimiter=",")
    assert grid.shape == (19, 19) and grid.sum() == 500
    assert (out / "density_3.csv").exists()


def test_eval_and_transfer_from_snapshot(tmp_path, config):
    src = tmp_path / "src"
    main(["train", "--config", str(config), "--out", str(src), "--steps", "400"])
    snap = src / "tree.json"
    ev = tmp_path / "ev"
    assert main(["eval", "--config", str(config), "--snapshot", str(snap), "--out", str(ev)]) == 0
    assert sorted(p.name for p in ev.glob("density_*.csv"))[0] == "density_0.csv"
    tr = tmp_path / "tr"
    assert main(["transfer", "--config", str(config), "--snapshot", str(snap), "--env",
                 "wall-reward", "--out", str(tr), "--episodes", "5"]) == 0
    assert len((tr / "metrics.csv").read_text().splitlines()) == 6
    assert len((tr / "baseline.csv").read_text().splitlines()) == 6
    # the snapshot written after transfer holds the same skills
    assert (tr / "tree.json").read_text().count('"id"') == snap.read_text().count('"id"')


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path)]) == 2
    assert "snapshot" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_unknown_env_rejected():
    with pytest.raises(SystemExit):
        main(["train", "--env", "maze"])
