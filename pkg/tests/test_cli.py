import json
import subprocess
import sys

import numpy as np
import pytest

from vgmls.cli import main


@pytest.fixture(scope="module")
def cloud(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["sample", "--manifold", "torus3", "--N", "400", "--seed", "1", "--out", str(d / "c.csv")]) == 0
    return d


def _common(d):
    return ["--cloud", str(d / "c.csv"), "--manifold", "torus3", "--K", "30", "--l", "3"]


def test_frames_and_assemble(cloud):
    d = cloud
    assert main(["frames", *_common(d), "--out", str(d / "f.csv")]) == 0
    assert main(["assemble", *_common(d), "--frames-file", str(d / "f.csv"), "--method", "extrinsic",
                 "--kind", "hodge", "--out", str(d / "op.txt")]) == 0
    head = open(d / "op.txt").readline()
    assert head.startswith("% dN 800 K 30 kind hodge")


def test_eig_from_operator_file(cloud):
    d = cloud
    if not (d / "op.txt").exists():
        test_frames_and_assemble(cloud)
    assert main(["eig", *_common(d), "--frames-file", str(d / "f.csv"), "--operator", str(d / "op.txt"),
                 "--mode", "dense", "--count", "6", "--out", str(d / "eig.csv")]) == 0
    vals = np.loadtxt(d / "eig.csv", delimiter=",", skiprows=1)
    assert vals.shape == (6, 3) and np.max(vals[:, 1]) <= 1e-10


def test_poisson_and_evolve(cloud):
    d = cloud
    assert main(["poisson", *_common(d), "--frames", "analytic", "--out", str(d / "u.csv")]) == 0
    assert np.loadtxt(d / "u.csv", delimiter=",").shape == (400, 2)
    assert main(["evolve", *_common(d), "--frames", "analytic", "--burgers", "--stepper", "cnab",
                 "--dt", "1e-3", "--t-end", "0.004", "--snapshot-every", "0.002", "--out", str(d / "snaps")]) == 0
    man = json.load(open(d / "snaps" / "manifest.json"))
    assert len(man["snapshots"]) == 3


def test_study_with_config(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("manifold = torus3\nN = 300,600,1200\nK = 30\nl_field = 2\ntask = projection\n")
    assert main(["study", "--config", str(cfg), "--output", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.csv").exists()
    assert main(["study", "--manifold", "torus3", "--N", "300", "--K", "30", "--l-field", "2",
                 "--output", str(tmp_path / "out2")]) == 0
    assert "unavailable" in (tmp_path / "out2" / "slopes.csv").read_text()


def test_validation_errors_exit_2(tmp_path, cloud):
    assert main(["sample", "--manifold", "klein", "--N", "10", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["frames", "--cloud", str(tmp_path / "missing.csv"), "--d", "2", "--out", "x"]) == 2
    assert main(["nonsense"]) == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("manifold = torus3\nbogus = 1\n")
    assert main(["study", "--config", str(cfg)]) == 2
    assert main(["assemble", *_common(cloud)[:-2], "--l", "9", "--out", str(tmp_path / "o")]) == 2


def test_numerical_failure_exit_3(cloud, tmp_path):
    # explicit RK2 far beyond its stability limit overflows
    code = main(["evolve", *_common(cloud), "--frames", "analytic", "--nu", "1000", "--dt", "0.1",
                 "--t-end", "20", "--out", str(tmp_path / "s")])
    assert code == 3


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "vgmls.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("sample", "frames", "assemble", "eig", "poisson", "evolve", "study"):
        assert cmd in out.stdout
