import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from psot.cli import main
from psot.fixtures import tri, wnu_instance
from psot.measures import DiscreteMeasure, SparsePlan, load_cloud, save_cloud


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def tri_files(tmp_path):
    paths = []
    for i, m in enumerate(tri()):
        p = tmp_path / f"mu{i + 1}.csv"
        save_cloud(m, p)
        paths.append(str(p))
    return paths


def test_compute_ps_tri(capsys, tri_files, tmp_path):
    plan_path = tmp_path / "plan.csv"
    code, rep = run(capsys, "compute", "--method", "ps", "--a", tri_files[0], "--b", tri_files[1],
                    "--theta", "1,0", "--plan-out", str(plan_path))
    assert code == 0
    assert rep["outputs"]["cost"] == pytest.approx(5.0, abs=1e-10)
    assert set(rep) == {"command", "inputs", "outputs", "seconds"}
    plan = SparsePlan.from_csv(plan_path, np.full(2, 0.5), np.full(2, 0.5)).validate()
    assert plan.nnz == 2


def test_compute_w2_self_is_zero(capsys, tri_files):
    code, rep = run(capsys, "compute", "--method", "w2", "--a", tri_files[0], "--b", tri_files[0])
    assert code == 0 and rep["outputs"]["cost_sq"] == pytest.approx(0.0, abs=1e-12)


def test_compute_wnu(capsys, tmp_path):
    names = []
    for name, m in zip(("nu", "a", "b"), wnu_instance()):
        save_cloud(m, tmp_path / f"{name}.csv")
        names.append(str(tmp_path / f"{name}.csv"))
    code, rep = run(capsys, "compute", "--method", "wnu", "--pivot", names[0], "--a", names[1], "--b", names[2])
    assert code == 0
    assert rep["outputs"]["cost_sq"] == pytest.approx(2.0, abs=1e-8)


def test_compute_minps_deterministic(capsys, tmp_path):
    rng = np.random.default_rng(0)
    for name in "ab":
        save_cloud(DiscreteMeasure(rng.normal(size=(40, 3))), tmp_path / f"{name}.csv")
    argv = ["compute", "--method", "minps", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv"),
            "--L", "30", "--seed", "7"]
    _, r1 = run(capsys, *argv)
    _, r2 = run(capsys, "--threads", "2", *argv)
    assert r1["outputs"]["cost_sq"] == r2["outputs"]["cost_sq"]
    assert r1["outputs"]["theta"] == r2["outputs"]["theta"]


def test_threads_env(capsys, tri_files, monkeypatch):
    monkeypatch.setenv("PSOT_THREADS", "3")
    code, rep = run(capsys, "compute", "--method", "minps", "--a", tri_files[0], "--b", tri_files[1])
    assert code == 0


def test_exit_codes(capsys, tri_files, tmp_path):
    assert main(["compute", "--method", "ps", "--a", str(tmp_path / "missing.csv"), "--b", tri_files[1],
                 "--theta", "1,0"]) == 3
    assert main(["compute", "--method", "ps", "--a", tri_files[0], "--b", tri_files[1]]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["compute", "--method", "nope", "--a", tri_files[0], "--b", tri_files[1]])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_bench_guard(capsys):
    assert main(["bench", "--n-list", "1e5", "--methods", "w2"]) == 4
    assert "sliced" in capsys.readouterr().err


def test_bench_writes_rows(capsys, tmp_path):
    out = tmp_path / "bench.csv"
    code, rep = run(capsys, "bench", "--n-list", "100,200", "--d", "3", "--L", "10", "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"minps", "es", "sw"}
    assert all(float(r["seconds"]) >= 0 for r in rows)


@pytest.mark.parametrize("name", ["tri", "lsself", "swggamb"])
def test_fixtures_filter(capsys, name):
    code, rep = run(capsys, "fixtures", "--filter", name)
    assert code == 0
    rows = rep["outputs"]["fixtures"]
    assert [r["name"] for r in rows] == [name] and rows[0]["pass"]


def test_flow_trace(capsys, tmp_path):
    rng = np.random.default_rng(1)
    save_cloud(DiscreteMeasure(rng.uniform(-1, 1, (20, 2))), tmp_path / "s.csv")
    save_cloud(DiscreteMeasure(rng.normal(size=(20, 2)) + 1), tmp_path / "t.csv")
    code, rep = run(capsys, "flow", "--functional", "minps", "--source", str(tmp_path / "s.csv"),
                    "--target", str(tmp_path / "t.csv"), "--iters", "30", "--L", "10",
                    "--trace", str(tmp_path / "trace.csv"), "--positions-out", str(tmp_path / "x.csv"),
                    "--eval-every", "10")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    assert len(rows) >= 2
    assert load_cloud(tmp_path / "x.csv").n == 20


def test_color_transfer_cli(capsys, tmp_path):
    from psot.apps import PixelCloud, load_image, save_image

    rng = np.random.default_rng(2)
    src = PixelCloud.from_array(rng.integers(0, 256, (5, 6, 3), dtype=np.uint8))
    tgt = PixelCloud.from_array(rng.integers(0, 256, (5, 6, 3), dtype=np.uint8))
    save_image(src, tmp_path / "s.png")
    save_image(tgt, tmp_path / "t.png")
    code, _ = run(capsys, "color-transfer", "--source", str(tmp_path / "s.png"), "--target",
                  str(tmp_path / "t.png"), "--out", str(tmp_path / "o.png"))
    assert code == 0
    out = load_image(tmp_path / "o.png").to_uint8().reshape(-1, 3)
    assert sorted(map(tuple, out.tolist())) == sorted(map(tuple, tgt.to_uint8().reshape(-1, 3).tolist()))


def test_register_cli(capsys, tmp_path):
    from psot.apps import RigidTransform, make_shape

    P = make_shape(80, 0)
    save_cloud(DiscreteMeasure(P), tmp_path / "s.csv")
    save_cloud(DiscreteMeasure(RigidTransform(np.eye(3), np.array([0.1, 0.0, 0.0])).apply(P)), tmp_path / "t.csv")
    code, rep = run(capsys, "register", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
                    "--method", "nn", "--report", str(tmp_path / "r.json"))
    assert code == 0
    assert rep["outputs"]["final_loss"] < 1e-12
    assert json.load(open(tmp_path / "r.json"))["method"] == "nn"


def test_module_entry_point(tri_files):
    res = subprocess.run([sys.executable, "-m", "psot", "compute", "--method", "ps", "--a", tri_files[0],
                          "--b", tri_files[2], "--theta", "1,0"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert res.returncode == 0
    assert json.loads(res.stdout)["outputs"]["cost"] == pytest.approx(1.0, abs=1e-10)
