import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from basisflow import io
from basisflow.bases import build
from basisflow.cli import main
from basisflow.geometry import homography_to_flow

from conftest import random_homography


def tree_digest(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_help_and_usage_errors(capsys):
    for cmd in ("bases", "fit", "align", "synth", "eval", "project", "loss"):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0
        assert "default" in capsys.readouterr().out
    with pytest.raises(SystemExit) as e:
        main(["fit", "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "basisflow", "bases", "--width", "2",
                        "--height", "5", "--out", "unused"], capture_output=True, text=True)
    assert r.returncode == 1 and "width" in r.stderr


def test_bases(tmp_path, capsys):
    assert main(["bases", "--width", "64", "--height", "64", "--out", str(tmp_path / "b")]) == 0
    assert "orthonormality" in capsys.readouterr().out
    files = sorted(os.listdir(tmp_path / "b"))
    assert files == sorted([f"basis_{k}.flo" for k in range(1, 9)]
                           + [f"basis_{k}.ppm" for k in range(1, 9)] + ["meta.json"])
    meta = io.read_json(tmp_path / "b" / "meta.json")
    assert np.allclose(meta["r"], build(64, 64).r)
    assert main(["bases", "--width", "2", "--height", "64", "--out", str(tmp_path / "x")]) == 1


def test_basis_ppm_golden(tmp_path):
    main(["bases", "--width", "64", "--height", "64", "--out", str(tmp_path)])
    golden = os.path.join(os.path.dirname(__file__), "data", "bases64")
    for k in range(1, 9):
        with open(os.path.join(golden, f"basis_{k}.ppm"), "rb") as fh:
            assert (tmp_path / f"basis_{k}.ppm").read_bytes() == fh.read()


def test_fit_basis_column(tmp_path):
    main(["bases", "--width", "64", "--height", "64", "--out", str(tmp_path)])
    out = tmp_path / "w.json"
    assert main(["fit", "--flow", str(tmp_path / "basis_3.flo"), "--bases-size", "64x64",
                 "--out", str(out)]) == 0
    _, _, _, alpha, res = io.parse_weights_doc(io.read_json(out))
    assert np.max(np.abs(alpha - np.eye(8)[2])) < 1e-9
    assert main(["fit", "--flow", str(tmp_path / "basis_3.flo"), "--bases-size", "64x32",
                 "--out", str(out)]) == 2


def test_fit_robust_weightmap(tmp_path, rng):
    f = homography_to_flow(random_homography(rng, 80, 60, 1.5), 80, 60)
    f[10:37, 20:56] = (10.0, 0.0)
    io.write_flo(tmp_path / "c.flo", f)
    out = tmp_path / "w.json"
    assert main(["fit", "--flow", str(tmp_path / "c.flo"), "--bases-size", "80x60",
                 "--robust", "--loss", "welsch", "--out", str(out)]) == 0
    wm = io.read_pgm(tmp_path / "weightmap.pgm")
    assert wm[10:37, 20:56].mean() < 0.5 and wm[40:, :].mean() > 0.9
    # a single IRLS iteration cannot meet the tolerance: non-convergence exit code
    assert main(["fit", "--flow", str(tmp_path / "c.flo"), "--bases-size", "80x60",
                 "--robust", "--max-iters", "1", "--out", str(out)]) == 3


def synth_dir(tmp_path, name, spec):
    sp = tmp_path / f"{name}.json"
    sp.write_text(json.dumps(spec))
    out = tmp_path / name
    assert main(["synth", "--spec", str(sp), "--out", str(out)]) == 0
    return out


def test_synth_eval_align_roundtrip(tmp_path):
    spec = {"seed": 3, "width": 160, "height": 112, "rho": 6, "noise_sigma": 2 / 255,
            "n_samples": 2}
    d = synth_dir(tmp_path, "s", spec)
    assert sorted(os.listdir(d)) == ["RE_0000", "RE_0001"]
    assert main(["eval", "--dir", str(d), "--method", "align", "--out", str(tmp_path / "r.csv"),
                 "--curve", str(tmp_path / "c.csv")]) == 0
    rows = (tmp_path / "r.csv").read_text().splitlines()
    align_rows = [r.split(",") for r in rows if ",align," in r and ",mean," not in r]
    assert len(align_rows) == 2 and all(float(r[3]) < 0.5 for r in align_rows)
    curve = (tmp_path / "c.csv").read_text().splitlines()
    assert len(curve) == 31

    sample = d / "RE_0000"
    out = tmp_path / "al"
    assert main(["align", "--a", str(sample / "a.pgm"), "--b", str(sample / "b.pgm"),
                 "--levels", "3", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == sorted(["homography.json", "weights.json", "flow.flo",
                                             "warped.pgm", "diff.pgm", "report.json"])
    from basisflow.bench import point_matching_error
    from basisflow.geometry import Homography
    h = Homography(np.array(io.read_json(out / "homography.json")["matrix"]))
    pts = io.read_json(sample / "points.json")
    assert point_matching_error(h, pts["src"], pts["dst"]) < 0.5
    rep = io.read_json(out / "report.json")
    assert rep["converged"] and "total" in rep["losses"]


def test_align_identical_and_textureless(tmp_path):
    img = np.random.default_rng(0).random((64, 64))
    io.write_pgm(tmp_path / "a.pgm", img)
    assert main(["align", "--a", str(tmp_path / "a.pgm"), "--b", str(tmp_path / "a.pgm"),
                 "--out", str(tmp_path / "o")]) == 0
    m = np.array(io.read_json(tmp_path / "o" / "homography.json")["matrix"])
    assert np.max(np.abs(m - np.eye(3))) < 1e-9
    assert np.max(np.abs(io.read_flo(tmp_path / "o" / "flow.flo"))) < 1e-9
    io.write_pgm(tmp_path / "flat.pgm", np.full((64, 64), 0.5))
    assert main(["align", "--a", str(tmp_path / "flat.pgm"), "--b", str(tmp_path / "flat.pgm"),
                 "--out", str(tmp_path / "o2")]) == 3
    io.write_pgm(tmp_path / "small.pgm", img[:32])
    assert main(["align", "--a", str(tmp_path / "a.pgm"), "--b", str(tmp_path / "small.pgm"),
                 "--out", str(tmp_path / "o3")]) == 2


def test_synth_malformed_spec(tmp_path):
    bad = tmp_path / "bad.json"
    for text in ("{not json", json.dumps({"seed": 1, "bogus": 2}), json.dumps({"rho": -1}),
                 json.dumps([1, 2])):
        bad.write_text(text)
        assert main(["synth", "--spec", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_eval_identity_rho_zero(tmp_path):
    d = synth_dir(tmp_path, "z", {"seed": 1, "width": 64, "height": 48, "rho": 0, "n_samples": 2})
    assert main(["eval", "--dir", str(d), "--method", "identity", "--out",
                 str(tmp_path / "r.csv")]) == 0
    rows = [r.split(",") for r in (tmp_path / "r.csv").read_text().splitlines()[1:]]
    assert rows and all(float(r[3]) == 0.0 for r in rows)


def test_eval_jobs_same_output(tmp_path):
    d = synth_dir(tmp_path, "j", {"seed": 2, "width": 96, "height": 64, "rho": 3, "n_samples": 3})
    main(["eval", "--dir", str(d), "--method", "align", "--out", str(tmp_path / "a.csv")])
    main(["eval", "--dir", str(d), "--method", "align", "--out", str(tmp_path / "b.csv"),
          "--jobs", "2"])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_project(tmp_path, rng, capsys):
    feats = rng.normal(size=(8, 8, 32))
    io.write_fmap(tmp_path / "f.fmap", feats)
    canon = np.zeros((8, 8, 2))
    canon[0, 0, 0] = canon[0, 1, 1] = 1.0
    io.write_fmap(tmp_path / "v.fmap", canon)
    assert main(["project", "--features", str(tmp_path / "f.fmap"), "--basis",
                 str(tmp_path / "v.fmap"), "--reg", "0", "--out", str(tmp_path / "o.fmap"),
                 "--energy", str(tmp_path / "e.csv")]) == 0
    out = io.read_fmap(tmp_path / "o.fmap")
    expect = np.zeros_like(out)
    expect[0, :2] = io.read_fmap(tmp_path / "f.fmap")[0, :2]
    assert np.array_equal(out, expect)
    assert "NPC" in capsys.readouterr().out
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "index,energy_before,energy_after"
    assert float(lines[2].split(",")[2]) == 1.0  # rank 2 after projection
    dup = rng.normal(size=(8, 8, 3))
    dup[..., 2] = dup[..., 1]
    io.write_fmap(tmp_path / "d.fmap", dup)
    assert main(["project", "--features", str(tmp_path / "f.fmap"), "--basis",
                 str(tmp_path / "d.fmap"), "--reg", "0", "--out", str(tmp_path / "o.fmap")]) == 2


def test_loss(tmp_path, rng, capsys):
    img = rng.random((20, 24))
    io.write_pgm(tmp_path / "a.pgm", img)
    io.write_flo(tmp_path / "z.flo", np.zeros((20, 24, 2)))
    assert main(["loss", "--a", str(tmp_path / "a.pgm"), "--b", str(tmp_path / "a.pgm"),
                 "--flow-ab", str(tmp_path / "z.flo")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["total"] == 0.0 and rep["lambda"] == 1.0 and rep["mu"] == 0.001
    assert main(["loss", "--a", str(tmp_path / "a.pgm"), "--b", str(tmp_path / "a.pgm"),
                 "--flow-ab", str(tmp_path / "z.flo"), "--transform", "stack",
                 "--out", str(tmp_path / "l.json")]) == 0
    assert io.read_json(tmp_path / "l.json")["transform"] == "stack"
