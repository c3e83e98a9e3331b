import csv
import glob
import json
import os

import numpy as np
import pytest
import yaml

from flgsr import cli
from flgsr.config import (ConfigError, RunEntry, entry_seed, expand_runs, load_config, stable_hash,
                          validate)
from flgsr.data import GrayImage, load_builtin, save_image

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SHIPPED = sorted(glob.glob(os.path.join(ROOT, "configs", "*.yaml")))


def write_config(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture
def small_image(tmp_path):
    img = load_builtin("camera").pixels[200:248, 220:268]
    save_image(GrayImage(img), str(tmp_path / "patch.pgm"))
    return "patch.pgm"


def read_rows(out):
    with open(os.path.join(out, "results.csv"), newline="") as fh:
        return list(csv.reader(fh))


SMALL_SYNTH = dict(mode="synthetic", sr=0.7, seed=3, synthetic=dict(m=20, n=15, rank=2),
                   solver=dict(groups=15, reg_weight=2e-3, outer_tol=1e-6))


@pytest.mark.parametrize("path", SHIPPED, ids=os.path.basename)
def test_shipped_configs_validate(path):
    assert validate(path) == []


def test_shipped_configs_exist():
    names = {os.path.basename(p) for p in SHIPPED}
    assert {"synthetic.yaml", "inpaint_camera.yaml", "ablate_groups.yaml", "ablate_restart.yaml"} <= names


def test_rho_out_of_range_named(tmp_path):
    diags = validate(write_config(tmp_path, dict(SMALL_SYNTH, solver=dict(groups=15, rho2=1.5))))
    assert len(diags) == 1 and "rho2" in diags[0]


def test_too_many_groups_for_image(tmp_path):
    cfg = dict(mode="inpaint", images=["builtin:camera"], solver=dict(groups=1000))
    diags = validate(write_config(tmp_path, cfg))
    assert len(diags) == 1 and "1000" in diags[0] and "512" in diags[0]


def test_collects_every_problem(tmp_path):
    cfg = dict(mode="inpaint", images=["nope.pgm"], sr=1.5, colour="red",
               solver=dict(rho1=0.0, elam=dict(gamma=0.5, bogus=1)))
    diags = validate(write_config(tmp_path, cfg))
    text = "\n".join(diags)
    for needle in ("nope.pgm", "sr", "colour", "solver.rho1", "solver.elam.gamma", "solver.elam.bogus"):
        assert needle in text
    assert len(diags) == 6


def test_bad_mode_and_yaml(tmp_path):
    assert any("mode" in d for d in validate(write_config(tmp_path, dict(mode="paint"))))
    p = tmp_path / "broken.yaml"
    p.write_text("mode: [unclosed\n")
    assert validate(str(p))
    with pytest.raises(OSError):
        validate(str(tmp_path / "missing.yaml"))


def test_load_config_raises_config_error(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write_config(tmp_path, dict(SMALL_SYNTH, seed=-1)))
    assert "seed" in str(exc.value)


def test_solver_defaults_and_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path, dict(mode="inpaint", images=["builtin:camera"],
                                                  solver=dict(elam=dict(max_inner=7)))))
    s = cfg.solver
    assert (s.eta0, s.vartheta, s.eps0, s.rho1, s.rho2, s.rho3) == (1e-3, 10, 10.0, 0.999, 0.5, 0.5)
    assert s.groups == 32 and s.phi.kind.value == "CapLog"
    assert s.elam.max_inner == 7 and s.elam.inner_tol == 3e-3


def test_expand_runs_per_mode(tmp_path, small_image):
    base = dict(images=[small_image], size=32)
    cfg = load_config(write_config(tmp_path, dict(base, mode="ablate_groups", groups=[1, 2, 4])))
    assert [e.groups for e in expand_runs(cfg)] == [1, 2, 4]
    cfg = load_config(write_config(tmp_path, dict(base, mode="ablate_restart", solver=dict(groups=4))))
    assert [(e.groups, e.restart) for e in expand_runs(cfg)] == [(4, True), (4, False)]
    cfg = load_config(write_config(tmp_path, dict(base, mode="inpaint", solver=dict(groups=4))))
    assert len(expand_runs(cfg)) == 1


def test_entry_seeds_are_stable():
    assert stable_hash("builtin:camera") == stable_hash("builtin:camera")
    assert entry_seed(0, "a") != entry_seed(0, "b")
    assert entry_seed(5, "a") == 5 ^ stable_hash("a")
    # solver settings never change the data stream of an image
    assert RunEntry("x", "ablate_groups", 1, True).data_key == RunEntry("x", "ablate_groups", 8, False).data_key


def test_run_synthetic_outputs(tmp_path):
    out = str(tmp_path / "out")
    code = cli.main(["run", write_config(tmp_path, SMALL_SYNTH), "--out", out])
    assert code == 0
    rows = read_rows(out)
    assert rows[0] == ["image", "mode", "groups", "restart_on", "psnr_db", "ssim", "rel_err",
                       "wall_time_s", "outer_iters", "restarts"]
    assert len(rows) == 2 and rows[1][:4] == ["synthetic", "synthetic", "15", "1"]
    assert float(rows[1][6]) < 1e-3
    man = json.load(open(os.path.join(out, "manifest.json")))
    assert man["seed"] == 3 and man["software"]["package"] == "flgsr"
    run = man["runs"][0]
    assert os.path.exists(os.path.join(out, run["output"]))
    cfg = load_config(os.path.join(out, "manifest.json"))
    _, P, _ = cli.build_instance(expand_runs(cfg)[0], cfg)
    np.testing.assert_array_equal(cli.decode_mask(run["mask"], P.shape), P.mask)
    assert run["mask"]["count"] == P.nobs


def test_run_image_modes(tmp_path, small_image):
    out = str(tmp_path / "out")
    cfg = dict(mode="ablate_restart", images=[small_image], size=32, solver=dict(groups=4, max_outer=30))
    assert cli.run(write_config(tmp_path, cfg), out) == 0
    rows = read_rows(out)[1:]
    assert [(r[0], r[2], r[3]) for r in rows] == [("patch.pgm", "4", "1"), ("patch.pgm", "4", "0")]
    assert rows[1][9] == "0"
    pgms = sorted(os.listdir(out))
    assert "patch_pgm_ablate_restart_g4_r0.pgm" in pgms and "patch_pgm_ablate_restart_g4_r1.pgm" in pgms
    with open(os.path.join(out, "patch_pgm_ablate_restart_g4_r1.pgm"), "rb") as fh:
        assert fh.read(2) == b"P5"


def strip_time(rows):
    i = rows[0].index("wall_time_s")
    return [r[:i] + r[i + 1:] for r in rows]


def pgm_bytes(out):
    return {f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out)) if f.endswith(".pgm")}


def test_reproducible_from_config_and_manifest(tmp_path, small_image):
    cfg = dict(mode="ablate_groups", images=[small_image], size=32, groups=[1, 2, 4],
               solver=dict(max_outer=30))
    path = write_config(tmp_path, cfg)
    a, b, c = (str(tmp_path / n) for n in "abc")
    assert cli.run(path, a) == 0
    assert cli.run(path, b) == 0
    assert cli.run(os.path.join(a, "manifest.json"), c) == 0
    assert strip_time(read_rows(a)) == strip_time(read_rows(b)) == strip_time(read_rows(c))
    assert pgm_bytes(a) == pgm_bytes(b) == pgm_bytes(c)


def test_threads_do_not_change_results(tmp_path, small_image):
    cfg = dict(mode="ablate_groups", images=[small_image], size=32, groups=[4, 1, 2],
               solver=dict(max_outer=30))
    path = write_config(tmp_path, cfg)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.run(path, a, env={"FLGSR_THREADS": "1"}) == 0
    assert cli.run(path, b, env={"FLGSR_THREADS": "3"}) == 0
    rows = read_rows(b)
    assert [r[2] for r in rows[1:]] == ["1", "2", "4"]
    assert strip_time(read_rows(a)) == strip_time(rows)
    assert pgm_bytes(a) == pgm_bytes(b)


def test_thread_count_parsing():
    assert cli.thread_count({}) == 1
    assert cli.thread_count({"FLGSR_THREADS": "4"}) == 4
    for bad in ("0", "-2", "many"):
        with pytest.raises(ConfigError):
            cli.thread_count({"FLGSR_THREADS": bad})


def test_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, dict(SMALL_SYNTH, solver=dict(groups=15, rho2=1.5)), "bad.yaml")
    assert cli.main(["validate", bad]) == 1
    assert "rho2" in capsys.readouterr().out
    assert cli.main(["run", bad, "--out", str(tmp_path / "x")]) == 1
    assert "rho2" in capsys.readouterr().err
    good = write_config(tmp_path, SMALL_SYNTH, "good.yaml")
    assert cli.main(["validate", good]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    assert cli.run(good, str(tmp_path / "y"), env={"FLGSR_THREADS": "zero"}) == 1
    assert cli.main(["validate", str(tmp_path / "absent.yaml")]) == 1

    overflow = dict(SMALL_SYNTH, solver=dict(groups=15, eta0=1e300, restart=False, outer_tol=1e-300,
                                             max_outer=50, elam=dict(max_inner=2)))
    out = str(tmp_path / "z")
    assert cli.main(["run", write_config(tmp_path, overflow, "boom.yaml"), "--out", out]) == 2
    err = capsys.readouterr().err
    assert "outer iteration" in err
    man = json.load(open(os.path.join(out, "manifest.json")))
    assert man["runs"] == [] and man["failures"][0]["outer"] is not None
    assert read_rows(out) == [cli.CSV_COLUMNS]
