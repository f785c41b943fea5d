import csv

import numpy as np
import pytest

from mlpdenoise.cli import run
from mlpdenoise.imageio import read_image, write_image
from mlpdenoise.mlp import init_mlp, load, parse_architecture, save
from mlpdenoise.numerics import make_rng
from mlpdenoise.sparse import load_dictionary


@pytest.fixture
def workspace(tmp_path):
    rng = make_rng(0)
    clean = tmp_path / "clean"
    clean.mkdir()
    for i in range(2):
        r, c = np.mgrid[0:24, 0:24]
        img = 128 + 60 * np.sin(r / (3 + i)) * np.cos(c / 4) + rng.normal(0, 5, (24, 24))
        write_image(clean / f"img{i}.pgm", img)
    model = tmp_path / "net.mlpd"
    save(init_mlp(parse_architecture("(7,2x12,3)"), make_rng(1)), model)
    one = tmp_path / "one.mlpd"
    save(init_mlp(parse_architecture("(5,10,3)"), make_rng(2)), one)
    return {"root": tmp_path, "clean": clean, "model": model, "one": one, "img": clean / "img0.pgm"}


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_usage_errors(workspace, capsys):
    assert run([]) == 1
    assert run(["denoise", "--model", str(workspace["model"]), "--bogus", "1"]) == 1
    assert run(["frobnicate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_files_are_io_errors(workspace, capsys):
    root = workspace["root"]
    assert run(["denoise", "--model", str(root / "none.mlpd"), "--in", str(workspace["img"]),
                "--out", str(root / "o.png")]) == 2
    assert "--model" in capsys.readouterr().err
    assert run(["denoise", "--model", str(workspace["model"]), "--in", str(root / "none.png"),
                "--out", str(root / "o.png")]) == 2
    assert "--in" in capsys.readouterr().err
    assert run(["train", "--config", str(root / "none.cfg"), "--out", str(root / "run")]) == 2
    (root / "bad.mlpd").write_bytes(b"XXXX")
    assert run(["evaluate", "--model", str(root / "bad.mlpd"), "--clean", str(workspace["clean"]),
                "--sigma", "25"]) == 2
    assert "bad magic" in capsys.readouterr().err


def test_denoise_geometry_mismatch(workspace, capsys):
    args = ["denoise", "--model", str(workspace["model"]), "--in", str(workspace["img"]),
            "--out", str(workspace["root"] / "o.png")]
    assert run(args + ["--input-edge", "9"]) == 1
    assert "dimension mismatch" in capsys.readouterr().err
    assert run(args + ["--stride", "4"]) == 1
    assert run(args) == 0
    assert read_image(workspace["root"] / "o.png").shape == (24, 24)


def test_evaluate_without_noise_gives_inf(workspace, capsys):
    out = workspace["root"] / "eval.csv"
    copy_model = workspace["root"] / "copy.mlpd"
    net = init_mlp(parse_architecture("(1,1)"), make_rng(0))
    net.weights[0][:] = 1e-6
    net.weights[1][:] = 1e6
    save(net, copy_model)
    assert run(["evaluate", "--model", str(copy_model), "--clean", str(workspace["clean"]), "--sigma", "0",
                "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["image", "noisy_psnr", "denoised_psnr"]
    assert [r[1] for r in rows[1:]] == ["inf"] * 3
    assert rows[-1][0] == "mean"
    assert "# seed=0" in capsys.readouterr().out


def test_noise_command(workspace, capsys):
    out = workspace["root"] / "noisy.pgm"
    assert run(["noise", "--in", str(workspace["img"]), "--out", str(out), "--kind", "salt_pepper",
                "--p", "1", "--seed", "3"]) == 0
    assert set(np.unique(read_image(out))) <= {0.0, 255.0}
    assert run(["noise", "--in", str(workspace["img"]), "--out", str(out), "--kind", "speckle"]) == 1
    first = read_image(out)
    assert run(["noise", "--in", str(workspace["img"]), "--out", str(out), "--seed", "3", "--kind", "salt_pepper",
                "--p", "1"]) == 0
    assert np.array_equal(read_image(out), first)


@pytest.mark.parametrize("what,extra", [
    ("histogram", ["--n", "500", "--bins", "10"]),
    ("entropy", ["--n", "500"]),
    ("covariance", ["--n", "500", "--m", "4"]),
    ("spectrum", ["--layer", "0"]),
])
def test_analyze_csv_outputs(workspace, what, extra):
    out = workspace["root"] / f"{what}.csv"
    args = ["analyze", what, "--model", str(workspace["model"]), "--images", str(workspace["clean"]),
            "--out", str(out), "--seed", "5"] + extra
    assert run(args) == 0
    first = out.read_bytes()
    assert run(args) == 0
    assert out.read_bytes() == first
    rows = read_csv(out)
    if what == "entropy":
        assert rows[0] == ["index", "mean", "variance", "entropy_bits"] and len(rows) == 13
    if what == "spectrum":
        assert len(rows) == 13


def test_analyze_montages(workspace):
    root = workspace["root"]
    assert run(["analyze", "filters", "--model", str(workspace["model"]), "--out", str(root / "f.png"),
                "--cols", "4"]) == 0
    det, gen = read_image(root / "f_detectors.png"), read_image(root / "f_generators.png")
    assert det.shape == (3 * 7 + 2, 4 * 7 + 3) and gen.shape == (3 * 3 + 2, 4 * 3 + 3)
    assert run(["analyze", "output-patterns", "--model", str(workspace["model"]), "--out",
                str(root / "o.png"), "--count", "10", "--cols", "4"]) == 0
    grid = read_image(root / "o.png")
    assert grid.shape == (11, 15) and np.all(grid[8:, 8:] == 128)
    assert run(["analyze", "actmax", "--model", str(workspace["model"]), "--out", str(root / "a.png"),
                "--count", "3", "--steps", "20", "--csv", str(root / "a.csv")]) == 0
    assert len(read_csv(root / "a.csv")) == 4


def test_analyze_saturation_and_importance(workspace):
    root = workspace["root"]
    assert run(["analyze", "saturation", "--model", str(workspace["one"]), "--csv", str(root / "s.csv")]) == 0
    assert [r[0] for r in read_csv(root / "s.csv")[1:]] == ["with_tanh", "bypass_tanh", "hard_threshold"]
    assert run(["analyze", "saturation", "--model", str(workspace["model"])]) == 1
    assert run(["analyze", "importance", "--model", str(workspace["one"]), "--images", str(workspace["clean"]),
                "--subset", "5", "--iterations", "3", "--out", str(root / "i.csv")]) == 0
    assert len(read_csv(root / "i.csv")) == 11
    assert run(["analyze", "importance", "--model", str(workspace["one"]), "--images", str(workspace["clean"]),
                "--subset", "50"]) == 1


def test_analyze_bad_layer(workspace, capsys):
    assert run(["analyze", "entropy", "--model", str(workspace["model"]), "--images", str(workspace["clean"]),
                "--layer", "5"]) == 1
    assert "--layer" in capsys.readouterr().err


def test_dict_commands(workspace):
    root = workspace["root"]
    assert run(["dict", "export", "--model", str(workspace["model"]), "--out", str(root / "d.bin")]) == 0
    D = load_dictionary(root / "d.bin")
    assert np.array_equal(D.atoms, load(workspace["model"]).weights[-1])
    assert run(["dict", "approx", "--model", str(workspace["model"]), "--clean", str(workspace["clean"]),
                "--out", str(root / "ap.csv")]) == 0
    assert read_csv(root / "ap.csv")[0] == ["image", "approx_psnr"]
    assert run(["dict", "omp-denoise", "--model", str(workspace["model"]), "--clean", str(workspace["clean"]),
                "--out", str(root / "omp.csv"), "--seed", "2"]) == 0
    rows = read_csv(root / "omp.csv")
    assert rows[0] == ["image", "noisy_psnr", "mlp_psnr", "mlp_omp_psnr"] and len(rows) == 3


def test_train_determinism_and_abort(workspace, capsys):
    root = workspace["root"]
    cfg = root / "t.cfg"
    cfg.write_text("corpus_dir = clean\ntest_dir = clean\narch = (5,8,3)\nmax_updates = 300\n"
                   "report_every = 100\nseed = 4\nwall_clock = false\n", encoding="utf-8")
    assert run(["train", "--config", str(cfg), "--out", str(root / "r1")]) == 0
    assert run(["train", "--config", str(cfg), "--out", str(root / "r2")]) == 0
    for name in ("model.mlpd", "progress.csv", "progress.meta"):
        assert (root / "r1" / name).read_bytes() == (root / "r2" / name).read_bytes()
    assert "# seed=4" in capsys.readouterr().out
    assert run(["train", "--config", str(cfg), "--out", str(root / "r3"), "--seed", "5"]) == 0
    assert (root / "r1" / "model.mlpd").read_bytes() != (root / "r3" / "model.mlpd").read_bytes()
    assert run(["train", "--config", str(cfg), "--out", str(root / "r4"), "--arch", "(5,,3)"]) == 1
    bad = root / "diverge.cfg"
    bad.write_text(cfg.read_text() + "lr_initial = 1e150\nswitch_update = 300\n", encoding="utf-8")
    assert run(["train", "--config", str(bad), "--out", str(root / "r5")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_writes_only_flagged_paths(workspace):
    root = workspace["root"]
    before = {p for p in root.rglob("*")}
    out = root / "sub" / "den.png"
    assert run(["denoise", "--model", str(workspace["model"]), "--in", str(workspace["img"]), "--out", str(out)]) == 0
    assert {p for p in root.rglob("*")} - before == {root / "sub", out}
