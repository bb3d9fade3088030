import csv
import io
import json
from contextlib import redirect_stdout

import numpy as np
import pytest

from linecodec.cli import main
from linecodec.cloud import PointCloud, read_cloud, write_ply
from linecodec.codec import default_lambda_model
from linecodec.metrics import evaluate


def run(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "s.ply"
    assert run("gen-synthetic", "--lines", 8, "--points-per-line", 40, "--noise", 0.3,
               "--box", 256, "--seed", 1, "--output", path)[0] == 0
    return path


def test_gen_synthetic_deterministic(tmp_path, synth):
    other = tmp_path / "t.ply"
    run("gen-synthetic", "--lines", 8, "--points-per-line", 40, "--noise", 0.3, "--box", 256,
        "--seed", 1, "--output", other)
    assert synth.read_bytes() == other.read_bytes()
    truth = json.loads((tmp_path / "s_lines.json").read_text())
    assert len(truth) == 8


def test_gen_synthetic_two_points(tmp_path):
    p = tmp_path / "two.ply"
    assert run("gen-synthetic", "--lines", 1, "--points-per-line", 2, "--noise", 0,
               "--output", p)[0] == 0
    assert len(read_cloud(p, keep_duplicates=True)) == 2


def test_encode_decode_eval(tmp_path, synth):
    b, d, st = tmp_path / "s.bin", tmp_path / "d.ply", tmp_path / "st.json"
    code, out = run("encode", "--input", synth, "--output", b, "--qg", 4, "--stats", st)
    assert code == 0 and "bpp" in out
    stats = json.loads(st.read_text())
    assert stats["q_g"] == 4 and stats["bpp"] > 0
    assert run("decode", "--input", b, "--output", d)[0] == 0
    code, out = run("eval", "--ref", synth, "--test", d, "--out", tmp_path / "e.csv")
    row = list(csv.DictReader(io.StringIO(out)))[0]
    want = evaluate(read_cloud(synth), read_cloud(d))
    assert float(row["d1_mse"]) == pytest.approx(want.d1_mse)
    assert float(row["d2_psnr"]) == pytest.approx(want.d2_psnr, abs=1e-5)
    assert (tmp_path / "e.csv").exists()


def test_lossless_cli_roundtrip(tmp_path, synth):
    b, d = tmp_path / "s.bin", tmp_path / "d.ply"
    assert run("encode", "--input", synth, "--output", b, "--lossless")[0] == 0
    run("decode", "--input", b, "--output", d, "--ascii")
    assert read_cloud(synth).same_points(read_cloud(d))


def test_lambda_auto_derive(tmp_path, synth):
    st = tmp_path / "st.json"
    assert run("encode", "--input", synth, "--output", tmp_path / "x.bin", "--lambda", 10,
               "--stats", st)[0] == 0
    stats = json.loads(st.read_text())
    m = default_lambda_model()
    assert stats["lam"] == 10
    assert stats["q_g"] == pytest.approx(m.qg(10), rel=1e-6)
    assert stats["T"] == pytest.approx(m.T(10))


def test_no_linear(tmp_path, synth):
    st = tmp_path / "st.json"
    run("encode", "--input", synth, "--output", tmp_path / "x.bin", "--qg", 2, "--no-linear",
        "--stats", st)
    assert json.loads(st.read_text())["nodes_linear"] == 0


def test_eval_sentinel_and_shift(tmp_path):
    grid = np.array([[x, y, z] for x in range(0, 40, 10) for y in range(0, 40, 10)
                     for z in range(0, 40, 10)])
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    write_ply(PointCloud(grid), a)
    write_ply(PointCloud(grid + [1, 0, 0]), b)
    row = list(csv.DictReader(io.StringIO(run("eval", "--ref", a, "--test", a)[1])))[0]
    assert row["d1_psnr"] == "999.0" and row["d2_psnr"] == "999.0"
    row = list(csv.DictReader(io.StringIO(run("eval", "--ref", a, "--test", b)[1])))[0]
    assert float(row["d1_mse"]) == 1.0


def test_exit_codes(tmp_path, synth):
    assert run("encode", "--input", synth)[0] == 1  # missing --output
    assert run("bogus")[0] == 1
    assert run("encode", "--input", synth, "--output", tmp_path / "x", "--qg", -1)[0] == 1
    assert run("encode", "--input", tmp_path / "missing.ply", "--output", tmp_path / "x")[0] == 2
    (tmp_path / "junk.bin").write_bytes(b"nonsense")
    assert run("decode", "--input", tmp_path / "junk.bin", "--output", tmp_path / "o.ply")[0] == 2
    (tmp_path / "bad.ply").write_text("ply\nformat ascii 1.0\nend_header\n")
    assert run("encode", "--input", tmp_path / "bad.ply", "--output", tmp_path / "x")[0] == 2


def test_bdrate_cli(tmp_path):
    f = tmp_path / "rd.csv"
    rows = ["cloud,mode,qg,bpp,d1_psnr,d2_psnr"]
    for q, (r, p) in enumerate([(0.5, 30), (1, 36), (2, 41), (4, 45), (8, 999.0)]):
        rows.append(f"c,octree,{q},{r},{p},{p}")
        rows.append(f"c,linear,{q},{2 * r},{p},{p}")
    f.write_text("\n".join(rows) + "\n")
    code, out = run("bdrate", "--anchor", f, "--test", f, "--anchor-mode", "octree",
                    "--test-mode", "linear", "--metric", "d2")
    assert code == 0 and float(out) == pytest.approx(100.0, abs=0.5)


def test_sweep_single_cell_and_fit(tmp_path, monkeypatch):
    d = tmp_path / "train"
    d.mkdir()
    for s in (1, 2):
        run("gen-synthetic", "--lines", 4, "--points-per-line", 30, "--box", 128, "--seed", s,
            "--output", d / f"c{s}.ply")
    monkeypatch.setenv("LINECODEC_THREADS", "1")
    out = tmp_path / "opt.csv"
    code, _ = run("sweep", "--inputs", d, "--lambdas", "5", "--qgs", "4", "--t-steps", 1,
                  "--out", out, "--emit-plot-script", tmp_path / "p.gp")
    assert code == 0
    assert len(out.read_text().strip().splitlines()) == 2
    assert len((tmp_path / "opt_grid.csv").read_text().strip().splitlines()) == 2
    assert "opt.csv" in (tmp_path / "p.gp").read_text()
    code, text = run("fit-lambda", "--in", out, "--out", tmp_path / "m.json")
    assert code == 0 and "qg(lambda)" in text
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["qg_coeffs"] == [4.0, 0.0] and m["fit_residuals"] == [[0.0, 0.0]]


def test_sweep_empty_dir(tmp_path):
    (tmp_path / "e").mkdir()
    assert run("sweep", "--inputs", tmp_path / "e", "--out", tmp_path / "o.csv")[0] == 2
