import csv
import json

import numpy as np
import pytest

from proxybdpt.cli import main
from proxybdpt.metrics import compare, default_eps, mape, mse, smape
from proxybdpt.transport import read_pfm, write_pfm


def last_json(capfd):
    out = capfd.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


# ---------------------------------------------------------------------------
# metrics


def test_identical_images_score_zero():
    img = np.random.default_rng(0).random((4, 5, 3))
    rep = compare(img, img)
    assert rep.mape == 0 and rep.mse == 0 and rep.smape == 0


def test_mape_worked_example():
    assert mape(np.array([1.0, 3.0]), np.array([2.0, 4.0]), eps=0.0) == pytest.approx(0.375)


def test_mape_constant_shift_on_bright_image():
    r = 100.0 + np.random.default_rng(1).random((8, 8, 3))
    c = 2.0
    assert mape(r + c, r) == pytest.approx(c / r.mean(), rel=1e-2)


@pytest.mark.parametrize("k", [0.5, 2.0, 10.0])
def test_mape_scale_invariant(k):
    rng = np.random.default_rng(2)
    r = rng.random((6, 6, 3))
    e = r + 0.1 * rng.normal(size=r.shape)
    assert mape(k * e, k * r) == pytest.approx(mape(e, r), rel=1e-12)
    assert default_eps(k * r) == pytest.approx(k * default_eps(r), rel=1e-12)


def test_metric_formulas():
    e = np.array([[[1.0, 2.0, 0.0]]])
    r = np.array([[[2.0, 2.0, 1.0]]])
    eps = 0.1
    assert mse(e, r) == pytest.approx((1 + 0 + 1) / 3)
    assert smape(e, r, eps) == pytest.approx((1 / 1.6 + 0 + 1 / 0.6) / 3)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mape(np.ones((2, 2, 3)), np.ones((3, 2, 3)))


# ---------------------------------------------------------------------------
# render


def render(tmp_path, name, *extra):
    prefix = tmp_path / name
    code = main(["render", "diffuse_box", "--integrator", "pt", "--out", str(prefix), *extra])
    return code, prefix


def test_render_writes_outputs(tmp_path, capfd):
    code, prefix = render(tmp_path, "a", "--spp", "2")
    assert code == 0
    for suffix in (".pfm", ".stderr.pfm", ".png"):
        assert (tmp_path / f"a{suffix}").exists()
    s = last_json(capfd)
    assert s["spp"] == 2 and s["image"].endswith("a.pfm")


def test_fixed_seed_is_bitwise_identical(tmp_path):
    for name in ("a", "b"):
        assert render(tmp_path, name, "--spp", "3", "--seed", "7")[0] == 0
    assert (tmp_path / "a.pfm").read_bytes() == (tmp_path / "b.pfm").read_bytes()
    assert render(tmp_path, "c", "--spp", "3", "--seed", "8")[0] == 0
    assert (tmp_path / "a.pfm").read_bytes() != (tmp_path / "c.pfm").read_bytes()


def test_config_file_and_flag_override(tmp_path, capfd):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": "diffuse_box", "integrator": "pt", "spp": 2, "out": str(tmp_path / "f")}))
    assert main(["render", "--config", str(cfg)]) == 0
    assert last_json(capfd)["spp"] == 2
    assert main(["render", "--config", str(cfg), "--spp", "3"]) == 0
    assert last_json(capfd)["spp"] == 3


def test_convergence_rows_with_reference(tmp_path, capfd):
    _, ref = render(tmp_path, "ref", "--spp", "8")
    conv = tmp_path / "conv.csv"
    code, _ = render(tmp_path, "x", "--spp", "4", "--seed", "1",
                     "--reference", f"{ref}.pfm", "--convergence", str(conv))
    assert code == 0
    assert "mape" in last_json(capfd)
    with open(conv) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["pass", "elapsed_s", "mape"]
    passes = [int(r[0]) for r in rows[1:]]
    assert passes and passes == sorted(passes)
    assert all(float(r[2]) >= 0 for r in rows[1:])


def test_time_budget_mode(tmp_path, capfd):
    code, _ = render(tmp_path, "t", "--time", "0.3")
    assert code == 0
    s = last_json(capfd)
    assert s["spp"] >= 1 and s["elapsed_s"] < 5


def test_proxy_on_diffuse_scene_matches_bdpt(tmp_path):
    for integ in ("bdpt", "proxy-bdpt"):
        assert main(["render", "diffuse_box", "--integrator", integ, "--spp", "2",
                     "--out", str(tmp_path / integ)]) == 0
    assert np.array_equal(read_pfm(tmp_path / "bdpt.pfm"), read_pfm(tmp_path / "proxy-bdpt.pfm"))


@pytest.mark.parametrize("args", [
    ["--spp", "0"],
    ["--spp", "2", "--time", "1"],
    [],
    ["--time", "-1"],
    ["--spp", "2", "--recip-repeats", "0"],
    ["--spp", "2", "--integrator", "mlt"],
])
def test_validation_errors_exit_2(tmp_path, args):
    assert main(["render", "diffuse_box", "--out", str(tmp_path / "v"), *args]) == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["render", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"scene": "diffuse_box", "spp": 1, "colour": 3}))
    assert main(["render", "--config", str(bad)]) == 2


def test_missing_scene_file_exits_1(tmp_path, capfd):
    assert main(["render", str(tmp_path / "missing.json"), "--spp", "1"]) == 1
    assert "missing.json" in capfd.readouterr().err


def test_invalid_scene_exits_2(tmp_path):
    bad = tmp_path / "scene.json"
    bad.write_text(json.dumps({"materials": []}))
    assert main(["render", str(bad), "--spp", "1"]) == 2


def test_unwritable_output_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["render", "diffuse_box", "--integrator", "pt", "--spp", "1", "--out", str(blocker / "x")]) == 1


# ---------------------------------------------------------------------------
# compare, bench, dump-stats


def test_compare_command(tmp_path, capfd):
    write_pfm(tmp_path / "e.pfm", np.full((2, 2, 3), 1.0, dtype=np.float32))
    write_pfm(tmp_path / "r.pfm", np.full((2, 2, 3), 2.0, dtype=np.float32))
    assert main(["compare", str(tmp_path / "e.pfm"), str(tmp_path / "r.pfm"), "--eps", "0"]) == 0
    s = last_json(capfd)
    assert s["mape"] == pytest.approx(0.5) and s["mse"] == pytest.approx(1.0)


def test_compare_missing_file_exits_1(tmp_path, capfd):
    assert main(["compare", str(tmp_path / "no.pfm"), str(tmp_path / "no2.pfm")]) == 1
    assert "no.pfm" in capfd.readouterr().err


def test_compare_size_mismatch_exits_2(tmp_path):
    write_pfm(tmp_path / "e.pfm", np.ones((2, 2, 3), dtype=np.float32))
    write_pfm(tmp_path / "r.pfm", np.ones((3, 2, 3), dtype=np.float32))
    assert main(["compare", str(tmp_path / "e.pfm"), str(tmp_path / "r.pfm")]) == 2


def test_bench_smis(tmp_path):
    out = tmp_path / "smis.csv"
    assert main(["bench", "smis", "--trials", "2000", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,alpha,beta,integrand,variance,mean_cost,bias"
    assert main(["bench", "smis", "--trials", "10"]) == 2


def test_bench_recip(tmp_path):
    out = tmp_path / "recip.csv"
    assert main(["bench", "recip", "--trials", "20000", "--out", str(out)]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    zero = [r for r in rows if r["fixture"] == "f_prop_q"]
    assert zero and all(float(r["variance"]) == 0 for r in zero)
    disc = {r["method"]: float(r["efficiency"]) for r in rows if r["fixture"] == "discrete_1_3" and r["method"] != "booth"}
    assert disc["ours"] >= disc["sign"]
    assert main(["bench", "recip", "--r-grid", "1,-2"]) == 2


def test_dump_stats(tmp_path, capfd):
    out = tmp_path / "stats.csv"
    assert main(["dump-stats", "mirror_box", "--paths", "4096", "--out", str(out)]) == 0
    assert out.exists() and len(out.read_text().splitlines()) > 1


def test_bench_is_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["bench", "recip", "--trials", "10000", "--seed", "3", "--out", str(p)]) == 0
    assert a.read_text() == b.read_text()
