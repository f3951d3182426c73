import json
import math

import numpy as np
import pytest

from proxpnp.cli import EXIT_HYPOTHESIS, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, ExperimentSpec, default_params, main
from proxpnp.core import read_image


def test_default_params_table():
    nu = 7.65 / 255
    lam, sigma, flag = default_params("pgd", nu)
    assert lam == pytest.approx(0.99 * nu**2) and sigma == pytest.approx(0.5 * nu) and not flag
    nu = 12.75 / 255
    assert default_params("drs", nu)[:2] == pytest.approx((0.75 * nu**2, 0.5 * nu))
    assert default_params("drs", 0.01)[:2] == pytest.approx((5 * 0.01**2, 2 * 0.01))
    assert default_params("drs-diff", 0.03)[:2] == pytest.approx((0.99 * 0.03**2, 0.5 * 0.03))
    assert default_params("drs", 0.3, task="inpaint") == (2.0, 15 / 255, False)


def test_default_params_interpolation():
    with pytest.raises(ValueError):
        default_params("pgd", 0.02)
    nu = 0.02  # between 2.55/255 and 7.65/255
    lam, sigma, flag = default_params("drs", nu, interpolate=True)
    w = (nu - 0.01) / (0.03 - 0.01)
    assert flag
    assert lam / nu**2 == pytest.approx(5 + w * (1.5 - 5))
    assert sigma / nu == pytest.approx(2 + w * (1 - 2))
    assert default_params("pgd", 0.2, interpolate=True)[:2] == pytest.approx((0.99 * 0.04, 0.5 * 0.2))
    with pytest.raises(ValueError):
        default_params("sgd", 0.01)


def test_spec_round_trip_and_defaults():
    spec = ExperimentSpec(task="inpaint", algorithm="DRS", nu=0.0)
    assert ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    r = spec.resolved()
    assert (r.algorithm, r.lam, r.sigma, r.alpha, r.max_iter, r.denoiser) == ("drs", 2.0, 15 / 255, 0.5, 200, "linear")
    assert (r.warmup_iters, r.warmup_sigma) == (10, 50 / 255)
    assert ExperimentSpec(nu=0.01).resolved().alpha == 1.0


def restore(tmp_path, *flags, name="r"):
    out = tmp_path / name
    code = main(["restore", "--image", "synthetic:32", "--output", str(out), *flags])
    return code, out


def test_restore_writes_outputs(tmp_path):
    code, out = restore(tmp_path, "--nu", "0.03", "--max-iter", "40", "--snapshot-every", "10")
    assert code == EXIT_OK
    for name in ("ground_truth.png", "degraded.png", "restored.png", "restored.npy", "trace.csv", "summary.json",
                 "degradation.json"):
        assert (out / name).exists(), name
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "ok"
    assert s["spec"]["lam"] == pytest.approx(0.99 * 0.03**2)
    assert s["spec"]["sigma"] == pytest.approx(0.5 * 0.03)
    assert s["hypotheses"]["passed"]
    assert s["trajectory_spectral"]["passed"]
    assert s["psnr_output"] > s["psnr_input"]
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "k,F,envelope,residual_sq,min_residual_sq,yz_gap_sq,psnr"
    assert read_image(out / "restored.png").shape == (32, 32)


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"max_iter": 5, "algorithm": "drs-diff"}))
    code, out = restore(tmp_path, "--nu", "0.03", "--max-iter", "40", "--algorithm", "pgd", "--config", str(cfg))
    assert code == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["spec"]["max_iter"] == 5 and s["spec"]["algorithm"] == "drs_diff"
    assert len((out / "trace.csv").read_text().splitlines()) <= 6


def test_restore_from_observation(tmp_path):
    assert main(["degrade", "--image", "synthetic:32", "--nu", "0.03", "--output", str(tmp_path / "d")]) == EXIT_OK
    code, out = restore(tmp_path, "--nu", "0.03", "--max-iter", "10", "--observation",
                        str(tmp_path / "d" / "observation.npy"))
    assert code == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert "psnr_output" not in s


def test_exit_codes(tmp_path):
    assert main(["restore", "--bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert restore(tmp_path, "--nu", "0.02")[0] == EXIT_USAGE  # untabulated level without the flag
    assert restore(tmp_path, "--image", str(tmp_path / "missing.png"))[0] == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": 1}))
    assert restore(tmp_path, "--config", str(bad))[0] == EXIT_USAGE
    code, out = restore(tmp_path, "--nu", "0.03", "--lam", "0.01", name="hyp")
    assert code == EXIT_HYPOTHESIS
    assert json.loads((out / "summary.json").read_text())["status"] == "hypothesis failure"
    code, out = restore(tmp_path, "--nu", "0.03", "--lam", "1.0", "--override", "--max-iter", "1000", name="nan")
    assert code == EXIT_NUMERIC
    assert (out / "trace.csv").exists()


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("PNPPROX_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["degrade", "--image", "synthetic:16", "--nu", "0.03", "--name", "envrun"]) == EXIT_OK
    assert (tmp_path / "root" / "envrun" / "degraded.png").exists()


def test_verify_subcommand(tmp_path, capsys):
    assert main(["verify", "--output", str(tmp_path / "v")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_spectral_report(tmp_path):
    out = tmp_path / "table.csv"
    assert main(["spectral-report", "--sigmas", "0.01,0.05", "--corpus-size", "1", "--image-size", "16",
                 "--iters", "20", "--output", str(out)]) == EXIT_OK
    rows = [line.split(",") for line in out.read_text().splitlines()]
    assert rows[0] == ["denoiser", "0.01", "0.05"]
    assert {r[0] for r in rows[1:]} == {"pointwise", "linear"}
    assert all(float(v) < 0.9 * (1 + 1e-4) for r in rows[1:] for v in r[1:])


def test_batch_determinism(tmp_path):
    specs = [{"image": "synthetic:32", "nu": 0.03, "max_iter": 30, "name": "a"},
             {"image": "synthetic:32", "nu": 0.03, "max_iter": 30, "algorithm": "drs", "name": "b"},
             {"task": "inpaint", "image": "synthetic:32", "nu": 0.0, "algorithm": "drs", "max_iter": 20, "name": "c"}]
    path = tmp_path / "batch.json"
    path.write_text(json.dumps(specs))
    assert main(["batch", str(path), "--output", str(tmp_path / "one"), "--workers", "3"]) == EXIT_OK
    assert main(["batch", str(path), "--output", str(tmp_path / "two"), "--workers", "1"]) == EXIT_OK
    for name in ("a", "b", "c"):
        for f in ("trace.csv", "restored.png", "restored.npy"):
            assert (tmp_path / "one" / name / f).read_bytes() == (tmp_path / "two" / name / f).read_bytes()


def test_batch_errors(tmp_path):
    path = tmp_path / "batch.json"
    path.write_text(json.dumps({"not": "a list"}))
    assert main(["batch", str(path)]) == EXIT_USAGE
    path.write_text(json.dumps([{"name": "x"}, {"name": "x"}]))
    assert main(["batch", str(path), "--output", str(tmp_path)]) == EXIT_USAGE
    assert main(["batch", str(tmp_path / "none.json")]) == EXIT_USAGE


def test_trace_has_no_nan_text(tmp_path):
    code, out = restore(tmp_path, "--nu", "0.03", "--max-iter", "5", "--algorithm", "pgd")
    rows = (out / "trace.csv").read_text().splitlines()[1:]
    for row in rows:
        vals = row.split(",")
        assert "nan" not in vals
        assert all(v == "" or math.isfinite(float(v)) for v in vals[1:])
