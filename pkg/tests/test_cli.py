import json

import pytest

from homlab.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _final(out):
    return float(out.split()[0].split("=")[1])


def test_slope_example(capsys, tmp_path):
    dst = tmp_path / "slope.csv"
    code, out, _ = run(capsys, "slope", "--problem", "example1", "--u", "2", "--horizon", "10000", "-o", str(dst))
    assert code == 0
    first, second = out.splitlines()
    assert first.startswith("lambda=-1.73205 radius=1.1e-03 method=trajectory")
    assert second.startswith("quadrature lambda=-1.732050808") and second.endswith("agree=true")
    assert dst.read_text().splitlines()[0] == "u,t,lambda,radius,method"


def test_slope_table_to_stdout(capsys):
    code, out, err = run(capsys, "slope", "--problem", "example1", "--u", "1.5,2,3")
    assert code == 0
    assert out.splitlines()[0] == "u,t,lambda,radius,method" and len(out.splitlines()) == 4
    assert "max_radius" in err


def test_slope_window(capsys):
    code, out, err = run(capsys, "slope", "--problem", "example1", "--u", "2", "--method", "window", "--horizon", "2000")
    assert code == 0 and "lambda_minus" in err


def test_sharpness(capsys, tmp_path):
    dst = tmp_path / "s.csv"
    code, out, _ = run(capsys, "sharpness", "--delta", "1", "--eps", "1e-3,1e-4", "-o", str(dst))
    assert code == 0
    rows = dst.read_text().splitlines()
    assert len(rows) == 3
    ratios = [float(r.split(",")[-1]) for r in rows[1:]]
    assert ratios[0] == pytest.approx(0.999, abs=1e-9) and ratios[1] == pytest.approx(0.9999, abs=1e-9)


def test_rate_exit_zero(capsys, tmp_path):
    dst = tmp_path / "r.csv"
    code, out, _ = run(capsys, "rate", "--problem", "example3", "--T", "1", "--eps", "1e-2,1e-3", "--u0", "0", "-o", str(dst))
    assert code == 0
    assert out.startswith("fitted_c=")


def test_rate_precondition_is_error(capsys):
    code, _, err = run(capsys, "rate", "--problem", "example3", "--T", "0.01", "--eps", "1e-2", "--u0", "0")
    assert code == 1 and "T < C eps" in err


def test_validate_violation_exit_two(capsys):
    code, out, _ = run(capsys, "validate", "--f", "v", "--alpha", "1", "--beta", "1", "--lipschitz-v", "1", "-o", "/dev/null")
    assert code == 2 and "consistent=false" in out
    code, out, _ = run(capsys, "validate", "--problem", "example2", "-o", "/dev/null", "--rng-seed", "4")
    assert code == 0


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "constant", "params": [2.0], "eps": [0.1], "u0": 1.0, "T": 3.0}))
    dst = tmp_path / "u.csv"
    code, out, _ = run(capsys, "solve-eps", "--config", str(cfg), "-o", str(dst))
    assert code == 0 and _final(out) == pytest.approx(7.0, abs=1e-9)
    code, out, _ = run(capsys, "solve-eps", "--config", str(cfg), "--T", "1", "-o", str(dst))
    assert _final(out) == pytest.approx(3.0, abs=1e-9)


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"problem": "example1",}')
    code, _, err = run(capsys, "slope", "--config", str(bad))
    assert code == 1 and "bad.json: offset 23" in err
    unknown = tmp_path / "unknown.json"
    unknown.write_text('{"problme": "example1"}')
    code, _, err = run(capsys, "slope", "--config", str(unknown))
    assert code == 1 and "problme" in err
    code, _, err = run(capsys, "slope", "--f", "u +", "--alpha", "1", "--beta", "1", "--lipschitz-v", "1")
    assert code == 1 and "offset 3" in err
    code, _, err = run(capsys, "slope", "--problem", "nope")
    assert code == 1 and "unknown built-in" in err
    code, _, err = run(capsys, "stability", "--gamma", "2")
    assert code == 1


def test_homogenize_and_stability(capsys, tmp_path):
    code, out, _ = run(capsys, "homogenize", "--problem", "example1", "--u0", "2", "--dt", "0.01", "--T", "0.1", "-o", str(tmp_path / "h.csv"))
    assert code == 0 and "analytic=" in out
    code, out, _ = run(capsys, "stability", "-o", str(tmp_path / "st.csv"))
    assert code == 0 and "holds=true" in out


def test_transport(capsys, tmp_path):
    dst = tmp_path / "t.csv"
    args = ["transport", "--problem", "shifted_cosine", "--params", "2", "--eps", "1e-2", "--x1", "0,1,5", "--x2", "0,1,5"]
    code, out, _ = run(capsys, *args, "--h", "1e-3", "-o", str(dst))
    assert code == 0 and "sup_error=" in out and "x2_quotient=0" in out
    first = dst.read_bytes()
    run(capsys, *args, "-o", str(dst))
    assert dst.read_bytes() == first


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ["validate", "solve-eps", "slope", "homogenize", "rate", "sharpness", "stability", "transport"]:
        assert cmd in out
