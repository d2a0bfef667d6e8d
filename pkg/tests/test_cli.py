import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from nilflow_lab import algebra as A
from nilflow_lab import cli
from nilflow_lab import diophantine as D
from nilflow_lab import nilmanifold as NM
from nilflow_lab import width as W
from nilflow_lab._io import dumps

SMALL = {
    "jacobi": [],
    "transversality": ["--set", "functional=generic"],
    "return-map": ["--set", "R=50"],
    "diophantine": ["--set", "N=2000", "--set", "r_max=5000", "--set", "n_delta=6"],
    "decay": ["--T", "2^14"],
    "width": ["--T", "5", "--L", "1000"],
    "step3-width": ["--T", "300", "--set", "T_width=2", "--set", "t=1,2"],
    "good-points": ["--set", "points=2", "--set", "count=1"],
    "mixing": ["--set", "samples=20000", "--set", "n_max=3", "--set", "shifts=4", "--set", "renorm_points=10"],
}


def run(args, capsys=None):
    code = cli.main(args)
    return code


def payloads(path):
    return {p.name: p.read_bytes() for p in sorted(Path(path).iterdir()) if p.name != "manifest.json"}


@pytest.mark.parametrize("exp", list(SMALL))
def test_experiment_runs_and_is_deterministic(exp, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([exp, *SMALL[exp], "--out", str(a)]) == 0
    assert cli.main(["run", exp, *SMALL[exp], "--out", str(b)]) == 0
    assert payloads(a) == payloads(b)
    man = json.loads((a / "manifest.json").read_text())
    assert man["config"]["experiment"] == exp
    import hashlib
    for name, digest in man["payloads"].items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest


def test_payload_matches_library_return_map(tmp_path):
    assert cli.main(["return-map", "--set", "R=40", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    got = json.loads((tmp_path / "b" / "return_map.json").read_text())
    alg = A.heisenberg()
    alpha = A.generic_alpha(alg, seed=3)
    rng = np.random.default_rng(3)
    from fractions import Fraction
    p = NM.SectionPoint(Fraction(int(rng.integers(0, 1000)), 1000),
                        tuple(Fraction(int(v), 1000) for v in rng.integers(0, 1000, 2)))
    err = NM.return_map_error(alg, p, alg.flow_vector(alpha), list(range(-40, 41)))
    assert dumps(got["error"]) == dumps(err)


def test_payload_matches_library_width(tmp_path):
    assert cli.main(["width", "--T", "5", "--L", "1000", "--out", str(tmp_path / "b")]) == 0
    got = json.loads((tmp_path / "b" / "width.json").read_text())["report"]
    alg = A.heisenberg()
    x = NM.GroupElement.make(alg, np.random.default_rng(0).random(3).tolist(), "float")
    rep = W.width_lower_bound(alg, "(sqrt5-1)/2", x, 5, 1000, samples_per_unit=4)
    assert dumps(got["w"]) == dumps(rep.w)
    assert [e["r"] for e in got["events"]] == [e.r for e in rep.events]


def test_payload_matches_library_diophantine(tmp_path):
    assert cli.main(["diophantine", *SMALL["diophantine"], "--out", str(tmp_path / "b")]) == 0
    got = json.loads((tmp_path / "b" / "diophantine.json").read_text())
    lb = D.dio_lower_bound("golden", 5000, nu=1.0)
    assert dumps(got["lower_bound"]["minimum"]) == dumps(lb.minimum)


def test_existing_bundle_needs_force(tmp_path):
    out = str(tmp_path / "b")
    assert cli.main(["jacobi", "--out", out]) == 0
    assert cli.main(["jacobi", "--out", out]) == 2
    assert cli.main(["jacobi", "--out", out, "--force"]) == 0


def test_lock_blocks_concurrent_writer(tmp_path):
    out = tmp_path / "b"
    (tmp_path / "b.lock").write_text("1")
    assert cli.main(["jacobi", "--out", str(out)]) == 2
    assert not out.exists()


def test_jacobi_violation_exit_code(tmp_path, capsys):
    text = A.algebra_to_text(A.triangular(3)).replace("\n0 1 3 1\n", "\n0 1 3 2\n")
    f = tmp_path / "bad.txt"
    f.write_text(text)
    assert cli.main(["jacobi", "--algebra", str(f), "--out", str(tmp_path / "b")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "jacobi_violation" and err["violations"]


@pytest.mark.parametrize("args", [
    ["width", "--T", "-3"],
    ["mixing", "--set", "A=2,0,0,1"],
    ["decay", "--algebra", "nonsense"],
    ["return-map", "--set", "R=abc"],
    ["frobnicate"],
])
def test_validation_errors(args, tmp_path):
    assert cli.main([*args, "--out", str(tmp_path / "b")] if args[0] != "frobnicate" else args) == 2


def test_numerical_failure_exit_code(tmp_path):
    assert cli.main(["return-map", "--set", "R=30", "--set", "tol=1e-30", "--out", str(tmp_path / "b")]) == 3
    assert (tmp_path / "b" / "return_map.json").exists()


def test_regress_cases(tmp_path):
    g, b = tmp_path / "g", tmp_path / "b"
    assert cli.main(["return-map", "--set", "R=20", "--out", str(g)]) == 0
    shutil.copytree(g, b)
    assert cli.main(["regress", str(g), str(b)]) == 0
    p = b / "return_map.json"
    data = json.loads(p.read_text())
    data["error"] = data["error"] * 2 + 1e-3
    p.write_text(json.dumps(data))
    assert cli.main(["regress", str(g), str(b)]) == 4
    assert cli.main(["regress", str(g), str(b), "--field-tol", "error=1e9"]) == 0
    data["brand_new"] = 1
    p.write_text(json.dumps(json.loads((g / "return_map.json").read_text()) | {"brand_new": 1}))
    rep = cli.regress(g, b)
    assert rep["ok"] and rep["warnings"]
    j = tmp_path / "j"
    assert cli.main(["jacobi", "--out", str(j)]) == 0
    assert cli.main(["regress", str(g), str(j)]) == 2


def test_plots(tmp_path):
    d = tmp_path / "d"
    assert cli.main(["decay", "--T", "2^14", "--out", str(d)]) == 0
    assert cli.main(["plot", str(d), "--kind", "decay"]) == 0
    text = (d / "plot-decay.gp").read_text()
    assert "plot" in text and "EOD" in text
    assert cli.main(["plot", str(d), "--kind", "correlation"]) == 2
    s = tmp_path / "s"
    assert cli.main(["step3-width", *SMALL["step3-width"], "--out", str(s)]) == 0
    assert cli.main(["plot", str(s), "--kind", "dyadic"]) == 0
    assert cli.main(["plot", str(s), "--kind", "width"]) == 0


def test_parse_number():
    assert cli.parse_number("2^24") == 2 ** 24
    assert cli.parse_number("1e7") == 10 ** 7
    assert cli.parse_number("1/64") == 1 / 64
    with pytest.raises(cli.ValidationError):
        cli.parse_number("x")


def test_config_file_and_set(tmp_path):
    cfgf = tmp_path / "c.json"
    cfgf.write_text(json.dumps({"R": 10}))
    out = tmp_path / "b"
    assert cli.main(["return-map", "--config", str(cfgf), "--out", str(out)]) == 0
    assert json.loads((out / "return_map.json").read_text())["R"] == 10


def test_console_script():
    exe = shutil.which("nilflow-lab")
    if exe is None:
        pytest.skip("console script not on PATH")
    res = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "step3-width" in res.stdout
