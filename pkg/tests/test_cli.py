import io
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cbfkit import cli, sim, synth
from cbfkit.cbf import Outcome, Verdict, verify_cbf
from cbfkit.poly import ControlSystem, lie, lie_g, parse

from conftest import double_integrator

DISC = """\
# unstable linear system, unit disc
[system]
F = [[1, 0], [-1, 4]]
G = [[1], [0]]
[safety]
h = ["1 - x1^2 - x2^2"]
[candidate]
b = "1.1575 - 6.23*(x1 - 0.1378)^2 + 53.4*(x1 - 0.1378)*x2 - 146.7*x2^2"
[scenario]
x0 = [[-0.75, -0.15], [-0.4, -0.4]]
K = [[8, -30]]
"""

DOUBLE_INTEGRATOR = """\
[system]
n = 2
m = 1
f = ["x2", "0"]
g = [["0"], ["1"]]
[safety]
h = ["1 - x1^2"]
[candidate]
b = "1 - x1^2"
"""

PENDULUM = """\
[system]
F = [[0, 1], [1, 0]]
G = [[0], [1]]
[safety]
h = ["x1 + 0.1", "0.15 - x1", "x2 + 0.3", "0.25 - x2"]
[candidate]
b = "0.01 - 1.25*x1^2 - 0.5*x1*x2 - 0.25*x2^2"
[scenario]
x0 = [[0.1, -0.1], [0.13, 0.25]]
K = [[3, 3]]
[options]
K = [[3, 3]]
resolution = 0.001
"""

ELLIPSE = """\
[system]
F = [[1, 0], [-1, 4]]
G = [[1], [0]]
[safety]
h = ["1 - x1^2 - x2^2"]
[candidate]
b = "0.15 - 6.23*x1^2 + 53.4*x1*x2 - 146.7*x2^2"
[scenario]
x0 = [0.05, 0.0]
T = 0.5
K = [[8, -30]]
"""


def write(tmp_path, text, name="problem.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(argv, out, err)
    return code, out.getvalue(), err.getvalue()


# -- commands and exit codes ----------------------------------------------------------

def test_verify_published_disc_exit_zero(tmp_path):
    out = tmp_path / "out"
    code, report, _ = run(["verify", write(tmp_path, DISC), "--out", str(out)])
    assert code == 0, report
    assert (out / "certificates.txt").read_text().strip()


def test_verify_ellipse_exit_zero_with_dump(tmp_path):
    out = tmp_path / "out"
    code, report, err = run(["verify", write(tmp_path, ELLIPSE), "--out", str(out)])
    assert code == 0
    assert "VERIFIED" in report
    assert "residual" in report
    assert "wall time" in err
    dump = (out / "certificates.txt").read_text().splitlines()
    assert dump and all(" = " in line and line.split(".", 1)[0] for line in dump)
    assert (out / "report.txt").read_text() == report


def test_verify_double_integrator_exit_two(tmp_path):
    code, report, _ = run(["verify", write(tmp_path, DOUBLE_INTEGRATOR)])
    assert code == 2
    line = next(line for line in report.splitlines() if line.startswith("witness"))
    coords = [float(c) for c in line.split("(")[1].rstrip(")").split(",")]
    v = verify_cbf(double_integrator(), parse("1 - x1^2", 2))
    assert np.allclose(coords, v.witness, rtol=1e-5)


def test_unknown_exit_three(tmp_path):
    text = DOUBLE_INTEGRATOR + "[options]\nmultiplier_degrees = [0]\npowers = [1]\n"
    text = text.replace('b = "1 - x1^2"', 'b = "1 - x1^2 + x2^3"')
    code, report, _ = run(["verify", write(tmp_path, text), "--seed", "0"])
    assert code in (2, 3)
    if code == 3:
        assert "exhausted" in report or "stalled" in report


def test_malformed_polynomial_exit_one(tmp_path):
    code, _, err = run(["verify", write(tmp_path, DISC.replace("1 - x1^2 - x2^2", "1 - x1^^2"))])
    assert code == 1
    assert "[safety]" in err and "line 6" in err
    assert "position" in err or "column" in err


def test_usage_errors_exit_one(tmp_path):
    path = write(tmp_path, DISC)
    assert run(["bogus", path])[0] == 1
    assert run(["verify"])[0] == 1
    assert run(["verify", path, "--degree", "3"])[0] == 1
    assert run(["verify", str(tmp_path / "missing.txt")])[0] == 1
    assert run(["simulate", write(tmp_path, DOUBLE_INTEGRATOR, "di.txt")])[0] == 1


def test_verify_multiple_candidates_in_parallel(tmp_path):
    text = ELLIPSE.replace('b = "0.15 - 6.23*x1^2 + 53.4*x1*x2 - 146.7*x2^2"',
                           'b = ["0.15 - 6.23*x1^2 + 53.4*x1*x2 - 146.7*x2^2", "0.3 - 6.23*x1^2 + 53.4*x1*x2 - 146.7*x2^2"]')
    path = write(tmp_path, text)
    serial = run(["verify", path])
    parallel = run(["verify", path, "--jobs", "2"])
    assert serial[0] == parallel[0] == 0
    assert serial[1] == parallel[1]
    assert "candidate 1: outcome: VERIFIED" in serial[1]


def test_verify_hocbf_command(tmp_path):
    text = PENDULUM.replace('b = "0.01 - 1.25*x1^2 - 0.5*x1*x2 - 0.25*x2^2"', 'b = "x1 + 0.1"\ngains = [1, 1]')
    text = text.replace('h = ["x1 + 0.1", "0.15 - x1", "x2 + 0.3", "0.25 - x2"]', 'h = ["x1 + 0.1"]')
    code, report, _ = run(["verify-hocbf", write(tmp_path, text)])
    assert code == 0
    assert "hocbf" in report


def test_verify_hocbf_relative_degree_error(tmp_path):
    text = PENDULUM.replace('b = "0.01 - 1.25*x1^2 - 0.5*x1*x2 - 0.25*x2^2"', 'b = "x2 + 0.1"\ngains = [1, 1]')
    assert run(["verify-hocbf", write(tmp_path, text)])[0] == 1


def test_verify_multi_command(tmp_path):
    text = """\
[system]
F = [[0]]
G = [[1]]
[safety]
h = ["1 - x1^2"]
[candidate]
b = ["x1", "-x1"]
"""
    code, report, _ = run(["verify-multi", write(tmp_path, text)])
    assert code == 2
    assert "witness" in report


def test_synth_descent_command(tmp_path):
    text = PENDULUM.replace('b = "0.01 - 1.25*x1^2 - 0.5*x1*x2 - 0.25*x2^2"', 'b = "x1 + 0.1"\ngains = [1, 1]')
    text = text.replace('h = ["x1 + 0.1", "0.15 - x1", "x2 + 0.3", "0.25 - x2"]', 'h = ["x1 + 0.1"]')
    out = tmp_path / "out"
    code, report, _ = run(["synth-descent", write(tmp_path, text), "--out", str(out), "--max-iter", "3"])
    assert code == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,step,rho"
    assert len(trace) >= 2
    assert (out / "candidate.txt").exists()


def test_synth_descent_budget_one_unknown(tmp_path):
    text = DISC.replace('b = "1.1575 - 6.23*(x1 - 0.1378)^2 + 53.4*(x1 - 0.1378)*x2 - 146.7*x2^2"',
                        'b = "1 - x1^2 - x2^2"')
    code, report, _ = run(["synth-descent", write(tmp_path, text), "--max-iter", "1"])
    assert code == 3
    assert "iterations: 1" in report


def test_synth_compact_command(tmp_path):
    out = tmp_path / "out"
    code, report, _ = run(["synth-compact", write(tmp_path, PENDULUM), "--out", str(out)])
    assert code == 0
    delta = float(next(line for line in report.splitlines() if line.startswith("delta:")).split()[1])
    assert 0.009 <= delta <= 0.01
    assert parse((out / "barrier.txt").read_text().strip(), 2)([0, 0]) == pytest.approx(delta)


def test_synth_compact_unstable_gain_unknown(tmp_path):
    text = PENDULUM.replace("[options]\nK = [[3, 3]]", "[options]\nK = [[0, 0]]")
    code, report, _ = run(["synth-compact", write(tmp_path, text)])
    assert code == 3
    assert "Hurwitz" in report


def test_simulate_command(tmp_path):
    out = tmp_path / "out"
    code, report, _ = run(["simulate", write(tmp_path, PENDULUM), "--out", str(out)])
    assert code == 0
    header, data = sim.read_csv(out / "trajectory_0.csv")
    assert header == sim.csv_header(2, 1, 4, 1)
    assert data.shape == (10001, 9)
    assert data[:, 4:8].min() >= 0
    _, data1 = sim.read_csv(out / "trajectory_1.csv")
    assert data1[:, 4:8].min() < 0


def test_export_sdpa_command(tmp_path):
    out = tmp_path / "out"
    code, _, _ = run(["export-sdpa", write(tmp_path, ELLIPSE), "--out", str(out)])
    assert code == 0
    from cbfkit import sdp

    for name in ("cbf_0.dat-s", "containment_0_0.dat-s"):
        prob = sdp.import_sdpa((out / name).read_text())
        assert prob.m > 0


def test_module_entry_point(tmp_path):
    path = write(tmp_path, DOUBLE_INTEGRATOR)
    proc = subprocess.run([sys.executable, "-m", "cbfkit", "verify", path], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "FALSIFIED" in proc.stdout


# -- determinism ----------------------------------------------------------------------

def test_reports_and_csv_are_byte_identical(tmp_path):
    path = write(tmp_path, ELLIPSE)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run(["verify", path, "--out", str(out)])
        run(["simulate", path, "--out", str(out)])
    for name in ("report.txt", "certificates.txt", "trajectory_0.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_exit_code_depends_only_on_outcome():
    assert cli.EXIT == {Outcome.VERIFIED: 0, Outcome.FALSIFIED: 2, Outcome.UNKNOWN: 3}


# -- loading ----------------------------------------------------------------------------

def test_load_minimal_file():
    pf = cli.loads('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1 - x1^2"]\n')
    assert pf.n == 1 and pf.system.m == 1
    assert pf.candidates == [] and pf.options == {}


def test_load_wrong_g_rows_names_section():
    text = DOUBLE_INTEGRATOR.replace('g = [["0"], ["1"]]', 'g = [["0"], ["1"], ["1"]]')
    with pytest.raises(cli.ProblemFileError) as exc:
        cli.loads(text)
    assert exc.value.section == "system"
    assert exc.value.line == 5
    assert "[system]" in str(exc.value)


def test_load_pendulum_matches_linear_model():
    pf = cli.loads(PENDULUM)
    ref = ControlSystem.linear([[0, 1], [1, 0]], [[0], [1]])
    assert pf.system == ref
    x = np.array([0.3, -0.7])
    assert np.allclose(pf.system.drift_at(x), [x[1], x[0]])
    assert np.allclose(pf.system.input_at(x), [[0], [1]])
    assert len(pf.region.constraints) == 4
    assert np.allclose(pf.scenario["K"], [[3, 3]])


def test_load_polynomial_system_and_comments():
    text = """\
[system]   # comment after a header
f = ["x2", "-x1 + x1^3"]  # drift
g = [["0"], ["1 + x1^2"]]
[safety]
h = "1 - x1^2 - x2^2"
"""
    pf = cli.loads(text)
    assert pf.system.f[1] == parse("-x1 + x1^3", 2)
    assert pf.region.constraints[0] == parse("1 - x1^2 - x2^2", 2)


@pytest.mark.parametrize(
    "text,section",
    [
        ("[system]\nF = [[0]]\n", None),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1 - x2^2"]\n', "safety"),
        ('[system]\nF = [[0]]\nG = [[1]]\nn = 2\n[safety]\nh = ["1"]\n', "system"),
        ('[system]\nF = [[0, 1]]\nG = [[1]]\n[safety]\nh = ["1"]\n', "system"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[scenario]\nx0 = [1, 2]\n', "scenario"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[scenario]\ndt = 2\nT = 1\n', "scenario"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[options]\nN = [[1, 0], [0, 1]]\n', "options"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[options]\nbogus = 1\n', "options"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[candidate]\ngains = [1, -1]\n', "candidate"),
        ('[system]\nF = [[0]]\nG = [[1]]\n[safety]\nh = ["1"]\n[weird]\n', None),
        ('x = 1\n', None),
    ],
)
def test_load_rejects(text, section):
    with pytest.raises(cli.ProblemFileError) as exc:
        cli.loads(text)
    assert exc.value.section == section


# -- reports ---------------------------------------------------------------------------

def test_report_falsified_witness_six_digits():
    v = Verdict(Outcome.FALSIFIED, witness=np.array([1.0 / 3.0, -2.0e-7]), violated="b = 0")
    text = cli.emit_report(v)
    assert "FALSIFIED" in text
    assert "witness: (0.333333, -2e-07)" in text


def test_report_unknown_mentions_budget():
    # the falsifier is off, so the low-degree schedule runs out without a verdict
    v = verify_cbf(ControlSystem.linear([[0, 1], [0, 0]], [[0], [1]]), parse("1 - x1^2", 2),
                   opts=__import__("cbfkit").VerifyOptions(multiplier_degrees=(0,), powers=(1,), falsify=False))
    text = cli.emit_report(v)
    assert "UNKNOWN" in text
    assert "exhausted" in text or "stalled" in text


def test_report_trace_and_trajectories():
    tr = synth.DescentTrace(rhos=[0.5, 0.25], labels=["rho_1", "rho'_1"], iterations=1, reason="budget")
    text = cli.emit_report(tr)
    assert "rho: 0.5 0.25" in text and "outcome: UNKNOWN" in text
    traj = sim.simulate(sim.pendulum_example([0.1, -0.1], T=0.01, dt=0.001))
    assert "samples 11" in cli.emit_report([traj])


def test_report_rejects_unknown_type():
    with pytest.raises(TypeError):
        cli.emit_report(42)


# -- fuzzing ----------------------------------------------------------------------------

BASES = [DISC, DOUBLE_INTEGRATOR, PENDULUM, ELLIPSE]


@st.composite
def mutated(draw):
    lines = draw(st.sampled_from(BASES)).splitlines()
    for _ in range(draw(st.integers(1, 3))):
        kind = draw(st.sampled_from(["drop", "dup", "char", "digit", "swap"]))
        i = draw(st.integers(0, len(lines) - 1))
        if kind == "drop" and len(lines) > 1:
            lines.pop(i)
        elif kind == "dup":
            lines.insert(i, lines[i])
        elif kind == "swap":
            j = draw(st.integers(0, len(lines) - 1))
            lines[i], lines[j] = lines[j], lines[i]
        elif lines[i]:
            k = draw(st.integers(0, len(lines[i]) - 1))
            alphabet = "0123456789" if kind == "digit" else "[]\",=x^-+*() 0123"
            lines[i] = lines[i][:k] + draw(st.sampled_from(alphabet)) + lines[i][k + 1:]
    return "\n".join(lines) + "\n"


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(mutated())
def test_fuzz_load_never_panics_downstream(text):
    try:
        pf = cli.loads(text)
    except cli.ProblemFileError:
        return
    sys_, n, m = pf.system, pf.system.n, pf.system.m
    x = np.linspace(-0.3, 0.4, n)
    for h in pf.region.constraints:
        h(x)
    for b in pf.candidates:
        lie(b, sys_.f)(x)
        [q(x) for q in lie_g(b, sys_)]
    if "x0" in pf.scenario and pf.candidates:
        for x0 in pf.scenario["x0"]:
            sc = sim.Scenario(sys_, list(pf.candidates), pf.region, x0, T=0.002, dt=0.001,
                              K=pf.scenario.get("K"), x_ref=pf.scenario.get("x_ref"),
                              kappa=pf.scenario.get("kappa", 1.0))
            assert sc.system.n == n
    for key in ("K", "N"):
        if key in pf.options:
            assert pf.options[key].shape == ((m, n) if key == "K" else (n, n))
