"""End-to-end acceptance checks, one marked test per criterion.

The session summary prints a PASS/FAIL line for each criterion number (see
``pytest_terminal_summary`` in conftest.py).
"""
import time

import numpy as np
import pytest

from cbfkit import numkernel, sdp, sim, sos, synth
from cbfkit.cbf import (
    Outcome,
    SafeRegion,
    VerifyOptions,
    cbf_violation,
    falsify,
    verify_cbf,
    verify_containment,
    verify_hocbf,
)
from cbfkit.poly import ControlSystem, Polynomial, differentiate, parse, quadratic_form

from test_sdp import random_feasible_problem

from conftest import (
    disc_system,
    double_integrator,
    pendulum_box,
    pendulum_system,
    published_disc_barrier,
    random_poly,
    unit_disc,
)

DISC_F = np.array([[1.0, 0.0], [-1.0, 4.0]])
DISC_G = np.array([[1.0], [0.0]])
PEND_F = np.array([[0.0, 1.0], [1.0, 0.0]])
PEND_G = np.array([[0.0], [1.0]])
PUBLISHED_P = np.array([[6.23, -26.7], [-26.7, 146.7]])
MOTZKIN = "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1"


@pytest.mark.criterion(1)
def test_lyapunov_reproduction():
    Fbar = PEND_F - PEND_G @ np.array([[3.0, 3.0]])
    P = numkernel.solve_lyapunov(Fbar, np.eye(2))
    assert np.max(np.abs(P - [[1.25, 0.25], [0.25, 0.25]])) <= 1e-9
    assert np.max(np.abs(Fbar.T @ P + P @ Fbar + np.eye(2))) <= 1e-9


@pytest.mark.criterion(2)
def test_published_lyapunov_matrix_is_valid():
    Fbar = DISC_F - DISC_G @ np.array([[8.0, -30.0]])
    assert np.linalg.eigvalsh(Fbar.T @ PUBLISHED_P + PUBLISHED_P @ Fbar).max() < 0
    assert np.linalg.eigvalsh(PUBLISHED_P).min() > 0


@pytest.mark.criterion(3)
def test_published_disc_barrier_certified():
    start = time.perf_counter()
    b = published_disc_barrier()
    v = verify_cbf(disc_system(), b)
    contained = verify_containment([b], unit_disc(), VerifyOptions(shrink=1e-3))
    elapsed = time.perf_counter() - start
    assert v.outcome == Outcome.VERIFIED, (v.outcome, v.witness)
    assert contained.outcome == Outcome.VERIFIED, (contained.outcome, contained.witness)
    for cert in list(v.certificates.values()) + list(contained.certificates.values()):
        assert cert.max_residual < 1e-6
    assert elapsed < 10


@pytest.mark.criterion(4)
def test_double_integrator_falsified():
    sys = double_integrator()
    b = parse("1 - x1^2", 2)
    v = verify_cbf(sys, b)
    assert v.outcome == Outcome.FALSIFIED
    viol = cbf_violation(sys, b, v.witness)
    assert abs(viol["b"]) <= 1e-6
    assert np.max(np.abs(viol["Lgb"])) <= 1e-6
    assert viol["Lfb"] <= -1e-6


@pytest.mark.criterion(5)
def test_sos_soundness_battery():
    assert not sos.is_sos(Polynomial.constant(2, -1.0)).feasible
    assert not sos.is_sos(parse(MOTZKIN, 2)).feasible
    rng = np.random.default_rng(5)
    for _ in range(50):
        target = Polynomial.zero(2)
        for _ in range(int(rng.integers(1, 4))):
            g = random_poly(rng, 2, 2, terms=4)
            target = target + g * g
        res = sos.is_sos(target)
        assert res.feasible
        assert res.certificate.max_residual < 1e-6
        assert res.certificate.min_gram_eig >= -1e-7


@pytest.mark.criterion(6)
def test_disc_figure_reproduction():
    start = time.perf_counter()
    safe = sim.simulate(sim.disc_example([-0.75, -0.15]))
    assert time.perf_counter() - start < 5
    assert not safe.infeasible
    assert safe.min_h() >= 0
    assert safe.min_b() >= -1e-6
    start = time.perf_counter()
    unsafe = sim.simulate(sim.disc_example([-0.4, -0.4]))
    assert time.perf_counter() - start < 5
    assert unsafe.min_h() < 0


@pytest.mark.criterion(7)
def test_pendulum_figure_reproduction():
    safe = sim.simulate(sim.pendulum_example([0.1, -0.1]))
    assert safe.h.shape[1] == 4
    assert np.all(safe.h >= 0)
    exits = sim.simulate(sim.pendulum_example([0.13, 0.25]))
    assert np.any(exits.h < 0)


@pytest.mark.criterion(8)
def test_compact_synthesis():
    r = synth.compact_cbf(pendulum_system(), pendulum_box(), [0, 0], [0], [[3, 3]], np.eye(2))
    assert 0.0090 <= r.delta <= 0.0100
    # the tangency with x1 = -0.1 happens at x2 = 0.1, level 0.01
    assert quadratic_form(r.P)([-0.1, 0.1]) == pytest.approx(0.01)
    bigger = synth.ellipse_barrier(r.P, r.x_star, r.delta + 10 * r.resolution)
    margin = synth.CompactOptions().margin
    contained = all(
        any(sos.solve_program(synth.compact_containment_condition(bigger, h, d, margin)).certificate is not None
            for d in (2, 4))
        for h in pendulum_box().constraints
    )
    assert not contained


def random_quadratic_candidate(rng):
    th = rng.uniform(0, np.pi)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    Q = R @ np.diag(rng.uniform(1, 4, 2)) @ R.T
    c = rng.uniform(-0.1, 0.1, 2)
    level = rng.uniform(0.2, 1) * (0.8 - np.linalg.norm(c)) ** 2 * np.linalg.eigvalsh(Q)[0]
    return level - quadratic_form(Q, c)


def random_lyapunov_candidate(rng):
    # a randomly scaled sublevel set of a closed-loop Lyapunov function
    Fbar = DISC_F - DISC_G @ np.array([[8.0, -30.0]])
    P = numkernel.solve_lyapunov(Fbar, np.eye(2))
    Q = P / np.linalg.norm(P) * rng.uniform(1, 3)
    return rng.uniform(0.2, 1) * 0.64 * np.linalg.eigvalsh(Q)[0] - quadratic_form(Q)


@pytest.mark.criterion(9)
def test_descent_monotone_and_sound():
    rng = np.random.default_rng(9)
    sys, region = disc_system(), unit_disc()
    verified = 0
    for make in [random_quadratic_candidate] * 5 + [random_lyapunov_candidate] * 5:
        tr = synth.descent_cbf(sys, region, synth.DescentParams(b0=make(rng), max_iters=10))
        assert tr.is_monotone(1e-9), tr.rhos
        if tr.outcome == Outcome.VERIFIED:
            verified += 1
            again = verify_cbf(sys, tr.candidate)
            assert again.outcome == Outcome.VERIFIED
            assert falsify(sys, tr.candidate, budget=10_000) is None
    assert verified > 0


@pytest.mark.criterion(10)
def test_halfplane_chain():
    chain = synth.halfplane_hocbf(PEND_F, PEND_G, [1, 0], -0.1)
    assert chain.r == 2
    sys = pendulum_system()
    # the input never reaches the first link of the chain
    assert all(q.is_zero() for q in chain.input_parts(sys)[0])
    assert verify_hocbf(sys, chain, SafeRegion((parse("x1 + 0.1", 2),))).verified


@pytest.mark.criterion(11)
def test_numerics():
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(100):
        p = random_poly(rng, 3, 4)
        x = rng.uniform(-1, 1, 3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (p(x + e) - p(x - e)) / (2 * h)
            exact = differentiate(p, i + 1)(x)
            assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))

    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    osc = ControlSystem.linear(A, [[0.0], [1.0]])
    ref = sim.rk4_open_loop(osc, [1.0, 0.0], [0.0], 2.0, 0.1 / 8)
    e1 = np.linalg.norm(sim.rk4_open_loop(osc, [1.0, 0.0], [0.0], 2.0, 0.1) - ref)
    e2 = np.linalg.norm(sim.rk4_open_loop(osc, [1.0, 0.0], [0.0], 2.0, 0.05) - ref)
    assert e1 / e2 >= 8

    for _ in range(10):
        blocks = [int(d) * (1 if rng.random() < 0.7 else -1) for d in rng.integers(1, 5, size=rng.integers(1, 4))]
        prob = random_feasible_problem(rng, blocks, int(rng.integers(0, 6)))
        text = sdp.export_sdpa(prob)
        back = sdp.import_sdpa(text)
        assert back.structurally_equal(prob)
        assert sdp.export_sdpa(back) == text
