"""Barrier synthesis.

Two families of constructions live here:

* alternating descent, which freezes the barrier to solve for multipliers and
  then freezes the multipliers to solve for a new barrier, each step
  minimizing a slack ``rho`` that certifies the barrier once it is
  nonpositive;
* the compact-region construction, which places a Lyapunov ellipse around a
  fixed point, sizes it by bisection, and optionally enlarges it with a
  multiple of the region constraint.

Linear-system helpers (canonical form, pole placement, half-plane HOCBF
chains for convex obstacles) round out the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import cbf, numkernel, sos
from .cbf import HocbfChain, Outcome, SafeRegion, Verdict, VerifyOptions
from .poly import (ControlSystem, DimensionError, Polynomial, lie, lie_g, quadratic_form,
                   relative_degree, total_degree_monomials)


class SynthesisError(RuntimeError):
    pass


class ConvergenceError(SynthesisError):
    pass


class UncontrollableError(ValueError):
    pass


def _deg(p: Polynomial) -> int:
    return max(p.degree, 0)


def _even(d: int) -> int:
    return d + (d % 2)


def lambda_poly(n: int, degree: int) -> Polynomial:
    """``(1 + sum x_i^2)^(degree/2)``; ``degree`` is rounded up to even."""
    base = Polynomial.constant(n, 1.0)
    for i in range(1, n + 1):
        base = base + Polynomial.var(n, i) ** 2
    return base ** (_even(max(degree, 0)) // 2)


# -- alternating descent ----------------------------------------------------------------

@dataclass
class DescentParams:
    """Settings for the alternating-descent heuristics.

    ``b0`` is the initial candidate (required).  ``gains`` only matter for the
    HOCBF variant when no explicit chain is supplied.
    """

    b0: Polynomial | None = None
    max_iters: int = 20
    eps: float = 1e-4
    lambda_degree: int | None = None
    multiplier_degree: int = 2
    shrink: float = 1e-3
    rho_floor: float = -1.0
    verify: VerifyOptions = field(default_factory=VerifyOptions)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.multiplier_degree < 0 or self.multiplier_degree % 2:
            raise ValueError("multiplier_degree must be a nonnegative even integer")


@dataclass
class DescentTrace:
    rhos: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    raw_rhos: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    candidate: Polynomial | None = None
    chain: HocbfChain | None = None
    verdict: Verdict | None = None
    iterations: int = 0
    reason: str = ""

    def __len__(self):
        return self.iterations

    @property
    def outcome(self) -> Outcome:
        return self.verdict.outcome if self.verdict is not None else Outcome.UNKNOWN

    def is_monotone(self, tol: float = 1e-9) -> bool:
        return all(b <= a + tol for a, b in zip(self.rhos, self.rhos[1:]))


class _ChainMaps:
    """Linear maps ``psi_0 -> psi_i`` for the linear class-K recursion."""

    def __init__(self, sys: ControlSystem, gains: Sequence[float]):
        self.sys = sys
        self.gains = tuple(float(k) for k in gains)

    @property
    def r(self) -> int:
        return len(self.gains)

    def levels(self, p: Polynomial) -> list:
        out = [p]
        for k in self.gains[:-1]:
            q = out[-1]
            out.append(lie(q, self.sys.f) + q.scale(k))
        return out

    def level(self, i: int):
        return lambda p: self.levels(p)[i]


@dataclass
class _Multipliers:
    alpha: Polynomial
    thetas: list
    eta: Polynomial
    gammas: list
    betas: list  # per region constraint: list over levels
    ws: list


class _Descent:
    def __init__(self, sys, region, maps: _ChainMaps, psi0: Polynomial, params: DescentParams):
        self.sys = sys
        self.region = region
        self.maps = maps
        self.params = params
        self.n = sys.n
        self.basis = total_degree_monomials(self.n, _deg(psi0))
        md = params.multiplier_degree
        # generic degrees: what any psi_0 over the basis can reach
        rng = np.random.default_rng(12345)
        probe = Polynomial(self.n, {m: 1.0 + rng.random() for m in self.basis})
        gen = maps.levels(probe)
        cur = maps.levels(psi0)
        self.level_deg = [max(_deg(a), _deg(b)) for a, b in zip(gen, cur)]
        top = gen[-1]
        lf_deg = max(_deg(lie(top, sys.f)), _deg(lie(cur[-1], sys.f)))
        lg_deg = [max(_deg(a), _deg(b)) for a, b in zip(lie_g(top, sys), lie_g(cur[-1], sys))]
        self.lg_deg = lg_deg
        self.cbf_deg = _even(max(md + lf_deg, md + self.level_deg[-1],
                                 *[md + d for d in self.level_deg[:-1]], 0))
        lam = params.lambda_degree if params.lambda_degree is not None else self.cbf_deg
        self.cbf_deg = _even(max(self.cbf_deg, lam))
        self.Lambda = lambda_poly(self.n, lam)
        self.contain_deg = [
            _even(max([md + d for d in self.level_deg] + [_deg(h)]))
            for h in region.constraints
        ]
        # absolute shrink amounts, fixed for the whole run so every step
        # solves the same constraint family
        self.shrinks = [params.shrink * p.max_abs_coeff() for p in cur]

    def _solve(self, prog):
        v = self.params.verify
        return sos.solve_program(prog, tol=v.sdp_tol, max_iters=v.max_iters, check_tol=v.check_tol)

    def multiplier_step(self, psi0: Polynomial):
        """Candidate fixed; returns ``(rho, multipliers)`` or ``(None, reason)``."""
        n, md, sys = self.n, self.params.multiplier_degree, self.sys
        psis = self.maps.levels(psi0)
        top = psis[-1]
        Lf = lie(top, sys.f)
        Lg = lie_g(top, sys)
        prog = sos.SosProgram(n)
        alpha = prog.sos_var("alpha", degree=md)
        thetas = [prog.free_var(f"theta{c}", degree=max(self.cbf_deg - d, 0)) for c, d in enumerate(self.lg_deg)]
        eta = prog.free_var("eta", degree=max(self.cbf_deg - self.level_deg[-1], 0))
        gammas = [prog.sos_var(f"gamma{i}", degree=md) for i in range(len(psis) - 1)]
        rho = prog.scalar_var("rho", lower=self.params.rho_floor)
        terms = [(Lf, alpha), (top, eta), (self.Lambda, rho)]
        terms += [(q, th) for q, th in zip(Lg, thetas)]
        terms += [(-p, g) for p, g in zip(psis[:-1], gammas)]
        prog.add_sos_constraint("cbf", terms, -1.0, degree=self.cbf_deg)
        betas, ws = [], []
        for j, h in enumerate(self.region.constraints):
            bj = [prog.sos_var(f"beta{j}_{i}", degree=md) for i in range(len(psis))]
            wj = prog.free_var(f"w{j}", degree=max(self.contain_deg[j] - _deg(h), 0))
            cterms = [(-(p - s), b) for p, s, b in zip(psis, self.shrinks, bj)] + [(h, wj)]
            prog.add_sos_constraint(f"contain{j}", cterms, -1.0, degree=self.contain_deg[j])
            betas.append(bj)
            ws.append(wj)
        prog.minimize(rho)
        res = self._solve(prog)
        if res.certificate is None:
            return None, f"multiplier step failed ({res.status.value})"
        val = res.certificate.values
        mult = _Multipliers(
            alpha=val["alpha"],
            thetas=[val[t.name] for t in thetas],
            eta=val["eta"],
            gammas=[val[g.name] for g in gammas],
            betas=[[val[b.name] for b in row] for row in betas],
            ws=[val[w.name] for w in ws],
        )
        return val["rho"].coeff((0,) * n), mult

    def candidate_step(self, mult: _Multipliers):
        """Multipliers fixed; returns ``(rho, psi0)`` or ``(None, reason)``."""
        n, sys, maps = self.n, self.sys, self.maps
        r = maps.r
        prog = sos.SosProgram(n)
        pvar = prog.free_var("psi0", monomials=self.basis)
        rho = prog.scalar_var("rho", lower=self.params.rho_floor)

        def cbf_map(p):
            levels = maps.levels(p)
            top = levels[-1]
            out = mult.alpha * lie(top, sys.f) + mult.eta * top
            for th, q in zip(mult.thetas, lie_g(top, sys)):
                out = out + th * q
            for g, lvl in zip(mult.gammas, levels[:-1]):
                out = out - g * lvl
            return out

        prog.add_sos_constraint("cbf", [(cbf_map, pvar), (self.Lambda, rho)], -1.0, degree=self.cbf_deg)
        # chain consistency: the input must not reach psi_0..psi_{r-2}
        for i in range(r - 1):
            for c in range(sys.m):
                col = sys.column(c)
                prog.add_identity(f"consistency{i}_{c}",
                                  [(lambda p, i=i, col=col: lie(maps.levels(p)[i], col), pvar)])
        for j, h in enumerate(self.region.constraints):
            betas = mult.betas[j]

            def contain_map(p, betas=betas):
                out = Polynomial.zero(n)
                for b, lvl in zip(betas, maps.levels(p)):
                    out = out - b * lvl
                return out

            const = mult.ws[j] * h - 1.0
            for b, s in zip(betas, self.shrinks):
                const = const + b.scale(s)
            prog.add_sos_constraint(f"contain{j}", [(contain_map, pvar)], const, degree=self.contain_deg[j])
        prog.minimize(rho)
        res = self._solve(prog)
        if res.certificate is None:
            return None, f"candidate step failed ({res.status.value})"
        val = res.certificate.values
        return val["rho"].coeff((0,) * n), val["psi0"]


def _run_descent(sys, region, maps: _ChainMaps, psi0: Polynomial, params: DescentParams, finalize):
    eng = _Descent(sys, region, maps, psi0, params)
    trace = DescentTrace()
    current = psi0
    prev_rho = math.inf
    trace.candidates.append(current)

    def record(label, raw):
        nonlocal prev_rho
        trace.raw_rhos.append(raw)
        # the earlier point stays feasible, so a worse numeric optimum is
        # replaced by the value already certified
        clamped = raw > prev_rho
        value = prev_rho if clamped else raw
        trace.rhos.append(value)
        trace.labels.append(label)
        prev_rho = value
        return value, clamped

    for k in range(1, params.max_iters + 1):
        trace.iterations = k
        rho, mult = eng.multiplier_step(current)
        if rho is None:
            trace.reason = mult
            break
        last = prev_rho
        rho, _ = record(f"rho_{k}", rho)
        if rho <= 0:
            trace.candidate = current
            trace.verdict = finalize(current)
            trace.reason = f"rho_{k} <= 0"
            return trace
        if abs(rho - last) < params.eps:
            trace.reason = f"|rho_{k} - rho'_{k - 1}| < eps"
            break
        rho2, cand = eng.candidate_step(mult)
        if rho2 is None:
            trace.reason = cand
            break
        rho2, clamped = record(f"rho'_{k}", rho2)
        if not clamped:
            current = cand
            trace.candidates.append(current)
        if rho2 <= 0:
            trace.candidate = current
            trace.verdict = finalize(current)
            trace.reason = f"rho'_{k} <= 0"
            return trace
        if abs(rho - rho2) < params.eps:
            trace.reason = f"|rho_{k} - rho'_{k}| < eps"
            break
    else:
        trace.reason = f"iteration budget {params.max_iters} exhausted"
    trace.candidate = current
    trace.verdict = Verdict(Outcome.UNKNOWN, reason=f"descent stopped with rho = {prev_rho:.6g}: {trace.reason}")
    return trace


def descent_cbf(sys: ControlSystem, region: SafeRegion, params: DescentParams) -> DescentTrace:
    """Alternating descent for a CBF whose superlevel set sits inside ``region``."""
    if params.b0 is None:
        raise ValueError("descent needs an initial candidate b0")
    if params.b0.n != sys.n or region.n != sys.n:
        raise DimensionError("candidate, region and system disagree on variable count")
    opts = params.verify

    def finalize(b):
        v = cbf.verify_cbf(sys, b, opts)
        if not v.verified:
            return v
        c = cbf.verify_containment([b], region, opts)
        c.certificates = {**v.certificates, **c.certificates}
        return c

    trace = _run_descent(sys, region, _ChainMaps(sys, (1.0,)), params.b0, params, finalize)
    return trace


def descent_hocbf(sys: ControlSystem, region: SafeRegion, chain0: HocbfChain,
                  params: DescentParams) -> DescentTrace:
    """Alternating descent over the base ``psi_0`` of a HOCBF chain.

    The chain gains stay fixed; every level is a linear image of ``psi_0``, so
    the candidate step is still a single SOS program.
    """
    rd = relative_degree(chain0.base, sys, chain0.r)
    if rd != chain0.r or not chain0.is_structurally_valid(sys):
        raise cbf.RelativeDegreeError(f"initial chain of order {chain0.r} does not match relative degree {rd}")
    opts = params.verify
    maps = _ChainMaps(sys, chain0.gains)

    def finalize(psi0):
        chain = HocbfChain.build(sys, psi0, chain0.gains)
        try:
            return cbf.verify_hocbf(sys, chain, region, opts)
        except cbf.RelativeDegreeError as exc:
            return Verdict(Outcome.UNKNOWN, reason=f"descended chain lost its relative degree: {exc}")

    trace = _run_descent(sys, region, maps, chain0.base, params, finalize)
    if trace.candidate is not None:
        try:
            trace.chain = HocbfChain.build(sys, trace.candidate, chain0.gains)
        except ValueError:
            trace.chain = None
    return trace


# -- fixed points and linearization ------------------------------------------------------

def _jacobian(polys, x):
    return np.array([[d(x) for d in p.gradient()] for p in polys])


def find_fixed_point(sys: ControlSystem, x_seed, u_seed=None, max_iters: int = 100, tol: float = 1e-10):
    """Newton iteration for ``f(x) + g(x) u = 0`` from the given seed.

    Each step first moves the input as far as it can (least squares in ``u``)
    and then takes a minimum-norm step in ``(x, u)`` for what is left, so a
    seed that is already an equilibrium state keeps its ``x``.
    """
    n, m = sys.n, sys.m
    x = np.array(x_seed, dtype=float).reshape(n)
    u = np.zeros(m) if u_seed is None else np.array(u_seed, dtype=float).reshape(m)
    cols = [sys.column(j) for j in range(m)]

    def residual(x, u):
        return sys.drift_at(x) + sys.input_at(x) @ u

    for _ in range(max_iters + 1):
        r = residual(x, u)
        if np.max(np.abs(r)) <= tol:
            return x, u
        Gx = sys.input_at(x)
        du = np.linalg.lstsq(Gx, -r, rcond=None)[0] if m else np.zeros(0)
        u_try = u + du
        r2 = residual(x, u_try)
        if np.max(np.abs(r2)) <= tol:
            return x, u_try
        # full Newton step on what remains
        Jx = _jacobian(sys.f, x)
        for j, col in enumerate(cols):
            Jx = Jx + _jacobian(col, x) * u_try[j]
        J = np.hstack([Jx, sys.input_at(x)])
        d = np.linalg.lstsq(J, -r2, rcond=None)[0]
        x = x + d[:n]
        u = u_try + d[n:]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            break
    raise ConvergenceError(f"no fixed point within {max_iters} Newton iterations")


def linearize(sys: ControlSystem, x_star, u_star):
    """``F = d(f + g u*)/dx`` at ``x*`` and ``G = g(x*)``."""
    x = np.asarray(x_star, dtype=float).reshape(sys.n)
    u = np.asarray(u_star, dtype=float).reshape(sys.m)
    F = _jacobian(sys.f, x)
    for j in range(sys.m):
        F = F + _jacobian(sys.column(j), x) * u[j]
    return F, sys.input_at(x)


# -- compact-region construction -----------------------------------------------------

@dataclass
class CompactOptions:
    resolution: float = 1e-4  # relative to delta_max
    margin: float = 1e-3
    multiplier_degrees: tuple = (2, 4)
    delta_max: float | None = None
    seed_grid: int = 21
    enlarge: bool = False
    k_max: float = 1.0
    k_resolution: float = 1e-3  # relative to k_max
    verify: VerifyOptions = field(default_factory=VerifyOptions)


@dataclass
class CompactResult:
    x_star: np.ndarray
    u_star: np.ndarray
    K: np.ndarray
    P: np.ndarray
    delta: float
    k: float
    b0: Polynomial
    b1: Polynomial
    delta_max: float = 0.0
    resolution: float = 0.0
    history: list = field(default_factory=list)


def ellipse_barrier(P, x_star, delta: float) -> Polynomial:
    """``delta - (x - x*)^T P (x - x*)``."""
    return delta - quadratic_form(P, x_star)


def _solve_feasible(prog, vopts: VerifyOptions) -> bool:
    res = sos.solve_program(prog, tol=vopts.sdp_tol, max_iters=vopts.max_iters, check_tol=vopts.check_tol)
    return res.certificate is not None


def compact_cbf_condition(sys: ControlSystem, b0: Polynomial, degree: int) -> sos.SosProgram:
    """``alpha L_f b0 + sum theta_i L_gi b0 + eta b0 - 1`` SOS with ``alpha`` SOS."""
    n = sys.n
    Lf = lie(b0, sys.f)
    Lg = lie_g(b0, sys)
    top = _even(max(degree + _deg(Lf), degree + _deg(b0)))
    prog = sos.SosProgram(n)
    alpha = prog.sos_var("alpha", degree=degree)
    eta = prog.free_var("eta", degree=max(top - _deg(b0), 0))
    terms = [(Lf, alpha), (b0, eta)]
    for c, q in enumerate(Lg):
        if not q.is_zero():
            terms.append((q, prog.free_var(f"theta{c}", degree=max(top - _deg(q), 0))))
    prog.add_sos_constraint("cbf", terms, -1.0, degree=top)
    return prog


def compact_containment_condition(b0: Polynomial, h: Polynomial, degree: int, margin: float) -> sos.SosProgram:
    """``h - margin * max|coeff(h)| - beta b0`` SOS with ``beta`` SOS."""
    n = b0.n
    prog = sos.SosProgram(n)
    beta = prog.sos_var("beta", degree=degree)
    top = _even(max(_deg(h), degree + _deg(b0)))
    const = h - margin * h.max_abs_coeff()
    prog.add_sos_constraint("contain", [(-b0, beta)], const, degree=top)
    return prog


def _boundary_seeds(region: SafeRegion, box: np.ndarray, per_axis: int) -> np.ndarray:
    n = region.n
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(n, -1).T
    found = []
    for j, h in enumerate(region.constraints):
        grads = h.gradient()
        X = grid.copy()
        for _ in range(30):
            val = h.evaluate_many(X)
            G = np.stack([g.evaluate_many(X) for g in grads], axis=1)
            nrm = np.sum(G * G, axis=1)
            nrm[nrm < 1e-14] = np.inf
            X = X - (val / nrm)[:, None] * G
        val = h.evaluate_many(X)
        ok = np.abs(val) < 1e-9
        for k, other in enumerate(region.constraints):
            if k != j:
                ok &= other.evaluate_many(X) >= -1e-9
        found.append(X[ok])
    return np.vstack(found) if found else np.zeros((0, n))


def compact_cbf(sys: ControlSystem, region: SafeRegion, x_star, u_star, K, N,
                opts: CompactOptions | None = None) -> CompactResult:
    """Lyapunov-ellipse barrier ``delta - (x-x*)^T P (x-x*)`` with the largest
    ``delta`` (at the search resolution) passing both SOS checks."""
    opts = opts or CompactOptions()
    n, m = sys.n, sys.m
    x_star = np.asarray(x_star, dtype=float).reshape(n)
    u_star = np.asarray(u_star, dtype=float).reshape(m)
    if np.max(np.abs(sys.drift_at(x_star) + sys.input_at(x_star) @ u_star)) > 1e-8:
        raise SynthesisError("(x*, u*) is not a fixed point")
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(m, n)
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if numkernel.cholesky(N) is None:
        raise ValueError("N must be positive definite")
    F, G = linearize(sys, x_star, u_star)
    Fbar = F - G @ K
    if not numkernel.is_hurwitz(Fbar):
        raise SynthesisError("K does not stabilize the linearization (F - GK is not Hurwitz)")
    P = numkernel.solve_lyapunov(Fbar, N)
    if numkernel.cholesky(P) is None:
        raise SynthesisError("Lyapunov solution is not positive definite")

    if opts.delta_max is not None:
        delta_max = float(opts.delta_max)
    else:
        seeds = _boundary_seeds(region, opts.verify.box_for(n), opts.seed_grid)
        if not len(seeds):
            raise SynthesisError("no boundary seeds found; pass delta_max explicitly")
        V = quadratic_form(P, x_star)
        delta_max = 4.0 * float(np.max(V.evaluate_many(seeds)))
    res_abs = opts.resolution * delta_max
    history = []

    def feasible(delta):
        b0 = ellipse_barrier(P, x_star, delta)
        contain = all(
            any(_solve_feasible(compact_containment_condition(b0, h, d, opts.margin), opts.verify)
                for d in opts.multiplier_degrees)
            for h in region.constraints
        )
        ok = contain and any(_solve_feasible(compact_cbf_condition(sys, b0, d), opts.verify)
                             for d in opts.multiplier_degrees)
        history.append((delta, ok))
        return ok

    if feasible(delta_max):
        lo = delta_max
    else:
        hi = delta_max
        lo = hi / 2
        while not feasible(lo):
            hi = lo
            lo /= 2
            if lo < res_abs:
                raise SynthesisError(f"no feasible delta above the resolution floor {res_abs:.3g}")
        while hi - lo > res_abs:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
    b0 = ellipse_barrier(P, x_star, lo)
    k, b1 = 0.0, b0
    if opts.enlarge:
        k, b1 = enlarge(b0, region, sys, k_max=opts.k_max, resolution=opts.k_resolution, opts=opts.verify)
    return CompactResult(x_star, u_star, K, P, lo, k, b0, b1, delta_max, res_abs, history)


def enlarge(b0: Polynomial, region: SafeRegion, sys: ControlSystem, h: Polynomial | None = None,
            k_max: float = 1.0, resolution: float = 1e-3, opts: VerifyOptions | None = None):
    """Largest ``k`` in ``(0, k_max]`` (by bisection) with ``b0 + k h`` a CBF.

    Returns ``(0.0, b0)`` when no positive ``k`` verifies at the resolution.
    """
    opts = opts or VerifyOptions()
    if not cbf.verify_cbf(sys, b0, opts).verified:
        raise ValueError("enlarge requires b0 to be a verified CBF")
    h = h if h is not None else region.constraints[0]

    def ok(k):
        return cbf.verify_cbf(sys, b0 + h.scale(k), opts).verified

    if ok(k_max):
        return k_max, b0 + h.scale(k_max)
    lo, hi = 0.0, k_max
    step = resolution * k_max
    while hi - lo > step:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        return 0.0, b0
    return lo, b0 + h.scale(lo)


# -- linear-system helpers -------------------------------------------------------------

def controllability_matrix(F, G) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    blocks = [G]
    for _ in range(F.shape[0] - 1):
        blocks.append(F @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(F, G, tol: float = 1e-9) -> bool:
    C = controllability_matrix(F, G)
    return np.linalg.matrix_rank(C, tol=tol * max(1.0, np.max(np.abs(C)))) == C.shape[0]


def canonical_form(F, G):
    """Single-input transform ``T`` with ``Fc = T F T^-1`` a companion matrix
    (free first row, identity below) and ``Gc = T G = e_1``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    G = np.asarray(G, dtype=float).reshape(n, -1)
    if G.shape[1] != 1:
        raise NotImplementedError("canonical_form supports single-input systems only")
    if not is_controllable(F, G):
        raise UncontrollableError("(F, G) is not controllable")
    coeffs = np.poly(F)  # s^n + a_{n-1} s^{n-1} + ... + a_0
    Fc = np.zeros((n, n))
    Fc[0, :] = -coeffs[1:]
    Fc[1:, :-1] = np.eye(n - 1)
    Gc = np.zeros((n, 1))
    Gc[0, 0] = 1.0
    T = controllability_matrix(Fc, Gc) @ np.linalg.inv(controllability_matrix(F, G))
    T[np.abs(T) < 1e-12] = 0.0
    return T, T @ F @ np.linalg.inv(T), T @ G


def place_poles(F, G, poles) -> np.ndarray:
    """Ackermann's formula for single-input state feedback ``u = -K x``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    G = np.asarray(G, dtype=float).reshape(n, -1)
    if G.shape[1] != 1:
        raise NotImplementedError("pole placement supports single-input systems only")
    if len(poles) != n:
        raise ValueError(f"need {n} poles")
    if not is_controllable(F, G):
        raise UncontrollableError("(F, G) is not controllable")
    coeffs = np.real(np.poly(poles))
    phi = np.zeros((n, n))
    for c in coeffs:
        phi = phi @ F + c * np.eye(n)
    e_last = np.zeros(n)
    e_last[-1] = 1.0
    return (e_last @ np.linalg.solve(controllability_matrix(F, G), phi)).reshape(1, n)


def halfplane_hocbf(F, G, a, c: float, gains: Sequence[float] | None = None,
                    top_gain: float = 1.0) -> HocbfChain:
    """HOCBF chain for the half-plane ``a^T x - c >= 0`` of a linear system.

    The order ``r`` is the first ``s`` with ``a^T F^(s-1) G`` nonzero;
    ``gains`` supplies ``k_0 .. k_{r-2}`` (default all ones).
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    G = np.asarray(G, dtype=float).reshape(n, -1)
    a = np.asarray(a, dtype=float).reshape(n)
    if not np.any(a):
        raise ValueError("half-plane normal a must be nonzero")
    if not is_controllable(F, G):
        raise UncontrollableError("(F, G) is not controllable")
    r = None
    row = a.copy()
    for s in range(1, n + 1):
        if np.max(np.abs(row @ G)) > 1e-12:
            r = s
            break
        row = row @ F
    if r is None:
        raise UncontrollableError("the input never reaches the half-plane function")
    gains = [1.0] * (r - 1) if gains is None else [float(k) for k in gains]
    if len(gains) < r - 1:
        raise ValueError(f"chain of order {r} needs {r - 1} gains")
    sys = ControlSystem.linear(F, G)
    psi0 = Polynomial(n, {tuple(int(i == j) for i in range(n)): a[j] for j in range(n)}) - c
    return HocbfChain.build(sys, psi0, list(gains[: r - 1]) + [top_gain])
