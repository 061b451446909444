"""Closed-loop simulation behind a min-norm CBF safety filter.

The filter solves ``min ||u - u_nom||^2`` subject to one affine row per
barrier, ``(db/dx g) u >= -kappa b - db/dx f``.  For a high-order chain the
row comes from the top level instead:
``(L_g psi_{r-1}) u >= -L_f psi_{r-1} - k_r psi_{r-1}``.

Integration is classic fixed-step RK4 with the input held constant over
each step.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cbf import HocbfChain, SafeRegion
from .poly import ControlSystem, DimensionError, Polynomial, lie, lie_g, quadratic_form


class QpInfeasibleError(ValueError):
    """The filter rows admit no input."""


# -- safety filter -------------------------------------------------------------------

def qp_filter(u_nom, rows: Sequence, tol: float = 1e-10) -> np.ndarray:
    """Project ``u_nom`` onto ``{u : a_j . u >= c_j}``.

    ``rows`` is a sequence of ``(a, c)`` pairs.  A single active row is
    handled in closed form; otherwise active sets of at most ``m`` rows
    are tried in order of size.  Some KKT point of a feasible problem
    always has linearly independent active rows, so the search is
    exhaustive for the handful of rows a safety filter carries.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    m = u_nom.shape[0]
    A = np.zeros((0, m))
    c = np.zeros(0)
    if rows:
        A = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a, _ in rows])
        c = np.array([float(cj) for _, cj in rows])
        if A.shape[1] != m:
            raise DimensionError(f"filter rows have {A.shape[1]} entries, input has {m}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
        raise ValueError("filter rows must be finite")

    norms = np.linalg.norm(A, axis=1)
    scale = np.maximum(1.0, np.abs(c))
    zero = norms <= tol
    for j in np.flatnonzero(zero):
        if c[j] > tol * scale[j]:
            raise QpInfeasibleError(f"row {j} has zero input coefficient and demands {c[j]:.6g} >= 0")
    live = np.flatnonzero(~zero)
    A, c, scale = A[live], c[live], scale[live]

    def feasible(u):
        return np.all(A @ u - c >= -tol * scale * (1.0 + np.linalg.norm(u)))

    if feasible(u_nom):
        return u_nom
    if len(c) == 1:
        a = A[0]
        return u_nom + ((c[0] - a @ u_nom) / (a @ a)) * a

    best = None
    for k in range(1, min(m, len(c)) + 1):
        for S in itertools.combinations(range(len(c)), k):
            AS = A[list(S)]
            gram = AS @ AS.T
            if np.linalg.matrix_rank(gram) < k:
                continue
            lam = np.linalg.solve(gram, c[list(S)] - AS @ u_nom)
            if np.any(lam < -1e-12 * (1.0 + np.abs(lam).max())):
                continue
            u = u_nom + AS.T @ lam
            if feasible(u):
                d = np.linalg.norm(u - u_nom)
                if best is None or d < best[0] - 1e-14:
                    best = (d, u)
        if best is not None:
            return best[1]
    raise QpInfeasibleError("no input satisfies every filter row")


# -- fast evaluation -----------------------------------------------------------------

class _Compiled:
    """A fixed list of polynomials evaluated together at one point."""

    def __init__(self, polys: Sequence[Polynomial], n: int):
        monos = sorted({mono for p in polys for mono in p.monomials()})
        if not monos:
            monos = [(0,) * n]
        self.E = np.array(monos, dtype=float)
        index = {mono: i for i, mono in enumerate(monos)}
        self.C = np.zeros((len(polys), len(monos)))
        for r, p in enumerate(polys):
            for mono, coef in p.items():
                self.C[r, index[mono]] = coef

    def __call__(self, x) -> np.ndarray:
        return self.C @ np.prod(np.power(x[None, :], self.E), axis=1)


# -- scenarios -----------------------------------------------------------------------

@dataclass
class Scenario:
    """One closed-loop run.

    ``barriers`` may mix plain polynomials (relative degree one) and
    ``HocbfChain`` objects.  With a gain ``K`` the nominal input is
    ``-K (x - x_ref)``; without one it is zero.
    """

    system: ControlSystem
    barriers: list
    region: SafeRegion
    x0: Sequence[float]
    T: float = 10.0
    dt: float = 1e-3
    K: Sequence | None = None
    x_ref: Sequence[float] | None = None
    kappa: float | Sequence[float] = 1.0

    def __post_init__(self):
        if isinstance(self.barriers, (Polynomial, HocbfChain)):
            self.barriers = [self.barriers]
        self.barriers = list(self.barriers)
        if not (self.T > 0 and self.dt > 0 and self.dt <= self.T):
            raise ValueError("need T > 0 and 0 < dt <= T")
        n, m = self.system.n, self.system.m
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (n,):
            raise DimensionError(f"x(0) has shape {self.x0.shape}, expected ({n},)")
        if self.region.n != n:
            raise DimensionError("region and system disagree on variable count")
        for b in self.barriers:
            bn = b.base.n if isinstance(b, HocbfChain) else b.n
            if bn != n:
                raise DimensionError("barrier and system disagree on variable count")
        if self.K is not None:
            self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
            if self.K.shape != (m, n):
                raise DimensionError(f"K has shape {self.K.shape}, expected ({m}, {n})")
        self.x_ref = np.zeros(n) if self.x_ref is None else np.asarray(self.x_ref, dtype=float)
        if self.x_ref.shape != (n,):
            raise DimensionError("x_ref has the wrong length")
        kap = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        if kap.size == 1:
            kap = np.full(len(self.barriers), kap[0])
        if kap.shape != (len(self.barriers),) or np.any(kap <= 0):
            raise ValueError("kappa must be positive, one value or one per barrier")
        self.kappa = kap

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def nominal(self, x) -> np.ndarray:
        if self.K is None:
            return np.zeros(self.system.m)
        return -self.K @ (x - self.x_ref)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    h: np.ndarray
    b: np.ndarray
    infeasible: bool = False
    message: str = ""

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, n: int, m: int, p: int, q: int) -> "Trajectory":
        return cls(np.zeros(0), np.zeros((0, n)), np.zeros((0, m)), np.zeros((0, p)), np.zeros((0, q)))

    def min_h(self) -> float:
        return float(self.h.min()) if self.h.size else float("inf")

    def min_b(self) -> float:
        return float(self.b.min()) if self.b.size else float("inf")


@dataclass
class _Rows:
    """Filter rows as compiled polynomials: ``a(x) u >= c(x)``."""

    a: _Compiled
    c: _Compiled
    m: int
    count: int
    rows: list = field(default_factory=list)

    @classmethod
    def build(cls, sys: ControlSystem, barriers, kappa) -> "_Rows":
        a_polys, c_polys = [], []
        for b, k in zip(barriers, kappa):
            if isinstance(b, HocbfChain):
                a_polys.extend(b.top_input)
                c_polys.append(-b.top_drift)
            else:
                a_polys.extend(lie_g(b, sys))
                c_polys.append(-(lie(b, sys.f) + b.scale(k)))
        return cls(_Compiled(a_polys, sys.n), _Compiled(c_polys, sys.n), sys.m, len(c_polys))

    def at(self, x):
        A = self.a(x).reshape(self.count, self.m)
        c = self.c(x)
        return list(zip(A, c))


def simulate(sc: Scenario) -> Trajectory:
    sys = sc.system
    n, m = sys.n, sys.m
    f = _Compiled(list(sys.f), n)
    g = _Compiled([q for row in sys.g for q in row], n)
    hs = _Compiled(list(sc.region.constraints), n)
    bs = _Compiled([b.base if isinstance(b, HocbfChain) else b for b in sc.barriers], n)
    rows = _Rows.build(sys, sc.barriers, sc.kappa)

    def rhs(x, u):
        return f(x) + g(x).reshape(n, m) @ u

    N = sc.steps
    ts, xs, us = [], [], []
    x = sc.x0.copy()
    infeasible, message = False, ""
    for k in range(N + 1):
        try:
            u = qp_filter(sc.nominal(x), rows.at(x))
        except QpInfeasibleError as exc:
            infeasible, message = True, f"filter infeasible at t = {k * sc.dt:.6g}: {exc}"
            break
        ts.append(k * sc.dt)
        xs.append(x.copy())
        us.append(u)
        if k == N:
            break
        dt = sc.dt
        k1 = rhs(x, u)
        k2 = rhs(x + 0.5 * dt * k1, u)
        k3 = rhs(x + 0.5 * dt * k2, u)
        k4 = rhs(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            infeasible, message = True, f"state diverged at t = {(k + 1) * dt:.6g}"
            break
    if not ts:
        tr = Trajectory.empty(n, m, len(sc.region.constraints), len(sc.barriers))
        tr.infeasible, tr.message = infeasible, message
        return tr
    X = np.array(xs)
    return Trajectory(
        t=np.array(ts),
        x=X,
        u=np.array(us).reshape(len(ts), m),
        h=np.array([hs(xi) for xi in X]),
        b=np.array([bs(xi) for xi in X]),
        infeasible=infeasible,
        message=message,
    )


def rk4_open_loop(sys: ControlSystem, x0, u, T: float, dt: float) -> np.ndarray:
    """Terminal state under a constant input (used by the order check)."""
    n, m = sys.n, sys.m
    f = _Compiled(list(sys.f), n)
    g = _Compiled([q for row in sys.g for q in row], n)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(int(round(T / dt))):
        k1 = f(x) + g(x).reshape(n, m) @ u
        k2 = f(x + 0.5 * dt * k1) + g(x + 0.5 * dt * k1).reshape(n, m) @ u
        k3 = f(x + 0.5 * dt * k2) + g(x + 0.5 * dt * k2).reshape(n, m) @ u
        k4 = f(x + dt * k3) + g(x + dt * k3).reshape(n, m) @ u
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# -- CSV -------------------------------------------------------------------------------

def csv_header(n: int, m: int, p: int, q: int) -> list:
    return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + [f"h_{i + 1}" for i in range(p)] + [f"b_{i + 1}" for i in range(q)])


def write_csv(tr: Trajectory, path) -> None:
    n, m, p, q = tr.x.shape[1], tr.u.shape[1], tr.h.shape[1], tr.b.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n, m, p, q))
        for k in range(len(tr)):
            vals = [tr.t[k], *tr.x[k], *tr.u[k], *tr.h[k], *tr.b[k]]
            w.writerow([f"{v:.9g}" for v in vals])


def read_csv(path):
    """Header list and a 2-D array of values."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
    return header, data


# -- the two experiments -------------------------------------------------------------

DISC_F = [[1.0, 0.0], [-1.0, 4.0]]
DISC_G = [[1.0], [0.0]]
DISC_K = [[8.0, -30.0]]
DISC_P = [[6.23, -26.7], [-26.7, 146.7]]
DISC_LEVEL = 1.1575
DISC_CENTER = [0.1378, 0.0]

PENDULUM_F = [[0.0, 1.0], [1.0, 0.0]]
PENDULUM_G = [[0.0], [1.0]]
PENDULUM_K = [[3.0, 3.0]]
PENDULUM_P = [[1.25, 0.25], [0.25, 0.25]]
PENDULUM_LEVEL = 0.01
PENDULUM_BOX = ([-0.1, -0.3], [0.15, 0.25])


def disc_example(x0, T: float = 10.0, dt: float = 1e-3) -> Scenario:
    """Unstable linear system, unit-disc safe set, ellipsoidal barrier."""
    sys = ControlSystem.linear(DISC_F, DISC_G)
    region = SafeRegion((1.0 - quadratic_form(np.eye(2)),))
    b = DISC_LEVEL - quadratic_form(DISC_P, DISC_CENTER)
    return Scenario(sys, [b], region, x0, T=T, dt=dt, K=DISC_K)


def pendulum_example(x0, T: float = 10.0, dt: float = 1e-3) -> Scenario:
    """Linearized inverted pendulum inside a box."""
    sys = ControlSystem.linear(PENDULUM_F, PENDULUM_G)
    region = SafeRegion.box(*PENDULUM_BOX)
    b = PENDULUM_LEVEL - quadratic_form(PENDULUM_P)
    return Scenario(sys, [b], region, x0, T=T, dt=dt, K=PENDULUM_K)
