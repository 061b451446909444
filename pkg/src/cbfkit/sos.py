"""Sum-of-squares programs over polynomial decision variables.

Decision polynomials are either SOS (Gram form ``z(x)^T Q z(x)`` with ``Q``
psd) or free (one unknown coefficient per basis monomial, split into a
nonnegative pair inside a diagonal block).  Constraints are affine polynomial
identities: ``sum_k L_k(v_k) + c == 0`` where each ``L_k`` is either
multiplication by a known polynomial or an arbitrary linear map on
polynomials (e.g. a Lie derivative).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from . import numkernel, sdp
from .poly import DimensionError, Polynomial, total_degree_monomials

LinearMap = Union[Polynomial, float, Callable[[Polynomial], Polynomial]]


class DegreeMismatchError(ValueError):
    """A constraint has target monomials that no decision variable can reach."""


class ExtractionError(RuntimeError):
    pass


def monomial_basis(n: int, max_deg: int, even_only: bool = False) -> list:
    """Monomials of total degree ``<= max_deg`` (grlex order)."""
    if max_deg < 0:
        raise ValueError("max_deg must be nonnegative")
    monos = total_degree_monomials(n, max_deg)
    if even_only:
        monos = [m for m in monos if sum(m) % 2 == 0]
    return monos


def gram_basis(n: int, degree: int) -> list:
    """Basis for an SOS polynomial of the given (even) degree."""
    return monomial_basis(n, max(0, (degree + 1) // 2))


def newton_basis(p: Polynomial) -> list:
    """Gram basis trimmed to half the Newton polytope of ``p``.

    A monomial ``x^a`` can only appear in a square summing to ``p`` when
    ``2a`` lies in the convex hull of the support of ``p``.  Dropping the
    others removes Gram rows that would be forced to zero, which otherwise
    leaves the Gram feasible set without an interior.
    """
    support = np.array([m for m, c in p.items() if c != 0.0], dtype=float)
    full = gram_basis(p.n, max(p.degree, 0))
    if len(support) == 0:
        return full
    k = len(support)
    A_eq = np.vstack([support.T, np.ones((1, k))])

    def inside(mono):
        rhs = np.concatenate([2.0 * np.asarray(mono, dtype=float), [1.0]])
        res = linprog(np.zeros(k), A_eq=A_eq, b_eq=rhs, bounds=(0, None), method="highs")
        return res.status == 0

    kept = [m for m in full if inside(m)]
    return kept or full


@dataclass(frozen=True)
class PolyVariable:
    name: str
    kind: str  # "sos" or "free"
    basis: tuple
    id: int

    @property
    def n(self) -> int:
        return len(self.basis[0])

    @property
    def degree(self) -> int:
        d = max(sum(m) for m in self.basis)
        return 2 * d if self.kind == "sos" else d


@dataclass
class Constraint:
    name: str
    terms: list  # (LinearMap, PolyVariable)
    constant: Polynomial


class SosProgram:
    """Container for decision polynomials and identity constraints."""

    def __init__(self, n: int):
        self.n = n
        self.variables: list = []
        self.constraints: list = []
        self.objective: list = []  # (weight, scalar free variable)
        self._names = set()

    def _register(self, name, kind, basis) -> PolyVariable:
        if name in self._names:
            raise ValueError(f"duplicate variable name {name!r}")
        basis = tuple(tuple(m) for m in basis)
        if not basis or any(len(m) != self.n for m in basis):
            raise DimensionError(f"basis for {name!r} must be nonempty monomials in {self.n} variables")
        v = PolyVariable(name, kind, basis, len(self.variables))
        self.variables.append(v)
        self._names.add(name)
        return v

    def sos_var(self, name: str, degree: int | None = None, basis=None) -> PolyVariable:
        """SOS decision polynomial of the given degree (or explicit Gram basis)."""
        if basis is None:
            basis = gram_basis(self.n, degree or 0)
        return self._register(name, "sos", basis)

    def free_var(self, name: str, degree: int | None = None, monomials=None) -> PolyVariable:
        if monomials is None:
            monomials = monomial_basis(self.n, max(0, degree or 0))
        return self._register(name, "free", monomials)

    def scalar_var(self, name: str, lower: float | None = None) -> PolyVariable:
        """Free scalar; with ``lower`` an extra identity keeps it ``>= lower``."""
        v = self.free_var(name, monomials=[(0,) * self.n])
        if lower is not None:
            slack = self.sos_var(f"{name}_slack", basis=[(0,) * self.n])
            self.add_identity(
                f"{name}_lower",
                [(1.0, v), (-1.0, slack)],
                Polynomial.constant(self.n, -lower),
            )
        return v

    def add_identity(self, name: str, terms: Sequence, constant: Polynomial | float = 0.0) -> Constraint:
        """Require ``sum L(v) + constant == 0`` identically in ``x``."""
        if not isinstance(constant, Polynomial):
            constant = Polynomial.constant(self.n, float(constant))
        for _, v in terms:
            if v not in self.variables:
                raise ValueError(f"variable {v.name!r} is not registered")
        c = Constraint(name, list(terms), constant)
        self.constraints.append(c)
        return c

    def add_sos_constraint(self, name: str, terms: Sequence, constant: Polynomial | float = 0.0,
                           degree: int | None = None) -> PolyVariable:
        """Require ``sum L(v) + constant`` to be SOS; returns the slack variable."""
        if degree is None:
            degree = _expression_degree(self.n, terms, constant)
        slack = self.sos_var(f"{name}_sos", degree=degree)
        self.add_identity(name, list(terms) + [(-1.0, slack)], constant)
        return slack

    def minimize(self, v: PolyVariable, weight: float = 1.0):
        if v.kind != "free" or v.basis != ((0,) * self.n,):
            raise ValueError("objective terms must be free scalar variables")
        self.objective.append((weight, v))


def _apply_map(L: LinearMap, p: Polynomial) -> Polynomial:
    if isinstance(L, Polynomial):
        return L * p
    if isinstance(L, (int, float)):
        return p.scale(float(L))
    return L(p)


def _expression_degree(n, terms, constant) -> int:
    deg = constant.degree if isinstance(constant, Polynomial) else 0
    for L, v in terms:
        probe = Polynomial.zero(n)
        for m in v.basis:
            probe = probe + Polynomial.monomial(m)
        if v.kind == "sos":
            probe = probe * probe
        deg = max(deg, _apply_map(L, probe).degree)
    deg = max(deg, 0)
    return deg + (deg % 2)


@dataclass
class IndexMap:
    blocks: dict  # sos variable name -> block index
    free: dict  # free variable name -> (pos indices, neg indices) in diag block
    free_block: int | None
    rows: list  # (constraint name, monomial) per SDP row


def compile(prog: SosProgram, regularization: float | None = None):
    """Lower ``prog`` to an :class:`SdpProblem`; returns ``(problem, index_map)``.

    Gram and free-coefficient sizes are penalized by ``regularization`` (default
    1 for pure feasibility programs, 1e-6 with an objective) so the lowered
    problem has a bounded optimal face.
    """
    n = prog.n
    sos_vars = [v for v in prog.variables if v.kind == "sos"]
    free_vars = [v for v in prog.variables if v.kind == "free"]
    blocks = [len(v.basis) for v in sos_vars]
    block_of = {v.name: k for k, v in enumerate(sos_vars)}
    free_idx = {}
    nfree = 0
    for v in free_vars:
        k = len(v.basis)
        free_idx[v.name] = (list(range(nfree, nfree + k)), list(range(nfree + k, nfree + 2 * k)))
        nfree += 2 * k
    free_block = None
    if nfree:
        free_block = len(blocks)
        blocks.append(-nfree)

    # row accumulation: key (constraint index, monomial) -> sparse entries
    rows: dict = {}
    rhs: dict = {}
    image_cache: dict = {}

    def image(ci, L, mono):
        key = (ci, id(L), mono)
        if key not in image_cache:
            image_cache[key] = _apply_map(L, Polynomial.monomial(mono))
        return image_cache[key]

    for ci, con in enumerate(prog.constraints):
        for mono, c in con.constant.items():
            rhs[(ci, mono)] = rhs.get((ci, mono), 0.0) - c
            rows.setdefault((ci, mono), [])
        for L, v in con.terms:
            if v.kind == "sos":
                k = block_of[v.name]
                z = v.basis
                for a in range(len(z)):
                    for b in range(a, len(z)):
                        prod = tuple(p + q for p, q in zip(z[a], z[b]))
                        for mono, c in image(ci, L, prod).items():
                            rows.setdefault((ci, mono), []).append((k, a, b, c))
            else:
                pos, neg = free_idx[v.name]
                for t, w in enumerate(v.basis):
                    for mono, c in image(ci, L, w).items():
                        entries = rows.setdefault((ci, mono), [])
                        entries.append((free_block, pos[t], None, c))
                        entries.append((free_block, neg[t], None, -c))

    keys = sorted(rows, key=lambda key: (key[0], sum(key[1]), tuple(-e for e in key[1])))
    kept = []
    for key in keys:
        total = {}
        for entry in rows[key]:
            ident = entry[:3]
            total[ident] = total.get(ident, 0.0) + entry[3]
        nz = {ident: c for ident, c in total.items() if abs(c) > 1e-14}
        r = rhs.get(key, 0.0)
        if not nz:
            if abs(r) > 1e-12:
                name = prog.constraints[key[0]].name
                raise DegreeMismatchError(
                    f"constraint {name!r}: monomial {key[1]} cannot be matched by the declared bases"
                )
            continue
        kept.append((key, nz, r))

    m = len(kept)
    A = [np.zeros((m, d, d)) if d > 0 else np.zeros((m, -d)) for d in blocks]
    b = np.zeros(m)
    for i, (key, nz, r) in enumerate(kept):
        b[i] = r
        for (k, a, bb), c in nz.items():
            if bb is None:
                A[k][i, a] += c
            elif a == bb:
                A[k][i, a, a] += c
            else:
                A[k][i, a, bb] += c
                A[k][i, bb, a] += c
    if regularization is None:
        regularization = 1e-6 if prog.objective else 1.0
    C = [-regularization * np.eye(d) if d > 0 else -regularization * np.ones(-d) for d in blocks]
    for weight, v in prog.objective:
        pos, neg = free_idx[v.name]
        C[free_block][pos[0]] += -weight
        C[free_block][neg[0]] += weight
    if not blocks:
        raise ValueError("program has no decision variables")
    problem = sdp.SdpProblem(blocks, C, A, b)
    imap = IndexMap(block_of, free_idx, free_block, [(prog.constraints[k[0]].name, k[1]) for k, _, _ in kept])
    return problem, imap


@dataclass
class Certificate:
    program: SosProgram
    values: dict  # variable name -> Polynomial
    grams: dict  # sos variable name -> Gram matrix
    residuals: dict  # constraint name -> max |coefficient| of the identity
    min_eigs: dict  # sos variable name -> min Gram eigenvalue
    objective: float | None = None

    def __getitem__(self, name):
        return self.values[name]

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    @property
    def min_gram_eig(self) -> float:
        return min(self.min_eigs.values(), default=0.0)


def _gram_poly(basis, Q) -> Polynomial:
    n = len(basis[0])
    terms: dict = {}
    for a, za in enumerate(basis):
        for b, zb in enumerate(basis):
            mono = tuple(p + q for p, q in zip(za, zb))
            terms[mono] = terms.get(mono, 0.0) + Q[a, b]
    return Polynomial(n, terms)


def identity_residuals(prog: SosProgram, values: dict) -> dict:
    out = {}
    for con in prog.constraints:
        total = con.constant
        for L, v in con.terms:
            total = total + _apply_map(L, values[v.name])
        out[con.name] = total.max_abs_coeff()
    return out


def _blocks_worst_eig(blocks, X) -> float:
    return min((np.linalg.eigvalsh(b)[0] if d > 0 else b.min()) for d, b in zip(blocks, X))


def _factor_refine(problem: sdp.SdpProblem, X: list, rel: float, iters: int = 30):
    """Gauss-Newton on a low-rank factorization ``X_k = L_k L_k^T``.

    Gram matrices of SOS programs often sit on a face of the cone with no
    interior, where an interior-point iterate stalls a little short of
    feasibility.  Starting from the eigenvectors above ``rel * max
    eigenvalue``, the equalities are solved in the factor, so the result is
    psd by construction.  Returns ``None`` if the residual does not vanish.
    """
    m = problem.m
    factors = []
    for d, xk in zip(problem.blocks, X):
        if d > 0:
            w, V = np.linalg.eigh(xk)
            keep = w > rel * max(w[-1], 1e-300)
            factors.append(V[:, keep] * np.sqrt(w[keep]))
        else:
            factors.append(np.sqrt(np.maximum(xk, 0.0)) * (xk > rel * max(xk.max(), 1e-300)))
    target = 1e-13 * (1.0 + np.abs(problem.b).max())

    def assemble(fs):
        return [L @ L.T if d > 0 else L * L for d, L in zip(problem.blocks, fs)]

    def residual(fs):
        Xs = assemble(fs)
        return np.array([sum(np.sum(a[i] * x) for a, x in zip(problem.A, Xs)) for i in range(m)]) - problem.b

    for _ in range(iters):
        R = residual(factors)
        if np.abs(R).max() <= target:
            return assemble(factors)
        cols = []
        for d, ak, L in zip(problem.blocks, problem.A, factors):
            if d > 0:
                cols.append(2.0 * np.einsum("mab,bj->maj", ak, L).reshape(m, -1))
            else:
                cols.append(2.0 * ak * L[None, :])
        J = np.hstack(cols)
        step = np.linalg.lstsq(J, -R, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        pos, new = 0, []
        for d, L in zip(problem.blocks, factors):
            size = L.size
            new.append(L + step[pos:pos + size].reshape(L.shape))
            pos += size
        factors = new
    R = residual(factors)
    return assemble(factors) if np.abs(R).max() <= 1e3 * target else None


class _AffineProjector:
    """Minimum-norm correction onto ``{X : A(X) = b}``."""

    def __init__(self, problem: sdp.SdpProblem, shapes):
        m = problem.m
        self.problem = problem
        self.shapes = list(shapes)
        self.Amat = np.hstack([a.reshape(m, -1) for a in problem.A])
        self.pinv = np.linalg.pinv(self.Amat)

    def flat(self, X) -> np.ndarray:
        return np.concatenate([b.ravel() for b in X])

    def unflat(self, x) -> list:
        out, pos = [], 0
        for d, shape in zip(self.problem.blocks, self.shapes):
            size = int(np.prod(shape))
            blk = x[pos:pos + size].reshape(shape)
            out.append(0.5 * (blk + blk.T) if d > 0 else blk)
            pos += size
        return out

    def __call__(self, X) -> list:
        x = self.flat(X)
        return self.unflat(x - self.pinv @ (self.Amat @ x - self.problem.b))


def _interior_acceptor(problem: sdp.SdpProblem, margin: float = 1e-10):
    """Acceptance test for feasibility programs: the projected iterate is
    strictly psd, so it is a certificate with room to spare."""
    proj = None

    def accept(X) -> bool:
        nonlocal proj
        if proj is None:
            proj = _AffineProjector(problem, [x.shape for x in X])
        Xp = proj(X)
        scale = max(1.0, max(float(np.abs(x).max()) for x in Xp if x.size))
        return _blocks_worst_eig(problem.blocks, Xp) > margin * scale

    return accept


def _polish(problem: sdp.SdpProblem, X: list, rounds: int = 60) -> list:
    """Pull a near-optimal iterate onto the affine equality set.

    First a minimum-norm correction; if that leaves some block indefinite,
    the equalities are re-solved in a low-rank factor seeded by the
    iterate's dominant eigenvectors, and failing that a few alternating projections
    (clip negative eigenvalues, re-project) are tried.  The most nearly psd
    candidate wins; every candidate satisfies the equalities.
    """
    if problem.m == 0:
        return X
    blocks = problem.blocks
    project = _AffineProjector(problem, [xk.shape for xk in X])
    cur = project(X)
    best, best_eig = cur, _blocks_worst_eig(blocks, cur)
    if best_eig >= 0.0:
        return best
    for rel in (1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2):
        face = _factor_refine(problem, X, rel)
        if face is not None:
            eig = _blocks_worst_eig(blocks, face)
            if eig > best_eig:
                best, best_eig = face, eig
            if eig >= 0.0:
                return best
    for _ in range(rounds):
        clipped = []
        for d, b in zip(blocks, cur):
            if d > 0:
                w, V = np.linalg.eigh(b)
                clipped.append((V * np.maximum(w, 0.0)) @ V.T)
            else:
                clipped.append(np.maximum(b, 0.0))
        cur = project(clipped)
        eig = _blocks_worst_eig(blocks, cur)
        if eig > best_eig:
            best, best_eig = cur, eig
        if best_eig >= 0.0:
            break
    return best


def extract(prog: SosProgram, solution: sdp.SdpSolution, imap: IndexMap,
            problem: sdp.SdpProblem | None = None, allow_stalled: bool = False) -> Certificate:
    """Assemble decision polynomials and recompute residuals and Gram spectra.

    ``allow_stalled`` accepts the last iterate of a stalled solve; the result
    is only trustworthy after :func:`check_certificate`.
    """
    ok = solution.status in (sdp.Status.OPTIMAL, sdp.Status.FEASIBLE) or (
        allow_stalled and solution.status == sdp.Status.STALLED)
    if not ok:
        raise ExtractionError(f"cannot extract a certificate from status {solution.status.value}")
    X = solution.X if problem is None else _polish(problem, solution.X)
    values, grams = {}, {}
    for v in prog.variables:
        if v.kind == "sos":
            Q = np.array(X[imap.blocks[v.name]])
            grams[v.name] = Q
            values[v.name] = _gram_poly(v.basis, Q)
        else:
            pos, neg = imap.free[v.name]
            diag = X[imap.free_block]
            coeffs = diag[pos] - diag[neg]
            values[v.name] = Polynomial(prog.n, dict(zip(v.basis, coeffs)))
    residuals = identity_residuals(prog, values)
    min_eigs = {name: numkernel.min_eig(Q) for name, Q in grams.items()}
    objective = None
    if prog.objective:
        objective = sum(w * values[v.name].coeff((0,) * prog.n) for w, v in prog.objective)
    return Certificate(prog, values, grams, residuals, min_eigs, objective)


def check_certificate(cert: Certificate, tol: float = 1e-6) -> bool:
    """Independent re-check: identities hold and every Gram matrix is psd."""
    prog = cert.program
    residuals = identity_residuals(prog, cert.values)
    if any(r > tol for r in residuals.values()):
        return False
    for v in prog.variables:
        if v.kind != "sos":
            continue
        Q = cert.grams[v.name]
        if (_gram_poly(v.basis, Q) - cert.values[v.name]).max_abs_coeff() > tol:
            return False
        if numkernel.min_eig(Q) < -tol:
            return False
    return True


def _strictly_psd(cert: Certificate, rel: float) -> bool:
    for name, Q in cert.grams.items():
        scale = max(1.0, float(np.abs(Q).max()) if Q.size else 0.0)
        if cert.min_eigs[name] < -rel * scale:
            return False
    return True


@dataclass
class SolveResult:
    status: sdp.Status
    certificate: Certificate | None
    solution: sdp.SdpSolution
    problem: sdp.SdpProblem
    index_map: IndexMap

    @property
    def feasible(self) -> bool:
        return self.certificate is not None


def solve_program(prog: SosProgram, tol: float = 1e-8, max_iters: int = 200,
                  regularization: float | None = None, check_tol: float = 1e-6,
                  psd_tol: float = 1e-9) -> SolveResult:
    """Compile, solve and extract; the certificate is kept only if it re-checks.

    Besides :func:`check_certificate` at ``check_tol``, every polished Gram
    matrix must be psd to within ``psd_tol`` relative to its largest entry.
    A Gram matrix that is indefinite at the 1e-7 level can "certify" an
    identity that is actually false, while genuine certificates polish to
    psd at rounding level.
    """
    problem, imap = compile(prog, regularization)
    # Without an objective, the trace regularizer drives the solve to a
    # rank-deficient face; any strictly interior feasible iterate is a
    # better certificate, so take the first one that projects cleanly.
    accept = None if prog.objective else _interior_acceptor(problem)
    sol = sdp.solve(problem, tol=tol, max_iters=max_iters, accept=accept)
    cert = None
    # a stalled interior point run is often a hair away from optimal; its
    # iterate is still usable whenever the independent re-check accepts it
    usable = sol.status in (sdp.Status.OPTIMAL, sdp.Status.FEASIBLE) or (
        sol.status == sdp.Status.STALLED and sol.primal_residual < 1e-6)
    if usable:
        cert = extract(prog, sol, imap, problem, allow_stalled=True)
        if not check_certificate(cert, check_tol) or not _strictly_psd(cert, psd_tol):
            cert = None
    return SolveResult(sol.status, cert, sol, problem, imap)


def is_sos(p: Polynomial, tol: float = 1e-8) -> SolveResult:
    """Feasibility of ``p`` as a sum of squares, over the Newton-polytope basis."""
    prog = SosProgram(p.n)
    sigma = prog.sos_var("sigma", basis=newton_basis(p))
    prog.add_identity("target", [(1.0, sigma)], -p)
    return solve_program(prog, tol=tol)
