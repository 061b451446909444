"""Standard-form semidefinite programs and a dense interior-point solver.

Primal:  maximize <C, X>  s.t.  <A_i, X> = b_i,  X psd (block diagonal)
Dual:    minimize b^T y   s.t.  sum_i y_i A_i - C = S,  S psd

Block sizes follow the SDPA convention: a positive size ``d`` is a dense
``d x d`` block, a negative size ``-d`` is a diagonal block of ``d``
nonnegative entries.  Dense blocks store ``C`` as ``(d, d)`` arrays and the
constraint data as ``(m, d, d)`` stacks; diagonal blocks use ``(d,)`` and
``(m, d)``.
"""

from __future__ import annotations

import enum
import io
import re
from dataclasses import dataclass, field

import numpy as np


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    STALLED = "Stalled"
    # the caller's acceptance test approved an interior iterate before
    # optimality (used for pure feasibility questions)
    FEASIBLE = "Feasible"


class MalformedProblemError(ValueError):
    pass


class SdpaParseError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class SdpProblem:
    blocks: list
    C: list
    A: list
    b: np.ndarray

    def __post_init__(self):
        self.blocks = [int(d) for d in self.blocks]
        self.b = np.asarray(self.b, dtype=float).ravel()
        m = self.b.shape[0]
        if len(self.C) != len(self.blocks) or len(self.A) != len(self.blocks):
            raise MalformedProblemError("C and A must have one entry per block")
        C, A = [], []
        for k, d in enumerate(self.blocks):
            if d == 0:
                raise MalformedProblemError("zero-sized block")
            ck = np.asarray(self.C[k], dtype=float)
            ak = np.asarray(self.A[k], dtype=float)
            if d > 0:
                if ck.shape != (d, d) or ak.shape != (m, d, d):
                    raise MalformedProblemError(f"block {k}: inconsistent shapes {ck.shape}, {ak.shape}")
                if not np.allclose(ck, ck.T, atol=1e-12) or not np.allclose(ak, ak.transpose(0, 2, 1), atol=1e-12):
                    raise MalformedProblemError(f"block {k}: matrices must be symmetric")
            else:
                if ck.shape != (-d,) or ak.shape != (m, -d):
                    raise MalformedProblemError(f"block {k}: inconsistent diagonal shapes")
            C.append(ck)
            A.append(ak)
        self.C, self.A = C, A

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @classmethod
    def from_matrices(cls, blocks, C, A_list, b):
        """Build from per-constraint block lists ``A_list[i][k]``."""
        m = len(A_list)
        A = []
        for k, d in enumerate(blocks):
            shape = (m, d, d) if d > 0 else (m, -d)
            stack = np.zeros(shape)
            for i in range(m):
                stack[i] = A_list[i][k]
            A.append(stack)
        return cls(list(blocks), [np.asarray(c, dtype=float) for c in C], A, b)

    def constraint(self, i: int) -> list:
        return [ak[i] for ak in self.A]

    def structurally_equal(self, other: "SdpProblem") -> bool:
        if self.blocks != other.blocks or not np.array_equal(self.b, other.b):
            return False
        return all(
            np.array_equal(c1, c2) and np.array_equal(a1, a2)
            for c1, c2, a1, a2 in zip(self.C, other.C, self.A, other.A)
        )


@dataclass
class SdpSolution:
    status: Status
    X: list
    y: np.ndarray
    S: list
    primal_objective: float
    dual_objective: float
    iterations: int
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    gap: float = np.inf
    ray: np.ndarray | None = None
    history: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # (primal step, dual step, sigma)


# -- block helpers -------------------------------------------------------------

def _inner(P: list, Q: list) -> float:
    return float(sum(np.vdot(p, q) for p, q in zip(P, Q)))


def _apply_A(prob: SdpProblem, X: list) -> np.ndarray:
    out = np.zeros(prob.m)
    for ak, xk in zip(prob.A, X):
        out += ak.reshape(prob.m, -1) @ xk.ravel()
    return out


def _apply_AT(prob: SdpProblem, y: np.ndarray) -> list:
    out = []
    for d, ak in zip(prob.blocks, prob.A):
        if d > 0:
            out.append(np.tensordot(y, ak, axes=1))
        else:
            out.append(y @ ak)
    return out


def _sym(M):
    return 0.5 * (M + M.T)


def _max_step(blocks, X, dX) -> float:
    alpha = np.inf
    for d, x, dx in zip(blocks, X, dX):
        if d > 0:
            try:
                L = np.linalg.cholesky(x)
            except np.linalg.LinAlgError:
                return 0.0
            Linv = np.linalg.inv(L)
            lam = np.linalg.eigvalsh(_sym(Linv @ dx @ Linv.T))[0]
            if lam < 0:
                alpha = min(alpha, -1.0 / lam)
        else:
            neg = dx < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-x[neg] / dx[neg])))
    return alpha


def _min_eig_blocks(blocks, Z) -> float:
    vals = []
    for d, z in zip(blocks, Z):
        vals.append(np.linalg.eigvalsh(_sym(z))[0] if d > 0 else float(np.min(z)))
    return float(min(vals))


def _norm_blocks(Z) -> float:
    return float(np.sqrt(sum(np.sum(z * z) for z in Z)))


def _finite(*groups) -> bool:
    return all(np.all(np.isfinite(z)) for g in groups for z in g)


def solve(prob: SdpProblem, tol: float = 1e-8, max_iters: int = 200, accept=None) -> SdpSolution:
    """Primal-dual path following (HKM direction, Mehrotra predictor-corrector).

    ``accept``, if given, is called with the primal iterate whenever the
    primal residual drops below 1e-4; returning true ends the solve with
    status ``FEASIBLE``.
    """
    # overflow inside a step is detected explicitly below and ends the solve
    with np.errstate(all="ignore"):
        return _solve(prob, tol, max_iters, accept)


def _solve(prob: SdpProblem, tol: float, max_iters: int, accept) -> SdpSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    blocks = prob.blocks
    m = prob.m
    nu = float(sum(abs(d) for d in blocks))
    scale_entries = [np.max(np.abs(prob.b)) if m else 0.0]
    scale_entries += [np.max(np.abs(c)) for c in prob.C]
    scale_entries += [np.max(np.abs(a)) if a.size else 0.0 for a in prob.A]
    tau = 1.0 + float(max(scale_entries))
    X = [tau * np.eye(d) if d > 0 else tau * np.ones(-d) for d in blocks]
    S = [x.copy() for x in X]
    y = np.zeros(m)
    normb = 1.0 + float(np.linalg.norm(prob.b))
    normC = 1.0 + _norm_blocks(prob.C)
    normA = max(1.0, max((np.max(np.abs(a)) for a in prob.A if a.size), default=1.0))
    history = []
    status = Status.STALLED
    ray = None
    it = 0
    small_steps = 0
    last_step = 1.0
    steps = []
    pinf = dinf = gap = np.inf

    for it in range(max_iters + 1):
        rp = prob.b - _apply_A(prob, X)
        ATy = _apply_AT(prob, y)
        Rd = [c - a + s for c, a, s in zip(prob.C, ATy, S)]
        pobj = _inner(prob.C, X)
        dobj = float(prob.b @ y)
        mu = _inner(X, S) / nu
        pinf = float(np.linalg.norm(rp)) / normb
        dinf = _norm_blocks(Rd) / normC
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((pobj, dobj, pinf, dinf, mu))
        if pinf < tol and dinf < tol and gap < tol:
            status = Status.OPTIMAL
            break
        if accept is not None and pinf < 1e-4 and accept(X):
            status = Status.FEASIBLE
            break

        # primal infeasibility: y_hat with b^T y_hat = -1 and A^T y_hat psd
        if dobj < 0:
            yh = y / (-dobj)
            lam = _min_eig_blocks(blocks, _apply_AT(prob, yh))
            if lam > -tol * normA and (np.linalg.norm(y) > 1e6 or lam > -1e-3 * tol * normA):
                status = Status.PRIMAL_INFEASIBLE
                ray = -yh
                break
        # dual infeasibility: X_hat psd with <C, X_hat> = 1 and A(X_hat) = 0
        if pobj > 0:
            Xh = [x / pobj for x in X]
            if np.linalg.norm(_apply_A(prob, Xh)) < tol * normb and _norm_blocks(X) > 1e8:
                status = Status.DUAL_INFEASIBLE
                break
        if it == max_iters:
            break

        try:
            Sinv = [np.linalg.inv(s) if d > 0 else 1.0 / s for d, s in zip(blocks, S)]
        except np.linalg.LinAlgError:
            break  # iterate hit the cone boundary; report as stalled
        if not all(np.all(np.isfinite(si)) for si in Sinv):
            break
        Sinv = [_sym(si) if d > 0 else si for d, si in zip(blocks, Sinv)]
        M = np.zeros((m, m))
        for d, ak, xk, sk in zip(blocks, prob.A, X, Sinv):
            if d > 0:
                T = np.matmul(np.matmul(xk[None, :, :], ak), sk[None, :, :])
                M += ak.reshape(m, -1) @ T.reshape(m, -1).T
            else:
                M += (ak * (xk * sk)[None, :]) @ ak.T
        M = _sym(M)
        try:
            Lm = np.linalg.cholesky(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))

            def msolve(r):
                # two rounds of iterative refinement; M is badly conditioned late
                z = np.linalg.solve(Lm.T, np.linalg.solve(Lm, r))
                for _ in range(2):
                    z = z + np.linalg.solve(Lm.T, np.linalg.solve(Lm, r - M @ z))
                return z
        except np.linalg.LinAlgError:
            msolve = lambda r: np.linalg.lstsq(M, r, rcond=None)[0]

        XRdSinv = [
            x @ rd @ si if d > 0 else x * rd * si for d, x, rd, si in zip(blocks, X, Rd, Sinv)
        ]
        base_rhs = _apply_A(prob, XRdSinv) - rp

        def direction(G):
            dy = msolve(_apply_A(prob, G) + base_rhs)
            ATdy = _apply_AT(prob, dy)
            dS = [a - rd for a, rd in zip(ATdy, Rd)]
            dX = []
            for d, g, x, ds, si in zip(blocks, G, X, dS, Sinv):
                if d > 0:
                    dX.append(_sym(g - x @ ds @ si))
                else:
                    dX.append(g - x * ds * si)
            return dX, dy, dS

        # predictor
        G = [-x for x in X]
        dXp, dyp, dSp = direction(G)
        if not _finite(dXp, dSp, [dyp]):
            break
        ap = min(1.0, _max_step(blocks, X, dXp))
        ad = min(1.0, _max_step(blocks, S, dSp))
        Xa = [x + ap * dx for x, dx in zip(X, dXp)]
        Sa = [s + ad * ds for s, ds in zip(S, dSp)]
        mu_aff = _inner(Xa, Sa) / nu
        sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0
        if last_step < 0.5:
            # short steps mean the iterate is badly centered; aggressive
            # reduction of mu here strands the primal residual
            sigma = max(sigma, 0.5 * (1.0 - last_step))
        rel_mu = mu * nu / (1.0 + abs(pobj) + abs(dobj))
        if pinf > 10.0 * rel_mu and pinf > tol:
            # complementarity is ahead of primal feasibility; hold mu back
            sigma = max(sigma, 0.5)

        # corrector
        G = []
        for d, x, si, dx, ds in zip(blocks, X, Sinv, dXp, dSp):
            if d > 0:
                G.append(sigma * mu * si - x - dx @ ds @ si)
            else:
                G.append(sigma * mu * si - x - dx * ds * si)
        dX, dy, dS = direction(G)
        if not _finite(dX, dS, [dy]):
            break
        ap = min(1.0, 0.98 * _max_step(blocks, X, dX))
        ad = min(1.0, 0.98 * _max_step(blocks, S, dS))
        last_step = min(ap, ad)
        steps.append((ap, ad, sigma))
        if ap < 1e-10 and ad < 1e-10:
            small_steps += 1
            if small_steps >= 3:
                break
        else:
            small_steps = 0
        X = [x + ap * dx for x, dx in zip(X, dX)]
        S = [s + ad * ds for s, ds in zip(S, dS)]
        y = y + ad * dy
        X = [_sym(x) if d > 0 else x for d, x in zip(blocks, X)]
        S = [_sym(s) if d > 0 else s for d, s in zip(blocks, S)]

    return SdpSolution(
        status=status,
        X=X,
        y=y,
        S=S,
        primal_objective=_inner(prob.C, X),
        dual_objective=float(prob.b @ y),
        iterations=it,
        primal_residual=pinf,
        dual_residual=dinf,
        gap=gap,
        ray=ray,
        history=history,
        steps=steps,
    )


# -- SDPA sparse format ---------------------------------------------------------

def _fmt(v: float) -> str:
    return "%.16e" % v


def export_sdpa(prob: SdpProblem) -> str:
    out = io.StringIO()
    out.write(f"{prob.m}\n{len(prob.blocks)}\n")
    out.write(" ".join(str(d) for d in prob.blocks) + "\n")
    out.write(" ".join(_fmt(v) for v in prob.b) + "\n")
    mats = [prob.C] + [prob.constraint(i) for i in range(prob.m)]
    for matno, mat in enumerate(mats):
        for k, (d, blk) in enumerate(zip(prob.blocks, mat), start=1):
            if d > 0:
                for i in range(d):
                    for j in range(i, d):
                        v = blk[i, j]
                        if v != 0.0:
                            out.write(f"{matno} {k} {i + 1} {j + 1} {_fmt(v)}\n")
            else:
                for i in range(-d):
                    v = blk[i]
                    if v != 0.0:
                        out.write(f"{matno} {k} {i + 1} {i + 1} {_fmt(v)}\n")
    return out.getvalue()


_SEP = re.compile(r"[,{}()\s]+")


def import_sdpa(text: str) -> SdpProblem:
    raw = text.splitlines()
    lines = []
    for lineno, line in enumerate(raw, start=1):
        stripped = line.strip()
        if stripped.startswith(('"', "*")):
            continue
        lines.append((lineno, stripped))

    def fields(idx):
        lineno, line = lines[idx]
        return lineno, [t for t in _SEP.split(line) if t]

    if len(lines) < 3:
        raise SdpaParseError("truncated header", len(raw) + 1)
    try:
        lineno, f = fields(0)
        m = int(f[0])
        lineno, f = fields(1)
        nblocks = int(f[0])
        lineno, f = fields(2)
        blocks = [int(t) for t in f[:nblocks]]
        if len(blocks) != nblocks:
            raise SdpaParseError("block size count mismatch", lineno)
    except (ValueError, IndexError):
        raise SdpaParseError("malformed header", lineno) from None
    pos = 3
    if m > 0:
        if pos >= len(lines):
            raise SdpaParseError("missing right-hand side", len(raw) + 1)
        lineno, f = fields(pos)
        try:
            b = np.array([float(t) for t in f[:m]])
        except ValueError:
            raise SdpaParseError("malformed right-hand side", lineno) from None
        if b.shape[0] != m:
            raise SdpaParseError("right-hand side length mismatch", lineno)
        pos += 1
    else:
        b = np.zeros(0)
        if pos < len(lines) and not lines[pos][1]:
            pos += 1
    C = [np.zeros((d, d)) if d > 0 else np.zeros(-d) for d in blocks]
    A = [np.zeros((m, d, d)) if d > 0 else np.zeros((m, -d)) for d in blocks]
    for lineno, line in lines[pos:]:
        if not line:
            continue
        f = [t for t in _SEP.split(line) if t]
        try:
            matno, blk, i, j = (int(t) for t in f[:4])
            v = float(f[4])
        except (ValueError, IndexError):
            raise SdpaParseError("malformed entry", lineno) from None
        if not (0 <= matno <= m and 1 <= blk <= nblocks):
            raise SdpaParseError("entry index out of range", lineno)
        d = blocks[blk - 1]
        size = abs(d)
        if not (1 <= i <= size and 1 <= j <= size) or (d < 0 and i != j):
            raise SdpaParseError("entry position out of range", lineno)
        target = C[blk - 1] if matno == 0 else A[blk - 1][matno - 1]
        if d > 0:
            target[i - 1, j - 1] = v
            target[j - 1, i - 1] = v
        else:
            target[i - 1] = v
    return SdpProblem(blocks, C, A, b)
