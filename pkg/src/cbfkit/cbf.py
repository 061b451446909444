"""Control barrier function verification.

Every check follows the same pattern: a semialgebraic "violation set" is
shown empty with a Positivstellensatz identity solved as an SOS program; if
no identity is found at the configured degrees, a numeric search looks for a
point in the violation set.  Verdicts therefore come in three flavours:
``VERIFIED`` (identity found and independently re-checked), ``FALSIFIED``
(explicit witness point), and ``UNKNOWN``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sos
from .poly import ControlSystem, DimensionError, Polynomial, lie, lie_g, relative_degree
from .sdp import Status


class Outcome(str, enum.Enum):
    VERIFIED = "VERIFIED"
    FALSIFIED = "FALSIFIED"
    UNKNOWN = "UNKNOWN"


class RelativeDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class SafeRegion:
    """Conjunction ``h_i(x) >= 0``."""

    constraints: tuple

    def __post_init__(self):
        cons = tuple(self.constraints)
        if not cons:
            raise ValueError("a safe region needs at least one constraint")
        n = cons[0].n
        if any(h.n != n for h in cons):
            raise DimensionError("region constraints disagree on variable count")
        object.__setattr__(self, "constraints", cons)

    @property
    def n(self) -> int:
        return self.constraints[0].n

    def contains(self, x, tol: float = 0.0) -> bool:
        return all(h(x) >= -tol for h in self.constraints)

    @classmethod
    def box(cls, lower, upper) -> "SafeRegion":
        """Axis-aligned box as ``2n`` half-plane constraints."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.shape[0]
        cons = []
        for i in range(n):
            xi = Polynomial.var(n, i + 1)
            cons.append(xi - lower[i])
            cons.append(upper[i] - xi)
        return cls(tuple(cons))


@dataclass(frozen=True)
class HocbfChain:
    """Barrier chain ``psi_0 = b``, ``psi_i = L_f psi_{i-1} + k_i psi_{i-1}``.

    ``psis`` holds ``psi_0 .. psi_{r-1}`` (all input-free).  The top level
    ``psi_r`` depends on ``u``; it is stored as its drift part
    ``L_f psi_{r-1} + k_r psi_{r-1}`` and the input coefficients
    ``L_g psi_{r-1}``.
    """

    base: Polynomial
    gains: tuple
    psis: tuple
    top_drift: Polynomial
    top_input: tuple

    @property
    def r(self) -> int:
        return len(self.gains)

    @classmethod
    def build(cls, sys: ControlSystem, b: Polynomial, gains: Sequence[float]) -> "HocbfChain":
        gains = tuple(float(k) for k in gains)
        if not gains:
            raise ValueError("a chain needs at least one gain")
        if any(k <= 0 for k in gains):
            raise ValueError("class-K gains must be positive")
        if b.n != sys.n:
            raise DimensionError("barrier and system disagree on variable count")
        psis = [b]
        for k in gains[:-1]:
            prev = psis[-1]
            psis.append(lie(prev, sys.f) + prev.scale(k))
        last = psis[-1]
        top_drift = lie(last, sys.f) + last.scale(gains[-1])
        return cls(b, gains, tuple(psis), top_drift, tuple(lie_g(last, sys)))

    def input_parts(self, sys: ControlSystem) -> list:
        """``L_g psi_i`` for each stored level."""
        return [lie_g(p, sys) for p in self.psis]

    def is_structurally_valid(self, sys: ControlSystem) -> bool:
        parts = self.input_parts(sys)
        return all(q.is_zero() for row in parts[:-1] for q in row)


@dataclass
class Verdict:
    outcome: Outcome
    certificates: dict = field(default_factory=dict)
    witness: np.ndarray | None = None
    violated: str = ""
    reason: str = ""
    details: dict = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return self.outcome == Outcome.VERIFIED

    @property
    def falsified(self) -> bool:
        return self.outcome == Outcome.FALSIFIED

    @property
    def certificate(self):
        if not self.certificates:
            return None
        return next(iter(self.certificates.values()))


@dataclass
class VerifyOptions:
    multiplier_degrees: tuple = (2, 4)
    powers: tuple = (1, 2)
    shrink: float = 1e-3
    box: tuple | None = None
    box_halfwidth: float = 2.0
    grid: int = 41
    refinements: int = 50
    budget: int | None = None
    sdp_tol: float = 1e-8
    max_iters: int = 200
    check_tol: float = 1e-6
    witness_tol: float = 1e-6
    seed: int = 0
    check_chain: bool = False
    falsify: bool = True

    def box_for(self, n: int) -> np.ndarray:
        if self.box is not None:
            box = np.asarray(self.box, dtype=float)
            if box.shape != (n, 2):
                raise DimensionError(f"search box must have shape ({n}, 2)")
            return box
        return np.tile([-self.box_halfwidth, self.box_halfwidth], (n, 1))


DEFAULT_OPTIONS = VerifyOptions()


# -- degree bookkeeping ------------------------------------------------------------

def _even_ceil(d: int) -> int:
    return d + (d % 2)


def _free_degree(top: int, partner: Polynomial) -> int:
    return max(2, top - max(partner.degree, 0))


def _schedule(opts: VerifyOptions):
    return [(d, r) for r in opts.powers for d in opts.multiplier_degrees]


def _trivial_certificate(n: int, label: str) -> sos.Certificate:
    prog = sos.SosProgram(n)
    return sos.Certificate(prog, {}, {}, {label: 0.0}, {})


def _unit(p: Polynomial) -> Polynomial:
    scale = p.max_abs_coeff()
    return p.scale(1.0 / scale) if scale > 0 else p


# -- Positivstellensatz programs ---------------------------------------------------

def strict_emptiness_program(
    n: int,
    equalities: Sequence[Polynomial],
    nonnegatives: Sequence[Polynomial],
    negative: Polynomial,
    sos_degree: int,
    power: int,
    label: str = "pss",
) -> sos.SosProgram:
    """Program certifying ``{E = 0, P >= 0, negative < 0}`` is empty.

    Identity: ``sum eta_k E_k + sigma_0 + sigma_1 (-negative)
    + sum gamma_j P_j + negative^(2 power) == 0`` with ``sigma``, ``gamma`` SOS.
    Every input is first scaled to unit max coefficient; positive scaling
    leaves the set unchanged and keeps residuals comparable across problems.
    """
    equalities = [_unit(e) for e in equalities]
    nonnegatives = [_unit(p) for p in nonnegatives]
    negative = _unit(negative)
    target = negative ** (2 * power)
    top = _even_ceil(max(target.degree, sos_degree + negative.degree,
                         *[sos_degree + p.degree for p in nonnegatives], 0))
    prog = sos.SosProgram(n)
    terms = []
    for k, e in enumerate(equalities):
        if e.is_zero():
            continue
        v = prog.free_var(f"eta{k}", degree=_free_degree(top, e))
        terms.append((e, v))
    s0 = prog.sos_var("alpha0", degree=top)
    s1 = prog.sos_var("alpha1", degree=sos_degree)
    terms.append((1.0, s0))
    terms.append((-negative, s1))
    for j, p in enumerate(nonnegatives):
        g = prog.sos_var(f"gamma{j}", degree=sos_degree)
        terms.append((p, g))
    prog.add_identity(label, terms, target)
    return prog


def nonstrict_emptiness_program(
    n: int,
    equalities: Sequence[Polynomial],
    nonnegatives: Sequence[Polynomial],
    sos_degree: int,
    label: str = "pss",
) -> sos.SosProgram:
    """Program certifying ``{E = 0, P >= 0}`` is empty via
    ``sum w_k E_k + beta_0 + sum beta_j P_j + 1 == 0`` (inputs unit-scaled)."""
    equalities = [_unit(e) for e in equalities]
    nonnegatives = [_unit(p) for p in nonnegatives]
    top = _even_ceil(max([sos_degree + p.degree for p in nonnegatives] + [sos_degree, 0]))
    prog = sos.SosProgram(n)
    terms = []
    for k, e in enumerate(equalities):
        v = prog.free_var(f"w{k}", degree=_free_degree(top, e))
        terms.append((e, v))
    b0 = prog.sos_var("beta0", degree=top)
    terms.append((1.0, b0))
    for j, p in enumerate(nonnegatives):
        bj = prog.sos_var(f"beta{j + 1}", degree=sos_degree)
        terms.append((p, bj))
    prog.add_identity(label, terms, 1.0)
    return prog


def _try_programs(builders, opts: VerifyOptions):
    """Run programs in schedule order; return ``(certificate, details, stalled)``."""
    stalled = False
    for details, build in builders:
        try:
            prog = build()
        except sos.DegreeMismatchError:
            continue
        res = sos.solve_program(prog, tol=opts.sdp_tol, max_iters=opts.max_iters, check_tol=opts.check_tol)
        if res.certificate is not None:
            return res.certificate, details, stalled
        if res.status == Status.STALLED:
            stalled = True
    return None, None, stalled


# -- numeric falsification ------------------------------------------------------------

@dataclass
class _Condition:
    equalities: list
    negatives: list
    nonnegatives: list


def _grad_all(polys):
    return [p.gradient() for p in polys]


def _eval(polys, x):
    return np.array([p(x) for p in polys]) if polys else np.zeros(0)


def _jac(grads, x):
    if not grads:
        return np.zeros((0, len(x)))
    return np.array([[g(x) for g in row] for row in grads])


def search_violation(
    cond: _Condition,
    box: np.ndarray,
    opts: VerifyOptions,
    budget: int | None = None,
):
    """Look for ``x`` with ``E(x) = 0``, ``N(x) < 0`` and ``P(x) >= 0``.

    Grid (or seeded uniform) sampling followed by Gauss-Newton refinement of
    the best seeds.  Returns the point or ``None``; ``None`` proves nothing.
    """
    n = box.shape[0]
    tol = opts.witness_tol
    eqs = [p for p in cond.equalities if not p.is_zero()]
    negs, nonneg = list(cond.negatives), list(cond.nonnegatives)
    if any(p.is_zero() for p in negs):
        return None
    budget = budget if budget is not None else opts.budget
    per_axis = opts.grid
    if budget is None:
        budget = min(per_axis ** n, 200_000)
    if per_axis ** n <= budget:
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
        pts = np.array(list(itertools.product(*axes)))
    else:
        rng = np.random.default_rng(opts.seed)
        pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((budget, n))

    def scale_of(p):
        return max(p.max_abs_coeff(), 1e-12)

    merit = np.zeros(len(pts))
    for p in eqs:
        merit += (p.evaluate_many(pts) / scale_of(p)) ** 2
    for p in negs:
        merit += np.maximum(0.0, p.evaluate_many(pts) / scale_of(p)) ** 2
    for p in nonneg:
        merit += np.maximum(0.0, -p.evaluate_many(pts) / scale_of(p)) ** 2
    order = np.argsort(merit, kind="stable")[: opts.refinements]

    geq, gneg, gnon = _grad_all(eqs), _grad_all(negs), _grad_all(nonneg)
    margin = 10 * tol
    width = float(np.max(box[:, 1] - box[:, 0]))

    def ok(x):
        return (
            np.all(np.abs(_eval(eqs, x)) <= 1e-9 + 1e-3 * tol)
            and np.all(_eval(negs, x) <= -tol)
            and np.all(_eval(nonneg, x) >= -1e-12)
        )

    for idx in order:
        x = pts[idx].astype(float).copy()
        for _ in range(60):
            rows, jac = [], []
            e = _eval(eqs, x)
            rows.extend(e)
            jac.extend(_jac(geq, x))
            v = _eval(negs, x)
            Jn = _jac(gneg, x)
            for k in range(len(negs)):
                if v[k] > -margin:
                    rows.append(v[k] + margin)
                    jac.append(Jn[k])
            w = _eval(nonneg, x)
            Jp = _jac(gnon, x)
            for k in range(len(nonneg)):
                if w[k] < 0:
                    rows.append(w[k])
                    jac.append(Jp[k])
            if not rows:
                break
            r = np.array(rows)
            if np.max(np.abs(r)) < 1e-13:
                break
            J = np.array(jac)
            dx = -np.linalg.lstsq(J, r, rcond=None)[0]
            step = np.linalg.norm(dx)
            if step > 0.25 * width:
                dx *= 0.25 * width / step
            x = x + dx
            if not np.all(np.isfinite(x)):
                break
        if np.all(np.isfinite(x)) and ok(x):
            return x
    return None


def _cbf_condition(sys: ControlSystem, b: Polynomial) -> _Condition:
    return _Condition([b] + lie_g(b, sys), [lie(b, sys.f)], [])


def falsify(sys: ControlSystem, b: Polynomial, region: SafeRegion | None = None,
            budget: int | None = None, opts: VerifyOptions = DEFAULT_OPTIONS):
    """Search for ``x`` with ``b = 0``, ``db/dx g = 0`` and ``db/dx f < 0``.

    The search box is ``opts.box`` (default ``[-2, 2]^n``).  When a region is
    given, candidate points must also lie in it.
    """
    if budget is not None and budget < 1:
        raise ValueError("budget must be at least one sample")
    cond = _cbf_condition(sys, b)
    if region is not None:
        cond.nonnegatives.extend(region.constraints)
    return search_violation(cond, opts.box_for(sys.n), opts, budget)


def cbf_violation(sys: ControlSystem, b: Polynomial, x) -> dict:
    """The three quantities that characterize a CBF violation at ``x``."""
    return {
        "b": b(x),
        "Lgb": np.array([q(x) for q in lie_g(b, sys)]),
        "Lfb": lie(b, sys.f)(x),
    }


# -- verification entry points -------------------------------------------------------

def verify_cbf(sys: ControlSystem, b: Polynomial, opts: VerifyOptions = DEFAULT_OPTIONS) -> Verdict:
    """Certify that ``b`` is a CBF: no boundary point where the input cannot act
    and the drift pushes ``b`` negative."""
    if b.n != sys.n:
        raise DimensionError(f"barrier over {b.n} variables, system has {sys.n}")
    Lf = lie(b, sys.f)
    Lg = lie_g(b, sys)
    if Lf.is_zero():
        cert = _trivial_certificate(sys.n, "drift_derivative_zero")
        return Verdict(Outcome.VERIFIED, {"cbf": cert}, reason="db/dx f vanishes identically",
                       details={"short_circuit": True})

    def builder(d, r):
        return lambda: strict_emptiness_program(sys.n, [b] + Lg, [], Lf, d, r, label="cbf")

    builders = [({"multiplier_degree": d, "power": r}, builder(d, r)) for d, r in _schedule(opts)]
    cert, details, stalled = _try_programs(builders, opts)
    if cert is not None:
        return Verdict(Outcome.VERIFIED, {"cbf": cert}, details=details)
    return _fallback(_cbf_condition(sys, b), sys.n, opts, "b = 0, db/dx g = 0, db/dx f < 0", stalled)


def _fallback(cond, n, opts, description, stalled, details=None) -> Verdict:
    details = dict(details or {})
    if opts.falsify:
        x = search_violation(cond, opts.box_for(n), opts)
        if x is not None:
            return Verdict(Outcome.FALSIFIED, witness=x, violated=description, details=details)
    reason = "SDP stalled" if stalled else "degree schedule exhausted"
    details.update({"multiplier_degrees": list(opts.multiplier_degrees), "powers": list(opts.powers)})
    return Verdict(Outcome.UNKNOWN, reason=f"{reason} (degrees {list(opts.multiplier_degrees)}, "
                                           f"powers {list(opts.powers)})", violated=description,
                   details=details)


def shrink(b: Polynomial, eps: float) -> Polynomial:
    """``b - eps * max|coeff(b)|``: a slightly smaller superlevel set."""
    if eps <= 0:
        return b
    return b - eps * b.max_abs_coeff()


def verify_containment(b_set: Sequence[Polynomial], region: SafeRegion,
                       opts: VerifyOptions = DEFAULT_OPTIONS) -> Verdict:
    """Certify ``{b_i >= 0 for all i}`` lies inside the region.

    For every region constraint ``h``: ``sum beta_i b_i + beta_0 + w h + 1 == 0``
    with ``beta`` SOS, after shrinking each ``b_i`` by ``opts.shrink``.
    """
    b_set = [shrink(b, opts.shrink) for b in b_set]
    n = region.n
    certs = {}
    used = {}
    stalled_any = False
    for j, h in enumerate(region.constraints):
        def builder(d, h=h):
            return lambda: nonstrict_emptiness_program(n, [h], b_set, d, label=f"contain{j}")

        builders = [({"multiplier_degree": d}, builder(d)) for d in opts.multiplier_degrees]
        cert, details, stalled = _try_programs(builders, opts)
        stalled_any |= stalled
        if cert is None:
            cond = _Condition([h], [], list(b_set))
            verdict = _fallback(cond, n, opts, f"b_i >= 0 and h_{j} = 0", stalled_any,
                                details={"shrink": opts.shrink, "constraint": j})
            verdict.certificates.update(certs)
            return verdict
        certs[f"containment_{j}"] = cert
        used[j] = details
    return Verdict(Outcome.VERIFIED, certs, details={"shrink": opts.shrink, "degrees": used})


def _check_chain(sys: ControlSystem, chain: HocbfChain, opts: VerifyOptions):
    """Each level: no ``psi_i >= 0, psi_{i-1} = 0, L_f psi_{i-1} < 0``."""
    certs = {}
    for i in range(1, len(chain.psis)):
        prev, cur = chain.psis[i - 1], chain.psis[i]
        Lf = lie(prev, sys.f)
        if Lf.is_zero():
            certs[f"chain_{i}"] = _trivial_certificate(sys.n, f"chain_{i}")
            continue

        def build(d, prev=prev, cur=cur, Lf=Lf):
            def make():
                prog = strict_emptiness_program(sys.n, [prev], [cur], Lf, d, 1, label=f"chain{i}")
                # product term of the cone: psi_i * (-L_f psi_{i-1})
                s = prog.sos_var("gamma_prod", degree=d)
                prog.constraints[0].terms.append((-(cur * Lf), s))
                return prog
            return make

        cert, _, _ = _try_programs([({}, build(d)) for d in opts.multiplier_degrees], opts)
        if cert is None:
            return None, i
        certs[f"chain_{i}"] = cert
    return certs, None


def verify_hocbf(sys: ControlSystem, chain: HocbfChain, region: SafeRegion,
                 opts: VerifyOptions = DEFAULT_OPTIONS) -> Verdict:
    r = chain.r
    rd = relative_degree(chain.base, sys, r)
    if rd != r or not chain.is_structurally_valid(sys):
        raise RelativeDegreeError(f"chain of order {r} but barrier has relative degree {rd}")
    top = chain.psis[-1]
    Lf = lie(top, sys.f)
    Lg = list(chain.top_input)
    lower = list(chain.psis[:-1])
    certs = {}
    cond = _Condition([top] + Lg, [Lf], lower)
    if Lf.is_zero():
        certs["hocbf"] = _trivial_certificate(sys.n, "hocbf")
    else:
        def builder(d, s):
            return lambda: strict_emptiness_program(sys.n, [top] + Lg, lower, Lf, d, s, label="hocbf")

        builders = [({"multiplier_degree": d, "power": s}, builder(d, s)) for d, s in _schedule(opts)]
        cert, details, stalled = _try_programs(builders, opts)
        if cert is None:
            return _fallback(cond, sys.n, opts, "psi_i >= 0, psi_{r-1} = 0, L_g psi_{r-1} = 0, "
                                               "L_f psi_{r-1} < 0", stalled)
        certs["hocbf"] = cert
    if opts.check_chain:
        chain_certs, failed = _check_chain(sys, chain, opts)
        if chain_certs is None:
            prev, cur = chain.psis[failed - 1], chain.psis[failed]
            cc = _Condition([prev], [lie(prev, sys.f)], [cur])
            v = _fallback(cc, sys.n, opts, f"chain level {failed}", False)
            v.certificates.update(certs)
            return v
        certs.update(chain_certs)
    contain = verify_containment(list(chain.psis), region, opts)
    contain.certificates = {**certs, **contain.certificates}
    contain.details["r"] = r
    return contain


def verify_multi(sys: ControlSystem, b_set: Sequence[Polynomial],
                 opts: VerifyOptions = DEFAULT_OPTIONS) -> Verdict:
    """Joint invariance of ``{b_i >= 0 for all i}``: per-barrier conditions plus
    sign agreement of input coefficients on pairwise joint boundaries."""
    b_set = list(b_set)
    if len(b_set) < 2:
        raise ValueError("verify_multi needs at least two barriers; use verify_cbf")
    n = sys.n
    certs = {}
    for i, bi in enumerate(b_set):
        Lf = lie(bi, sys.f)
        Lg = lie_g(bi, sys)
        others = [bj for j, bj in enumerate(b_set) if j != i]
        cond = _Condition([bi] + Lg, [Lf], others)
        if Lf.is_zero():
            certs[f"barrier_{i}"] = _trivial_certificate(n, f"barrier_{i}")
            continue

        def builder(d, r, bi=bi, Lg=Lg, Lf=Lf, others=others):
            return lambda: strict_emptiness_program(n, [bi] + Lg, others, Lf, d, r, label=f"barrier{i}")

        cert, _, stalled = _try_programs(
            [({}, builder(d, r)) for d, r in _schedule(opts)], opts)
        if cert is None:
            return _fallback(cond, n, opts, f"barrier {i}: b_i = 0, b_j >= 0, db_i/dx g = 0, db_i/dx f < 0",
                             stalled, details={"barrier": i})
        certs[f"barrier_{i}"] = cert
    for i, j in itertools.combinations(range(len(b_set)), 2):
        gi, gj = lie_g(b_set[i], sys), lie_g(b_set[j], sys)
        for ch in range(sys.m):
            prod = gi[ch] * gj[ch]
            key = f"pair_{i}_{j}_channel_{ch}"
            if prod.is_zero():
                certs[key] = _trivial_certificate(n, key)
                continue

            def builder(d, r, prod=prod, i=i, j=j):
                return lambda: strict_emptiness_program(n, [b_set[i], b_set[j]], [], prod, d, r, label="pair")

            cert, _, stalled = _try_programs([({}, builder(d, r)) for d, r in _schedule(opts)], opts)
            if cert is None:
                cond = _Condition([b_set[i], b_set[j]], [prod], [])
                return _fallback(cond, n, opts, f"barriers {i},{j}: joint boundary with opposite "
                                                f"input signs on channel {ch}", stalled,
                                 details={"pair": (i, j), "channel": ch})
            certs[key] = cert
    return Verdict(Outcome.VERIFIED, certs)
