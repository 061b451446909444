"""Command-line front end.

    cbfkit <command> <problem-file> [--out DIR] [--degree D] [--tol T]
                                    [--max-iter K] [--seed S] [--jobs J]

Exit codes: 0 verified (or success), 2 falsified, 3 unknown, 1 usage or
parse error.

Problem files are line oriented::

    [system]
    F = [[1, 0], [-1, 4]]          # or n, m, f = [...], g = [[...], ...]
    G = [[1], [0]]
    [safety]
    h = ["1 - x1^2 - x2^2"]
    [candidate]
    b = "1.1575 - 6.23*(x1 - 0.1378)^2 + 53.4*(x1 - 0.1378)*x2 - 146.7*x2^2"
    [scenario]
    x0 = [-0.75, -0.15]
    K = [[8, -30]]
    [options]
    multiplier_degrees = [2, 4]

Values are Python literals; polynomials are quoted strings in the usual
``x1``, ``x2``, ... grammar.
"""

from __future__ import annotations

import argparse
import ast
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cbf, sdp, sim, sos, synth
from .cbf import HocbfChain, Outcome, SafeRegion, Verdict, VerifyOptions
from .poly import ControlSystem, DimensionError, ParseError, Polynomial, parse, to_text

COMMANDS = ("verify", "verify-hocbf", "verify-multi", "synth-descent", "synth-compact",
            "simulate", "export-sdpa")

EXIT = {Outcome.VERIFIED: 0, Outcome.FALSIFIED: 2, Outcome.UNKNOWN: 3}
EXIT_USAGE = 1

SECTIONS = ("system", "safety", "candidate", "scenario", "options")
KEYS = {
    "system": {"n", "m", "f", "g", "F", "G"},
    "safety": {"h"},
    "candidate": {"b", "gains"},
    "scenario": {"x0", "T", "dt", "K", "x_ref", "kappa"},
    "options": {
        "multiplier_degrees", "powers", "shrink", "sdp_tol", "sdp_iters", "check_tol",
        "budget", "seed", "box_halfwidth", "descent_iters", "eps", "descent_degree",
        "resolution", "margin", "N", "K", "x_seed", "u_seed", "enlarge", "k_max",
    },
}


class ProblemFileError(ValueError):
    def __init__(self, message: str, section: str | None = None, line: int | None = None):
        where = []
        if section:
            where.append(f"[{section}]")
        if line is not None:
            where.append(f"line {line}")
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.section = section
        self.line = line


@dataclass
class ProblemFile:
    system: ControlSystem
    region: SafeRegion
    candidates: list = field(default_factory=list)
    gains: tuple | None = None
    scenario: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.system.n


# -- loading ------------------------------------------------------------------------

def _raw_sections(text: str):
    sections: dict = {}
    lines: dict = {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in SECTIONS:
                raise ProblemFileError(f"unknown section {name!r}", None, no)
            if name in sections:
                raise ProblemFileError("section appears twice", name, no)
            current = name
            sections[name] = {}
            lines[name] = {"__start__": no}
            continue
        if current is None:
            raise ProblemFileError("entry outside any section", None, no)
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ProblemFileError("expected 'key = value'", current, no)
        if key not in KEYS[current]:
            raise ProblemFileError(f"unknown key {key!r}", current, no)
        if key in sections[current]:
            raise ProblemFileError(f"key {key!r} given twice", current, no)
        try:
            sections[current][key] = ast.literal_eval(value.strip())
        except (ValueError, SyntaxError) as exc:
            raise ProblemFileError(f"cannot read value of {key!r}: {exc}", current, no) from None
        lines[current][key] = no
    return sections, lines


def _strip_comment(line: str) -> str:
    # '#' inside a quoted polynomial is not a comment (the grammar never uses it,
    # but a stray one should give a parse error, not vanish)
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _poly(text, n, section, line, what) -> Polynomial:
    if not isinstance(text, str):
        raise ProblemFileError(f"{what} must be a quoted polynomial", section, line)
    try:
        return parse(text, n)
    except ParseError as exc:
        raise ProblemFileError(f"{what}: {exc}", section, line) from None


def _matrix(value, rows, cols, section, line, what) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{what} must be numeric", section, line) from None
    if M.ndim == 1 and cols == 1:
        M = M[:, None]
    if M.ndim == 1 and rows == 1:
        M = M[None, :]
    if M.shape != (rows, cols):
        raise ProblemFileError(f"{what} has shape {M.shape}, expected ({rows}, {cols})", section, line)
    if not np.all(np.isfinite(M)):
        raise ProblemFileError(f"{what} has non-finite entries", section, line)
    return M


def _vector(value, length, section, line, what) -> np.ndarray:
    return _matrix(value, length, 1, section, line, what)[:, 0]


def _load_system(sec, ln) -> ControlSystem:
    s = "system"
    if "F" in sec or "G" in sec:
        if "f" in sec or "g" in sec:
            raise ProblemFileError("give either F/G or f/g, not both", s, ln.get("f", ln.get("g")))
        if "F" not in sec or "G" not in sec:
            raise ProblemFileError("linear systems need both F and G", s, ln["__start__"])
        F = np.array(sec["F"], dtype=float) if _is_numeric(sec["F"]) else None
        if F is None or F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ProblemFileError("F must be a square numeric matrix", s, ln["F"])
        n = F.shape[0]
        Gv = np.array(sec["G"], dtype=float) if _is_numeric(sec["G"]) else None
        if Gv is None:
            raise ProblemFileError("G must be numeric", s, ln["G"])
        m = Gv.shape[1] if Gv.ndim == 2 else 1
        _check_nm(sec, ln, n, m)
        G = _matrix(sec["G"], n, m, s, ln["G"], "G")
        return ControlSystem.linear(_matrix(F, n, n, s, ln["F"], "F"), G)
    if "f" not in sec or "g" not in sec:
        raise ProblemFileError("system needs f and g (or F and G)", s, ln["__start__"])
    f, g = sec["f"], sec["g"]
    if not isinstance(f, (list, tuple)) or not f:
        raise ProblemFileError("f must be a nonempty list of polynomials", s, ln["f"])
    n = len(f)
    if not isinstance(g, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in g):
        raise ProblemFileError("g must be a list of rows", s, ln["g"])
    if len(g) != n:
        raise ProblemFileError(f"g has {len(g)} rows, expected {n}", s, ln["g"])
    m = len(g[0])
    if m == 0 or any(len(r) != m for r in g):
        raise ProblemFileError("g rows must be nonempty and of equal length", s, ln["g"])
    _check_nm(sec, ln, n, m)
    fp = [_poly(t, n, s, ln["f"], f"f[{i}]") for i, t in enumerate(f)]
    gp = [[_poly(t, n, s, ln["g"], f"g[{i}][{j}]") for j, t in enumerate(r)] for i, r in enumerate(g)]
    return ControlSystem(tuple(fp), tuple(tuple(r) for r in gp))


def _is_numeric(v) -> bool:
    try:
        np.array(v, dtype=float)
        return True
    except (TypeError, ValueError):
        return False


def _check_nm(sec, ln, n, m):
    for key, want in (("n", n), ("m", m)):
        if key in sec and sec[key] != want:
            raise ProblemFileError(f"{key} = {sec[key]!r} but the data has {key} = {want}",
                                   "system", ln[key])


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def loads(text: str) -> ProblemFile:
    sections, lines = _raw_sections(text)
    for required in ("system", "safety"):
        if required not in sections:
            raise ProblemFileError(f"missing [{required}] section")
    system = _load_system(sections["system"], lines["system"])
    n, m = system.n, system.m

    sec, ln = sections["safety"], lines["safety"]
    if "h" not in sec:
        raise ProblemFileError("safety needs h", "safety", ln["__start__"])
    hs = _as_list(sec["h"])
    if not hs:
        raise ProblemFileError("h must list at least one constraint", "safety", ln["h"])
    region = SafeRegion(tuple(_poly(t, n, "safety", ln["h"], f"h[{i}]") for i, t in enumerate(hs)))

    candidates, gains = [], None
    if "candidate" in sections:
        sec, ln = sections["candidate"], lines["candidate"]
        if "b" in sec:
            candidates = [_poly(t, n, "candidate", ln["b"], f"b[{i}]")
                          for i, t in enumerate(_as_list(sec["b"]))]
        if "gains" in sec:
            try:
                gains = tuple(float(k) for k in _as_list(sec["gains"]))
            except (TypeError, ValueError):
                raise ProblemFileError("gains must be numbers", "candidate", ln["gains"]) from None
            if not gains or any(k <= 0 for k in gains):
                raise ProblemFileError("gains must be positive", "candidate", ln["gains"])

    scenario = {}
    if "scenario" in sections:
        sec, ln = sections["scenario"], lines["scenario"]
        s = "scenario"
        if "x0" in sec:
            x0 = sec["x0"]
            x0s = x0 if x0 and isinstance(x0[0], (list, tuple)) else [x0]
            scenario["x0"] = [_vector(v, n, s, ln["x0"], "x0") for v in x0s]
        for key in ("T", "dt"):
            if key in sec:
                if not isinstance(sec[key], (int, float)) or not sec[key] > 0:
                    raise ProblemFileError(f"{key} must be a positive number", s, ln[key])
                scenario[key] = float(sec[key])
        if scenario.get("dt", 1e-3) > scenario.get("T", 10.0):
            raise ProblemFileError("dt exceeds T", s, ln.get("dt"))
        if "K" in sec:
            scenario["K"] = _matrix(sec["K"], m, n, s, ln["K"], "K")
        if "x_ref" in sec:
            scenario["x_ref"] = _vector(sec["x_ref"], n, s, ln["x_ref"], "x_ref")
        if "kappa" in sec:
            kap = np.atleast_1d(np.array(sec["kappa"], dtype=float))
            if np.any(kap <= 0) or (kap.size != 1 and kap.size != max(len(candidates), 1)):
                raise ProblemFileError("kappa must be positive, one value or one per barrier", s, ln["kappa"])
            scenario["kappa"] = kap

    options = {}
    if "options" in sections:
        sec, ln = sections["options"], lines["options"]
        o = "options"
        for key, value in sec.items():
            line = ln[key]
            if key in ("multiplier_degrees", "powers"):
                vals = _as_list(value)
                if not vals or not all(isinstance(v, int) and v >= 0 for v in vals):
                    raise ProblemFileError(f"{key} must be nonnegative integers", o, line)
                if key == "powers" and any(v < 1 for v in vals):
                    raise ProblemFileError("powers must be at least 1", o, line)
                options[key] = tuple(vals)
            elif key in ("sdp_iters", "budget", "seed", "descent_iters", "descent_degree"):
                if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                    raise ProblemFileError(f"{key} must be a nonnegative integer", o, line)
                options[key] = value
            elif key == "N":
                options[key] = _matrix(value, n, n, o, line, "N")
            elif key == "K":
                options[key] = _matrix(value, m, n, o, line, "K")
            elif key == "x_seed":
                options[key] = _vector(value, n, o, line, "x_seed")
            elif key == "u_seed":
                options[key] = _vector(value, m, o, line, "u_seed")
            elif key == "enlarge":
                if not isinstance(value, bool):
                    raise ProblemFileError("enlarge must be True or False", o, line)
                options[key] = value
            else:
                if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                    raise ProblemFileError(f"{key} must be a positive number", o, line)
                options[key] = float(value)
    return ProblemFile(system, region, candidates, gains, scenario, options)


def load(path) -> ProblemFile:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ProblemFileError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


# -- option plumbing ----------------------------------------------------------------

def verify_options(pf: ProblemFile, args) -> VerifyOptions:
    o = pf.options
    opts = VerifyOptions()
    mapping = {"multiplier_degrees": "multiplier_degrees", "powers": "powers", "shrink": "shrink",
               "sdp_tol": "sdp_tol", "sdp_iters": "max_iters", "check_tol": "check_tol",
               "budget": "budget", "seed": "seed", "box_halfwidth": "box_halfwidth"}
    opts = replace(opts, **{dst: o[src] for src, dst in mapping.items() if src in o})
    if args.degree is not None:
        opts = replace(opts, multiplier_degrees=(args.degree,))
    if args.tol is not None:
        opts = replace(opts, check_tol=args.tol)
    if args.seed is not None:
        opts = replace(opts, seed=args.seed)
    return opts


# -- reports ------------------------------------------------------------------------

def _g(v: float) -> str:
    return f"{v:.6g}"


def _e(v: float) -> str:
    return f"{v:.2e}"


def _verdict_lines(v: Verdict, label: str = "") -> list:
    head = f"{label}: " if label else ""
    out = [f"{head}outcome: {v.outcome.value}"]
    d = v.details
    if "multiplier_degree" in d:
        deg = f"multiplier degree {d['multiplier_degree']}"
        if "power" in d:
            deg += f", power {d['power']}"
        out.append(f"{head}degrees: {deg}")
    for name, cert in v.certificates.items():
        out.append(f"{head}residual {name}: {_e(cert.max_residual)}")
        out.append(f"{head}min Gram eigenvalue {name}: {_e(cert.min_gram_eig)}")
    if v.witness is not None:
        out.append(f"{head}witness: ({', '.join(_g(c) for c in v.witness)})")
    if v.violated and not v.verified:
        out.append(f"{head}condition: {v.violated}")
    if v.reason:
        out.append(f"{head}reason: {v.reason}")
    return out


def emit_report(result, command: str = "") -> str:
    """Deterministic text summary of a verdict, descent trace, compact result
    or trajectory list.  Timing goes to standard error instead, so repeated
    runs produce identical reports."""
    lines = [f"command: {command}"] if command else []
    if isinstance(result, Verdict):
        lines += _verdict_lines(result)
    elif isinstance(result, list) and result and isinstance(result[0], Verdict):
        lines.append(f"outcome: {combine([v.outcome for v in result]).value}")
        for i, v in enumerate(result):
            lines += _verdict_lines(v, f"candidate {i}")
    elif isinstance(result, synth.DescentTrace):
        lines.append(f"outcome: {result.outcome.value}")
        lines.append(f"iterations: {result.iterations}")
        lines.append("rho: " + " ".join(_g(r) for r in result.rhos))
        lines.append(f"stop: {result.reason}")
        if result.candidate is not None:
            lines.append(f"candidate: {to_text(result.candidate)}")
        if result.verdict is not None:
            lines += _verdict_lines(result.verdict, "final")
    elif isinstance(result, synth.CompactResult):
        lines.append("outcome: VERIFIED")
        lines.append(f"x*: ({', '.join(_g(c) for c in result.x_star)})")
        lines.append(f"u*: ({', '.join(_g(c) for c in result.u_star)})")
        lines.append(f"delta: {_g(result.delta)}")
        lines.append(f"delta_max: {_g(result.delta_max)}")
        lines.append(f"resolution: {_g(result.resolution)}")
        lines.append(f"k: {_g(result.k)}")
        lines.append(f"b0: {to_text(result.b0)}")
        if result.k > 0:
            lines.append(f"b1: {to_text(result.b1)}")
    elif isinstance(result, list):
        ok = all(not tr.infeasible for tr in result)
        lines.append(f"outcome: {'VERIFIED' if ok else 'UNKNOWN'}")
        for i, tr in enumerate(result):
            lines.append(f"trajectory {i}: samples {len(tr)}, min h {_g(tr.min_h())}, min b {_g(tr.min_b())}")
            if tr.infeasible:
                lines.append(f"trajectory {i}: halted: {tr.message}")
    else:
        raise TypeError(f"cannot report on {type(result).__name__}")
    return "\n".join(lines) + "\n"


def combine(outcomes) -> Outcome:
    outcomes = list(outcomes)
    if any(o == Outcome.FALSIFIED for o in outcomes):
        return Outcome.FALSIFIED
    if all(o == Outcome.VERIFIED for o in outcomes):
        return Outcome.VERIFIED
    return Outcome.UNKNOWN


def certificate_dump(certificates: dict) -> str:
    """One ``certificate.multiplier = polynomial`` line per decision variable."""
    lines = []
    for name, cert in certificates.items():
        for var in sorted(cert.values):
            lines.append(f"{name}.{var} = {to_text(cert.values[var])}")
    return "\n".join(lines) + ("\n" if lines else "")


# -- commands -----------------------------------------------------------------------

def _verify_one(job):
    system, region, b, opts = job
    v = cbf.verify_cbf(system, b, opts)
    if not v.verified:
        return v
    c = cbf.verify_containment([b], region, opts)
    c.certificates = {**v.certificates, **c.certificates}
    c.details = {**c.details, **v.details}
    return c


def _need_candidates(pf, count=1):
    if len(pf.candidates) < count:
        raise ProblemFileError(f"this command needs at least {count} candidate barrier(s) in [candidate] b")


def _write(out, name, text):
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w") as fh:
        fh.write(text)


def cmd_verify(pf, args):
    _need_candidates(pf)
    opts = verify_options(pf, args)
    jobs = [(pf.system, pf.region, b, opts) for b in pf.candidates]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            verdicts = list(pool.map(_verify_one, jobs))
    else:
        verdicts = [_verify_one(j) for j in jobs]
    certs = {}
    for i, v in enumerate(verdicts):
        prefix = f"candidate{i}." if len(verdicts) > 1 else ""
        certs.update({prefix + k: c for k, c in v.certificates.items()})
    result = verdicts[0] if len(verdicts) == 1 else verdicts
    return combine(v.outcome for v in verdicts), result, {"certificates.txt": certificate_dump(certs)}


def _chain(pf):
    _need_candidates(pf)
    gains = pf.gains
    if gains is None:
        raise ProblemFileError("HOCBF commands need [candidate] gains")
    try:
        return HocbfChain.build(pf.system, pf.candidates[0], gains)
    except (ValueError, DimensionError) as exc:
        raise ProblemFileError(str(exc), "candidate") from None


def cmd_verify_hocbf(pf, args):
    chain = _chain(pf)
    try:
        v = cbf.verify_hocbf(pf.system, chain, pf.region, verify_options(pf, args))
    except cbf.RelativeDegreeError as exc:
        raise ProblemFileError(str(exc), "candidate") from None
    return v.outcome, v, {"certificates.txt": certificate_dump(v.certificates)}


def cmd_verify_multi(pf, args):
    _need_candidates(pf, 2)
    opts = verify_options(pf, args)
    v = cbf.verify_multi(pf.system, pf.candidates, opts)
    if v.verified:
        c = cbf.verify_containment(pf.candidates, pf.region, opts)
        c.certificates = {**v.certificates, **c.certificates}
        v = c
    return v.outcome, v, {"certificates.txt": certificate_dump(v.certificates)}


def cmd_synth_descent(pf, args):
    _need_candidates(pf)
    o = pf.options
    params = synth.DescentParams(
        b0=pf.candidates[0],
        max_iters=args.max_iter if args.max_iter is not None else o.get("descent_iters", 20),
        eps=o.get("eps", 1e-4),
        multiplier_degree=o.get("descent_degree", 2),
        shrink=o.get("shrink", 1e-3),
        verify=verify_options(pf, args),
    )
    if pf.gains is not None and len(pf.gains) > 1:
        try:
            trace = synth.descent_hocbf(pf.system, pf.region, _chain(pf), params)
        except cbf.RelativeDegreeError as exc:
            raise ProblemFileError(str(exc), "candidate") from None
    else:
        trace = synth.descent_cbf(pf.system, pf.region, params)
    rows = ["iteration,step,rho"]
    for i, (label, rho) in enumerate(zip(trace.labels, trace.rhos)):
        rows.append(f"{i},{label},{rho:.9g}")
    artifacts = {"trace.csv": "\n".join(rows) + "\n"}
    if trace.candidate is not None:
        artifacts["candidate.txt"] = to_text(trace.candidate) + "\n"
    if trace.verdict is not None:
        artifacts["certificates.txt"] = certificate_dump(trace.verdict.certificates)
    return trace.outcome, trace, artifacts


def cmd_synth_compact(pf, args):
    o, s = pf.options, pf.scenario
    K = o.get("K", s.get("K"))
    if K is None:
        raise ProblemFileError("synth-compact needs a feedback gain K in [options] or [scenario]")
    n, m = pf.n, pf.system.m
    N = o.get("N", np.eye(n))
    x_seed = o.get("x_seed", np.zeros(n))
    copts = synth.CompactOptions(
        resolution=o.get("resolution", 1e-4),
        margin=o.get("margin", 1e-3),
        enlarge=o.get("enlarge", False),
        k_max=o.get("k_max", 1.0),
        verify=verify_options(pf, args),
    )
    if args.degree is not None:
        copts.multiplier_degrees = (args.degree,)
    try:
        x_star, u_star = synth.find_fixed_point(pf.system, x_seed, o.get("u_seed"))
        res = synth.compact_cbf(pf.system, pf.region, x_star, u_star, K, N, copts)
    except synth.SynthesisError as exc:
        v = Verdict(Outcome.UNKNOWN, reason=str(exc))
        return Outcome.UNKNOWN, v, {}
    art = {"barrier.txt": to_text(res.b1 if res.k > 0 else res.b0) + "\n"}
    return Outcome.VERIFIED, res, art


def cmd_simulate(pf, args):
    _need_candidates(pf)
    s = pf.scenario
    if "x0" not in s:
        raise ProblemFileError("simulate needs [scenario] x0")
    barriers = [_chain(pf)] if pf.gains is not None and len(pf.gains) > 1 else list(pf.candidates)
    trs, art = [], {}
    for i, x0 in enumerate(s["x0"]):
        sc = sim.Scenario(pf.system, barriers, pf.region, x0, T=s.get("T", 10.0), dt=s.get("dt", 1e-3),
                          K=s.get("K"), x_ref=s.get("x_ref"), kappa=s.get("kappa", 1.0))
        tr = sim.simulate(sc)
        trs.append(tr)
        if args.out is not None:
            os.makedirs(args.out, exist_ok=True)
            sim.write_csv(tr, os.path.join(args.out, f"trajectory_{i}.csv"))
    outcome = Outcome.UNKNOWN if any(t.infeasible for t in trs) else Outcome.VERIFIED
    return outcome, trs, art


def cmd_export_sdpa(pf, args):
    """Write the SDP behind each first-schedule verification program."""
    _need_candidates(pf)
    opts = verify_options(pf, args)
    from .poly import lie, lie_g

    art = {}
    d, r = opts.multiplier_degrees[0], opts.powers[0]
    for i, b in enumerate(pf.candidates):
        prog = cbf.strict_emptiness_program(pf.n, [b] + lie_g(b, pf.system), [],
                                            lie(b, pf.system.f), d, r, label="cbf")
        problem, _ = sos.compile(prog)
        art[f"cbf_{i}.dat-s"] = sdp.export_sdpa(problem)
        for j, h in enumerate(pf.region.constraints):
            prog = cbf.nonstrict_emptiness_program(pf.n, [h], [cbf.shrink(b, opts.shrink)], d,
                                                   label=f"contain{j}")
            problem, _ = sos.compile(prog)
            art[f"containment_{i}_{j}.dat-s"] = sdp.export_sdpa(problem)
    v = Verdict(Outcome.VERIFIED, reason=f"{len(art)} SDPA files")
    return Outcome.VERIFIED, v, art


HANDLERS = {
    "verify": cmd_verify,
    "verify-hocbf": cmd_verify_hocbf,
    "verify-multi": cmd_verify_multi,
    "synth-descent": cmd_synth_descent,
    "synth-compact": cmd_synth_compact,
    "simulate": cmd_simulate,
    "export-sdpa": cmd_export_sdpa,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ProblemFileError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cbfkit", description="Verify, synthesize and simulate control barrier functions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("file")
    p.add_argument("--out", default=None, help="directory for artifacts")
    p.add_argument("--degree", type=int, default=None, help="single multiplier degree")
    p.add_argument("--tol", type=float, default=None, help="certificate acceptance tolerance")
    p.add_argument("--max-iter", type=int, default=None, help="descent iteration budget")
    p.add_argument("--seed", type=int, default=None, help="seed for the falsification search")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for independent candidates")
    return p


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.degree is not None and (args.degree < 0 or args.degree % 2):
            raise ProblemFileError("--degree must be a nonnegative even integer")
        if args.tol is not None and not args.tol > 0:
            raise ProblemFileError("--tol must be positive")
        if args.max_iter is not None and args.max_iter < 1:
            raise ProblemFileError("--max-iter must be at least 1")
        if args.jobs < 1:
            raise ProblemFileError("--jobs must be at least 1")
        pf = load(args.file)
        start = time.perf_counter()
        outcome, result, artifacts = HANDLERS[args.command](pf, args)
        elapsed = time.perf_counter() - start
    except (ProblemFileError, DimensionError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    report = emit_report(result, args.command)
    stdout.write(report)
    print(f"wall time: {elapsed:.3f} s", file=stderr)
    if args.out is not None:
        _write(args.out, "report.txt", report)
        for name, text in artifacts.items():
            _write(args.out, name, text)
    return EXIT[outcome]


def main() -> None:
    sys.exit(run())
