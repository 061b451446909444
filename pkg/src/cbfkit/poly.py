"""Sparse multivariate polynomials over the reals.

A polynomial in ``n`` variables ``x1..xn`` is stored as a mapping from
exponent tuples (length ``n``) to float coefficients.  Values are treated as
immutable; every operation returns a new, canonicalized polynomial.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-12

Monomial = tuple


class ParseError(ValueError):
    """Raised for malformed polynomial text; ``pos`` is the 0-based offset."""

    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at position {pos}")


class DimensionError(ValueError):
    pass


def _grlex_key(mono: Monomial):
    # ascending total degree, then x1-heavy monomials first within a degree
    return (sum(mono), tuple(-e for e in mono))


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables."""

    __slots__ = ("n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[Monomial, float] | None = None):
        if n < 0:
            raise ValueError("variable count must be nonnegative")
        self.n = n
        clean = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != n or any(e < 0 for e in mono):
                raise DimensionError(f"monomial {mono} does not fit n={n}")
            c = float(c)
            if abs(c) >= ZERO_TOL:
                clean[mono] = clean.get(mono, 0.0) + c
        self._terms = {m: c for m, c in clean.items() if abs(c) >= ZERO_TOL}
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def var(cls, n: int, i: int) -> "Polynomial":
        """The coordinate polynomial ``x_i`` (1-based)."""
        if not 1 <= i <= n:
            raise DimensionError(f"variable x{i} out of range for n={n}")
        mono = [0] * n
        mono[i - 1] = 1
        return cls(n, {tuple(mono): 1.0})

    @classmethod
    def monomial(cls, mono: Monomial, c: float = 1.0) -> "Polynomial":
        return cls(len(mono), {tuple(mono): c})

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    # -- basic queries ----------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def monomials(self) -> list:
        return sorted(self._terms, key=_grlex_key)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self._terms)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.n, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise DimensionError(f"variable count mismatch: {self.n} vs {other.n}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.n, float(other))
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a nonnegative integer")
        result = Polynomial.constant(self.n, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.n, {m: c * v for m, v in self._terms.items()})

    # -- calculus and evaluation -------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to ``x_i`` (1-based)."""
        if not 1 <= i <= self.n:
            raise DimensionError(f"derivative index {i} out of range for n={self.n}")
        k = i - 1
        out = {}
        for m, c in self._terms.items():
            if m[k]:
                dm = m[:k] + (m[k] - 1,) + m[k + 1:]
                out[dm] = out.get(dm, 0.0) + c * m[k]
        return Polynomial(self.n, out)

    def gradient(self) -> list:
        return [self.diff(i) for i in range(1, self.n + 1)]

    def __call__(self, x) -> float:
        return evaluate(self, x)

    def exponent_matrix(self):
        monos = list(self._terms)
        if not monos:
            return np.zeros((0, self.n), dtype=int), np.zeros(0)
        return np.array(monos, dtype=int), np.array([self._terms[m] for m in monos])

    def evaluate_many(self, X) -> np.ndarray:
        """Evaluate at each row of ``X`` (shape ``(k, n)``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n:
            raise DimensionError(f"points have {X.shape[1]} coordinates, expected {self.n}")
        E, c = self.exponent_matrix()
        if not len(c):
            return np.zeros(X.shape[0])
        vals = np.ones((X.shape[0], len(c)))
        for j in range(self.n):
            col = E[:, j]
            if col.any():
                vals *= X[:, j:j + 1] ** col[None, :]
        return vals @ c

    def substitute_shift(self, shift: Sequence[float]) -> "Polynomial":
        """Return ``p(x + shift)``."""
        n = self.n
        xs = [Polynomial.var(n, i + 1) + float(shift[i]) for i in range(n)]
        return compose(self, xs)

    # -- printing ---------------------------------------------------------
    def __str__(self):
        return to_text(self)

    def __repr__(self):
        return f"Polynomial({self.n}, {to_text(self)!r})"


def compose(p: Polynomial, subs: Sequence[Polynomial]) -> Polynomial:
    """Substitute ``x_i := subs[i]`` into ``p``."""
    if len(subs) != p.n:
        raise DimensionError("substitution length must equal variable count")
    m = subs[0].n if subs else 0
    out = Polynomial.zero(m)
    for mono, c in p.items():
        term = Polynomial.constant(m, c)
        for s, e in zip(subs, mono):
            if e:
                term = term * s ** e
        out = out + term
    return out


# -- module-level operations ------------------------------------------------

def arith(a: Polynomial, b: Polynomial, op: str) -> Polynomial:
    if a.n != b.n:
        raise DimensionError(f"variable count mismatch: {a.n} vs {b.n}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown operation {op!r}")


def scale(a: Polynomial, c: float) -> Polynomial:
    return a.scale(c)


def differentiate(p: Polynomial, i: int) -> Polynomial:
    return p.diff(i)


def evaluate(p: Polynomial, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.n:
        raise DimensionError(f"point has {x.shape[0]} coordinates, expected {p.n}")
    total = 0.0
    for mono, c in p.items():
        v = c
        for xi, e in zip(x, mono):
            if e:
                v *= xi ** e
        total += v
    return float(total)


def lie(p: Polynomial, field: Sequence[Polynomial]) -> Polynomial:
    """Lie derivative of ``p`` along the polynomial vector field ``field``."""
    if len(field) != p.n:
        raise DimensionError(f"field has {len(field)} entries, expected {p.n}")
    out = Polynomial.zero(p.n)
    for i, fi in enumerate(field, start=1):
        if fi.n != p.n:
            raise DimensionError("field entry has wrong variable count")
        d = p.diff(i)
        if not d.is_zero() and not fi.is_zero():
            out = out + d * fi
    return out


@dataclass(frozen=True)
class ControlSystem:
    """Control-affine polynomial system ``xdot = f(x) + g(x) u``."""

    f: tuple
    g: tuple  # n rows of m entries

    def __post_init__(self):
        f = tuple(self.f)
        g = tuple(tuple(row) for row in self.g)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        n = len(f)
        if n == 0:
            raise DimensionError("drift must have at least one entry")
        if len(g) != n:
            raise DimensionError(f"input matrix has {len(g)} rows, expected {n}")
        m = len(g[0])
        if m == 0 or any(len(row) != m for row in g):
            raise DimensionError("input matrix rows must be nonempty and equal length")
        for p in f + tuple(q for row in g for q in row):
            if p.n != n:
                raise DimensionError(f"entry {p} is over {p.n} variables, expected {n}")

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return len(self.g[0])

    def column(self, j: int) -> tuple:
        return tuple(row[j] for row in self.g)

    @classmethod
    def linear(cls, F, G) -> "ControlSystem":
        """Build the polynomial system for ``xdot = F x + G u``."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        G = np.asarray(G, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        n = F.shape[0]
        xs = [Polynomial.var(n, i + 1) for i in range(n)]
        f = []
        for i in range(n):
            row = Polynomial.zero(n)
            for j in range(n):
                if F[i, j]:
                    row = row + xs[j].scale(F[i, j])
            f.append(row)
        g = [[Polynomial.constant(n, G[i, j]) for j in range(G.shape[1])] for i in range(n)]
        return cls(tuple(f), tuple(tuple(r) for r in g))

    def drift_at(self, x) -> np.ndarray:
        return np.array([evaluate(p, x) for p in self.f])

    def input_at(self, x) -> np.ndarray:
        return np.array([[evaluate(p, x) for p in row] for row in self.g])


def lie_g(p: Polynomial, sys: ControlSystem) -> list:
    """Row vector ``dp/dx g(x)``, one polynomial per input channel."""
    return [lie(p, sys.column(j)) for j in range(sys.m)]


def lie_chain(b: Polynomial, sys: ControlSystem, r: int):
    """Return ``(L_f^r b, [L_g L_f^{r-1} b]_j)``."""
    if r < 1:
        raise ValueError("r must be at least 1")
    if b.n != sys.n:
        raise DimensionError(f"barrier over {b.n} variables, system has {sys.n}")
    current = b
    for _ in range(r - 1):
        current = lie(current, sys.f)
    return lie(current, sys.f), lie_g(current, sys)


def relative_degree(b: Polynomial, sys: ControlSystem, max_r: int):
    """Smallest ``r <= max_r`` with ``L_g L_f^{r-1} b`` not identically zero."""
    if max_r < 1:
        raise ValueError("max_r must be at least 1")
    current = b
    for r in range(1, max_r + 1):
        if any(not q.is_zero() for q in lie_g(current, sys)):
            return r
        current = lie(current, sys.f)
    return None


# -- text format --------------------------------------------------------------

def _format_coeff(c: float) -> str:
    if c == int(c) and abs(c) < 1e15:
        return str(int(c))
    return repr(float(c))


def to_text(p: Polynomial) -> str:
    if p.is_zero():
        return "0"
    parts = []
    for mono in p.monomials():
        c = p.coeff(mono)
        factors = []
        for i, e in enumerate(mono, start=1):
            if e == 1:
                factors.append(f"x{i}")
            elif e > 1:
                factors.append(f"x{i}^{e}")
        mag = abs(c)
        if not factors:
            body = _format_coeff(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([_format_coeff(mag)] + factors)
        if not parts:
            parts.append(("-" if c < 0 else "") + body)
        else:
            parts.append((" - " if c < 0 else " + ") + body)
    return "".join(parts)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>x(?P<idx>\d+))|(?P<op>[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            mt = _TOKEN.match(text, pos)
            if not mt or mt.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
            start = pos
            if mt.group("num") is not None:
                self.tokens.append(("num", mt.group("num"), start))
            elif mt.group("var") is not None:
                self.tokens.append(("var", int(mt.group("idx")), start))
            else:
                self.tokens.append(("op", mt.group("op"), start))
            pos = mt.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", None, len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[0] != "op" or tok[1] != value:
            raise ParseError(f"expected {value!r}", tok[2], self.text)

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise ParseError("empty expression", 0, self.text)
        p = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2], self.text)
        return p

    def expr(self):
        sign = 1.0
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            sign = -1.0 if tok[1] == "-" else 1.0
        acc = self.term().scale(sign)
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "+-":
                self.take()
                t = self.term()
                acc = acc + t if tok[1] == "+" else acc - t
            else:
                return acc

    def term(self):
        acc = self.factor()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] == "*":
                self.take()
                acc = acc * self.factor()
            elif tok[0] in ("num", "var") or (tok[0] == "op" and tok[1] == "("):
                raise ParseError("implicit multiplication is not allowed; use '*'", tok[2], self.text)
            else:
                return acc

    def factor(self):
        base = self.base()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            e = self.take()
            if e[0] != "num" or not e[1].isdigit():
                raise ParseError("exponent must be an unsigned integer", e[2], self.text)
            return base ** int(e[1])
        return base

    def base(self):
        tok = self.take()
        kind, val, pos = tok
        if kind == "num":
            return Polynomial.constant(self.n, float(val))
        if kind == "var":
            if not 1 <= val <= self.n:
                raise ParseError(f"variable x{val} out of range for n={self.n}", pos, self.text)
            return Polynomial.var(self.n, val)
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if kind == "end":
            raise ParseError("unexpected end of input", pos, self.text)
        raise ParseError(f"unexpected token {val!r}", pos, self.text)


def parse(text: str, n: int) -> Polynomial:
    """Parse polynomial text such as ``"1 - x1^2 - 2*x1*x2"``."""
    return _Parser(text, n).parse()


def parse_vector(texts: Iterable[str], n: int) -> list:
    return [parse(t, n) for t in texts]


def quadratic_form(P, center=None) -> Polynomial:
    """``(x - center)^T P (x - center)`` as a polynomial."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    d = [Polynomial.var(n, i + 1) - c[i] for i in range(n)]
    out = Polynomial.zero(n)
    for i in range(n):
        for j in range(n):
            if P[i, j]:
                out = out + (d[i] * d[j]).scale(P[i, j])
    return out


def affine(a, c: float = 0.0) -> Polynomial:
    """``a^T x + c`` as a polynomial."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    out = Polynomial.constant(n, c)
    for i in range(n):
        if a[i]:
            out = out + Polynomial.var(n, i + 1).scale(a[i])
    return out


def total_degree_monomials(n: int, max_deg: int, min_deg: int = 0) -> list:
    """All exponent tuples with ``min_deg <= degree <= max_deg`` in grlex order."""
    out = []
    for d in range(min_deg, max_deg + 1):
        block = [
            tuple(c)
            for c in itertools.product(range(d + 1), repeat=n)
            if sum(c) == d
        ]
        out.extend(sorted(block, key=_grlex_key))
    return out


def n_monomials(n: int, max_deg: int) -> int:
    return math.comb(n + max_deg, max_deg)
