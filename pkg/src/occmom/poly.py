"""Sparse multivariate polynomials over the ordered variables (t, x1..xn, u1..um).

A :class:`Polynomial` stores a map from exponent tuples to float coefficients.
Every module of the package shares the graded-lex monomial order defined by
:func:`grlex_key`, so that moment vectors and coefficient vectors line up.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


def grlex_key(alpha: Exponent) -> tuple:
    """Sort key: total degree first, then lexicographically decreasing."""
    return (sum(alpha), tuple(-a for a in alpha))


@dataclass(frozen=True)
class VarSpace:
    """Variable layout ``t, x1..xn, u1..um`` (``t`` only when ``has_time``)."""

    has_time: bool = False
    n_states: int = 1
    n_inputs: int = 0

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.n_inputs < 0:
            raise ValueError("n_inputs must be >= 0")

    @property
    def dim(self) -> int:
        return int(self.has_time) + self.n_states + self.n_inputs

    @property
    def t_index(self) -> int | None:
        return 0 if self.has_time else None

    def x_index(self, i: int) -> int:
        """Index of state ``x{i+1}`` (0-based ``i``)."""
        if not 0 <= i < self.n_states:
            raise IndexError(f"state index {i} out of range")
        return int(self.has_time) + i

    def u_index(self, j: int) -> int:
        if not 0 <= j < self.n_inputs:
            raise IndexError(f"input index {j} out of range")
        return int(self.has_time) + self.n_states + j

    @property
    def x_indices(self) -> list[int]:
        return [self.x_index(i) for i in range(self.n_states)]

    @property
    def u_indices(self) -> list[int]:
        return [self.u_index(j) for j in range(self.n_inputs)]

    @property
    def names(self) -> list[str]:
        names = ["t"] if self.has_time else []
        names += [f"x{i + 1}" for i in range(self.n_states)]
        names += [f"u{j + 1}" for j in range(self.n_inputs)]
        return names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None


class Polynomial:
    """Immutable sparse polynomial. Zero coefficients are never stored."""

    __slots__ = ("_space", "_terms")

    def __init__(self, space: VarSpace, terms: Mapping[Exponent, float] | None = None):
        clean: dict[Exponent, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != space.dim:
                raise ValueError(f"exponent {alpha} does not match dimension {space.dim}")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self._space = space
        self._terms = MappingProxyType({a: c for a, c in clean.items() if c != 0.0})

    # construction helpers
    @classmethod
    def constant(cls, space: VarSpace, value: float) -> Polynomial:
        return cls(space, {(0,) * space.dim: value})

    @classmethod
    def zero(cls, space: VarSpace) -> Polynomial:
        return cls(space)

    @classmethod
    def variable(cls, space: VarSpace, index: int | str) -> Polynomial:
        if isinstance(index, str):
            index = space.index(index)
        if not 0 <= index < space.dim:
            raise IndexError(f"variable index {index} out of range")
        alpha = [0] * space.dim
        alpha[index] = 1
        return cls(space, {tuple(alpha): 1.0})

    @classmethod
    def from_vector(cls, space: VarSpace, basis: Sequence[Exponent], coefs: Iterable[float]) -> Polynomial:
        return cls(space, {tuple(a): c for a, c in zip(basis, coefs)})

    @property
    def space(self) -> VarSpace:
        return self._space

    @property
    def terms(self) -> Mapping[Exponent, float]:
        return self._terms

    def sorted_terms(self) -> list[tuple[Exponent, float]]:
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    def degree_in(self, indices: Iterable[int]) -> int:
        idx = list(indices)
        return max((sum(a[i] for i in idx) for a in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(a) == 0 for a in self._terms)

    def used_variables(self) -> set[int]:
        return {i for a in self._terms for i, e in enumerate(a) if e}

    def coefficient(self, alpha: Exponent) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def coefficient_vector(self, basis: Sequence[Exponent]) -> np.ndarray:
        """Coefficients on ``basis``; raises if a term lies outside it."""
        pos = {tuple(a): i for i, a in enumerate(basis)}
        vec = np.zeros(len(basis))
        for alpha, c in self._terms.items():
            if alpha not in pos:
                raise ValueError(f"monomial {alpha} not in basis")
            vec[pos[alpha]] += c
        return vec

    # arithmetic
    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other._space != self._space:
                raise ValueError("polynomials live in different variable spaces")
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Polynomial.constant(self._space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for a, c in other._terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self._space, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._space, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[Exponent, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Polynomial(self._space, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Polynomial):
            if not other.is_constant() or other.is_zero():
                raise ZeroDivisionError("division only by nonzero constants")
            other = other.coefficient((0,) * self._space.dim)
        if other == 0:
            raise ZeroDivisionError("division by zero")
        return self * (1.0 / float(other))

    def __pow__(self, n: int):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("exponent must be a nonnegative integer")
        result = Polynomial.constant(self._space, 1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._space == other._space and dict(self._terms) == dict(other._terms)

    def __hash__(self):
        return hash((self._space, frozenset(self._terms.items())))

    def allclose(self, other: Polynomial, tol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= tol for c in diff._terms.values())

    # calculus and evaluation
    def __call__(self, point):
        return self.evaluate(point)

    def evaluate(self, point):
        """Evaluate at one point (shape ``(dim,)``) or many (shape ``(N, dim)``)."""
        pts = np.asarray(point, dtype=float)
        if pts.shape[-1:] != (self._space.dim,):
            raise ValueError(f"point dimension {pts.shape[-1:]} does not match {self._space.dim}")
        if not self._terms:
            return np.zeros(pts.shape[:-1]) if pts.ndim > 1 else 0.0
        exps = np.array(list(self._terms.keys()), dtype=int)
        coefs = np.array(list(self._terms.values()))
        mono = np.prod(pts[..., None, :] ** exps, axis=-1)
        out = mono @ coefs
        return float(out) if pts.ndim == 1 else out

    def diff(self, var: int | str) -> Polynomial:
        if isinstance(var, str):
            var = self._space.index(var)
        if not 0 <= var < self._space.dim:
            raise IndexError(f"variable index {var} out of range")
        terms = {}
        for a, c in self._terms.items():
            if a[var]:
                b = list(a)
                b[var] -= 1
                terms[tuple(b)] = c * a[var]
        return Polynomial(self._space, terms)

    def gradient(self, indices: Iterable[int]) -> list[Polynomial]:
        return [self.diff(i) for i in indices]

    def compose(self, substitutions: Sequence[Polynomial]) -> Polynomial:
        """Replace variable ``i`` by ``substitutions[i]`` (all in one target space)."""
        if len(substitutions) != self._space.dim:
            raise ValueError("one substitution per variable required")
        target = substitutions[0].space if substitutions else self._space
        one = Polynomial.constant(target, 1.0)
        powers: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, e: int) -> Polynomial:
            if e == 0:
                return one
            if (i, e) not in powers:
                powers[(i, e)] = substitutions[i] ** e
            return powers[(i, e)]

        result = Polynomial.zero(target)
        for a, c in self._terms.items():
            term = one * c
            for i, e in enumerate(a):
                if e:
                    term = term * power(i, e)
            result = result + term
        return result

    def embed(self, space: VarSpace, index_map: Sequence[int]) -> Polynomial:
        """Re-express in ``space``; variable ``i`` maps to ``index_map[i]``."""
        terms = {}
        for a, c in self._terms.items():
            b = [0] * space.dim
            for i, e in enumerate(a):
                if e:
                    b[index_map[i]] += e
            terms[tuple(b)] = terms.get(tuple(b), 0.0) + c
        return Polynomial(space, terms)

    # text form
    def to_string(self) -> str:
        if not self._terms:
            return "0"
        names = self._space.names
        parts = []
        for alpha, c in reversed(self.sorted_terms()):
            factors = []
            for name, e in zip(names, alpha):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else f"{mag!r}*" + "*".join(factors)
            else:
                body = repr(mag)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"Polynomial({self.to_string()!r})"


def lie_derivative(test: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """Time derivative of ``test(t, x)`` along ``xdot = f(t, x, u)``."""
    space = test.space
    if len(f) != space.n_states:
        raise ValueError(f"dynamics has {len(f)} entries, expected {space.n_states}")
    if test.used_variables() & set(space.u_indices):
        raise ValueError("test function must not depend on inputs")
    result = test.diff(space.t_index) if space.has_time else Polynomial.zero(space)
    for i, fi in enumerate(f):
        result = result + test.diff(space.x_index(i)) * fi
    return result


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, space: VarSpace):
        self.tokens = _tokenize(text)
        self.i = 0
        self.space = space

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def expr(self) -> Polynomial:
        result = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def term(self) -> Polynomial:
        result = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            _, op, pos = self.take()
            rhs = self.factor()
            if op == "*":
                result = result * rhs
            else:
                if not rhs.is_constant():
                    raise ParseError("division only by numeric constants", pos)
                if rhs.is_zero():
                    raise ParseError("division by zero", pos)
                result = result / rhs
        return result

    def factor(self) -> Polynomial:
        kind, val, pos = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.factor()
            return -inner if val == "-" else inner
        base = self.base()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be a nonnegative integer", pos)
            base = base ** int(val)
        return base

    def base(self) -> Polynomial:
        kind, val, pos = self.take()
        if kind == "num":
            return Polynomial.constant(self.space, float(val))
        if kind == "var":
            try:
                return Polynomial.variable(self.space, val)
            except KeyError:
                raise ParseError(f"unknown variable {val!r}", pos) from None
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, space: VarSpace) -> Polynomial:
    """Parse a polynomial expression such as ``"x2^2/2 + x1"``.

    Variables are ``t``, ``x1..xn`` and ``u1..um``. Division is allowed only
    by numeric constants; exponents must be nonnegative integer literals.
    """
    parser = _Parser(text, space)
    if parser.peek()[0] == "end":
        raise ParseError("empty expression", 0)
    result = parser.expr()
    kind, val, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected {val!r}", pos)
    return result


def is_finite(p: Polynomial) -> bool:
    return all(math.isfinite(c) for c in p.terms.values())
