"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` stores the Taylor coefficients of a scalar function of ``nvars``
variables around an expansion point, up to total degree ``order``. The
coefficient of the multi-index ``a`` is ``d^a f / a!``. Coefficients live in a
dense array whose last axis enumerates monomials degree by degree; all leading
axes are batch axes, so one Jet can carry thousands of expansion points.

The inner product kernel is compiled (Cython) when the extension is built and
falls back to a numpy implementation otherwise. Set ``ZERMELO_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import itertools
import math
import os
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import _jetcore_py

if os.environ.get("ZERMELO_PURE_PYTHON"):
    _core = _jetcore_py
    BACKEND = "python"
else:
    try:
        from . import _jetcore as _core

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _core = _jetcore_py
        BACKEND = "python"

MAX_ORDER = 4


class JetDomainError(ValueError):
    """A jet was pushed through a function outside its domain."""


class _Table:
    """Monomial enumeration and product table for (nvars, order)."""

    def __init__(self, nvars: int, order: int):
        monos = []
        for deg in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(nvars), deg):
                e = [0] * nvars
                for c in combo:
                    e[c] += 1
                monos.append(tuple(e))
        self.nvars = nvars
        self.order = order
        self.size = len(monos)
        self.monomials = np.array(monos, dtype=np.int64).reshape(self.size, nvars)
        self.index = {m: i for i, m in enumerate(monos)}
        self.degree = self.monomials.sum(axis=1)
        self.factorial = np.array(
            [math.prod(math.factorial(k) for k in m) for m in monos], dtype=float
        )

        triples = []
        for i, a in enumerate(monos):
            for j, b in enumerate(monos):
                s = tuple(x + y for x, y in zip(a, b))
                if sum(s) <= order:
                    triples.append((self.index[s], i, j))
        triples.sort()
        t = np.array(triples, dtype=np.int32)
        self.out = np.ascontiguousarray(t[:, 0])
        self.left = np.ascontiguousarray(t[:, 1])
        self.right = np.ascontiguousarray(t[:, 2])

        # d/du_k maps an order-p jet to an order-(p-1) jet (a prefix of this table)
        self.deriv = []
        if order > 0:
            nlow = math.comb(nvars + order - 1, order - 1)
            for k in range(nvars):
                src = np.empty(nlow, dtype=np.intp)
                fac = np.empty(nlow)
                for i, m in enumerate(monos[:nlow]):
                    up = list(m)
                    up[k] += 1
                    src[i] = self.index[tuple(up)]
                    fac[i] = up[k]
                self.deriv.append((src, fac))

        self.linear = [self.index[tuple(int(i == k) for i in range(nvars))]
                       for k in range(nvars)] if order >= 1 else []
        if order >= 2:
            quad = np.empty((nvars, nvars), dtype=np.intp)
            scale = np.ones((nvars, nvars))
            for a in range(nvars):
                for b in range(nvars):
                    e = [0] * nvars
                    e[a] += 1
                    e[b] += 1
                    quad[a, b] = self.index[tuple(e)]
                    if a == b:
                        scale[a, b] = 2.0
            self.quad, self.quad_scale = quad, scale


_TABLES: dict = {}


def table(nvars: int, order: int) -> _Table:
    tab = _TABLES.get((nvars, order))
    if tab is None:
        if nvars < 1 or order < 0:
            raise ValueError(f"invalid jet shape nvars={nvars} order={order}")
        tab = _TABLES[(nvars, order)] = _Table(nvars, order)
    return tab


@lru_cache(maxsize=None)
def _binomials(alpha: float, order: int) -> np.ndarray:
    out = np.ones(order + 1)
    for j in range(order):
        out[j + 1] = out[j] * (alpha - j) / (j + 1)
    return out


@lru_cache(maxsize=None)
def _inv_factorials(order: int) -> np.ndarray:
    return 1.0 / np.array([math.factorial(k) for k in range(order + 1)], dtype=float)


@lru_cache(maxsize=None)
def _degrees(order: int) -> np.ndarray:
    return np.arange(order + 1, dtype=float)


class Jet:
    """Truncated Taylor expansion, batched over leading axes of ``coeffs``."""

    __slots__ = ("coeffs", "nvars", "order")
    __array_ufunc__ = None  # make ndarray <op> Jet defer to the Jet's reflected op

    def __init__(self, coeffs, nvars: int, order: int):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1:] != (table(nvars, order).size,):
            raise ValueError("coefficient array does not match (nvars, order)")
        self.coeffs = coeffs
        self.nvars = nvars
        self.order = order

    # construction -----------------------------------------------------------------

    @classmethod
    def constant(cls, value, nvars: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (table(nvars, order).size,))
        c[..., 0] = value
        return cls(c, nvars, order)

    @classmethod
    def variables(cls, point, order: int) -> list["Jet"]:
        """Seed one jet per coordinate of ``point`` (shape (..., n))."""
        point = np.asarray(point, dtype=float)
        if point.ndim == 0:
            point = point[None]
        n = point.shape[-1]
        tab = table(n, order)
        out = []
        for k in range(n):
            c = np.zeros(point.shape[:-1] + (tab.size,))
            c[..., 0] = point[..., k]
            if order >= 1:
                c[..., tab.linear[k]] = 1.0
            out.append(cls(c, n, order))
        return out

    def _new(self, coeffs, order=None) -> "Jet":
        j = Jet.__new__(Jet)
        j.coeffs = coeffs
        j.nvars = self.nvars
        j.order = self.order if order is None else order
        return j

    # inspection -------------------------------------------------------------------

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def partial(self, multi_index: Sequence[int]) -> np.ndarray:
        """The partial derivative named by ``multi_index`` at the expansion point."""
        tab = table(self.nvars, self.order)
        key = tuple(int(k) for k in multi_index)
        if len(key) != self.nvars:
            raise ValueError("multi-index length does not match nvars")
        if sum(key) > self.order:
            raise ValueError(f"derivative of degree {sum(key)} exceeds jet order {self.order}")
        i = tab.index[key]
        return self.coeffs[..., i] * tab.factorial[i]

    def gradient(self) -> np.ndarray:
        tab = table(self.nvars, self.order)
        return self.coeffs[..., tab.linear]

    def hessian(self) -> np.ndarray:
        tab = table(self.nvars, self.order)
        if self.order < 2:
            raise ValueError("hessian needs a jet of order >= 2")
        return self.coeffs[..., tab.quad] * tab.quad_scale

    def derivative(self, k: int) -> "Jet":
        """Jet of d f / d u_k, one order lower."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = table(self.nvars, self.order).deriv[k]
        return self._new(self.coeffs[..., src] * fac, self.order - 1)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        if order == self.order:
            return self
        m = table(self.nvars, order).size
        return self._new(self.coeffs[..., :m], order)

    def __repr__(self):
        return f"Jet(nvars={self.nvars}, order={self.order}, batch={self.batch_shape})"

    # arithmetic -------------------------------------------------------------------

    def _align(self, other: "Jet"):
        if other.nvars != self.nvars:
            raise ValueError("jets over different variable sets")
        p = min(self.order, other.order)
        return self.truncate(p), other.truncate(p), p

    def _mul_jet(self, other: "Jet") -> "Jet":
        if other.nvars != self.nvars:
            raise ValueError("jets over different variable sets")
        p = self.order if self.order <= other.order else other.order
        tab = _TABLES.get((self.nvars, p)) or table(self.nvars, p)
        m = tab.size
        ca, cb = self.coeffs, other.coeffs
        if ca.shape[-1] != m:
            ca = ca[..., :m]
        if cb.shape[-1] != m:
            cb = cb[..., :m]
        if ca.shape != cb.shape:
            shape = np.broadcast_shapes(ca.shape, cb.shape)
            ca = np.broadcast_to(ca, shape)
            cb = np.broadcast_to(cb, shape)
        res = _core.mul(np.ascontiguousarray(ca), np.ascontiguousarray(cb),
                        tab.left, tab.right, tab.out)
        return self._new(res, p)

    def __add__(self, other):
        if isinstance(other, Jet):
            if other.order == self.order:
                if other.nvars != self.nvars:
                    raise ValueError("jets over different variable sets")
                return self._new(self.coeffs + other.coeffs)
            a, b, p = self._align(other)
            return self._new(a.coeffs + b.coeffs, p)
        if type(other) is float or type(other) is int:
            c = self.coeffs.copy()
            c[..., 0] += other
            return self._new(c)
        other = np.asarray(other, dtype=float)
        c = self.coeffs + np.zeros(other.shape + (1,))
        c[..., 0] += other
        return self._new(c)

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self.coeffs)

    def __sub__(self, other):
        if isinstance(other, Jet) and other.order == self.order and other.nvars == self.nvars:
            return self._new(self.coeffs - other.coeffs)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return self._mul_jet(other)
        if type(other) is float or type(other) is int:
            return self._new(self.coeffs * other)
        other = np.asarray(other, dtype=float)
        return self._new(self.coeffs * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self._mul_jet(other.reciprocal())
        other = np.asarray(other, dtype=float)
        return self._new(self.coeffs / other[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, exponent):
        if isinstance(exponent, (int, np.integer)):
            n = int(exponent)
            if n < 0:
                return self.reciprocal() ** (-n)
            result = None
            base = self
            while n:
                if n & 1:
                    result = base if result is None else result * base
                n >>= 1
                if n:
                    base = base * base
            return result if result is not None else Jet.constant(
                np.ones(self.batch_shape), self.nvars, self.order)
        return self.power(float(exponent))

    # univariate composition ----------------------------------------------------------

    def _compose(self, coef: np.ndarray) -> "Jet":
        """Compose with a univariate series whose coefficients (..., order+1) are
        taken at this jet's constant term."""
        if self.order == 0:
            return self._new(np.array(coef[..., :1]))
        h = self.coeffs.copy()
        h[..., 0] = 0.0
        tab = table(self.nvars, self.order)
        res = _core.horner(np.ascontiguousarray(coef), h, tab.left, tab.right, tab.out)
        return self._new(res)

    def _series(self, make) -> "Jet":
        return self._compose(make(self.coeffs[..., :1], _degrees(self.order)))

    def reciprocal(self) -> "Jet":
        if (self.value == 0).any():
            raise JetDomainError("division by a jet with zero constant term")
        return self._series(lambda a, k: (-1.0) ** k / a ** (k + 1))

    def power(self, alpha: float) -> "Jet":
        if float(alpha).is_integer() and alpha >= 0:
            return self ** int(alpha)
        if (self.value <= 0).any():
            raise JetDomainError(f"non-integer power {alpha} of a non-positive jet")
        binom = _binomials(float(alpha), self.order)
        return self._series(lambda a, k: binom * a ** (alpha - k))

    def sqrt(self) -> "Jet":
        if (self.value <= 0).any():
            raise JetDomainError("sqrt of a jet with non-positive constant term")
        binom = _binomials(0.5, self.order)
        return self._series(lambda a, k: binom * a ** (0.5 - k))

    def exp(self) -> "Jet":
        inv = _inv_factorials(self.order)
        return self._series(lambda a, k: np.exp(a) * inv)

    def log(self) -> "Jet":
        if (self.value <= 0).any():
            raise JetDomainError("log of a jet with non-positive constant term")

        def make(a, k):
            c = np.empty(np.broadcast_shapes(a.shape, k.shape))
            c[..., 0] = np.log(a[..., 0])
            kk = k[1:]
            c[..., 1:] = (-1.0) ** (kk + 1) / (kk * a ** kk)
            return c

        return self._series(make)

    def sin(self) -> "Jet":
        inv = _inv_factorials(self.order)
        return self._series(lambda a, k: np.sin(a + k * (np.pi / 2)) * inv)

    def cos(self) -> "Jet":
        inv = _inv_factorials(self.order)
        return self._series(lambda a, k: np.cos(a + k * (np.pi / 2)) * inv)


# scalar-or-jet elementary functions, for writing metric evaluators once -----------------


def sqrt(u):
    return u.sqrt() if isinstance(u, Jet) else np.sqrt(u)


def exp(u):
    return u.exp() if isinstance(u, Jet) else np.exp(u)


def log(u):
    return u.log() if isinstance(u, Jet) else np.log(u)


def sin(u):
    return u.sin() if isinstance(u, Jet) else np.sin(u)


def cos(u):
    return u.cos() if isinstance(u, Jet) else np.cos(u)


def is_jet(u) -> bool:
    return isinstance(u, Jet)


def value_of(u):
    return u.value if isinstance(u, Jet) else u


# derivative front ends ------------------------------------------------------------------


def eval_jet(f: Callable, point, order: int) -> Jet:
    """All partial derivatives of ``f`` at ``point`` up to ``order``.

    ``f`` is called with one argument per coordinate; ``point`` may carry leading
    batch axes.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_ORDER}]")
    variables = Jet.variables(point, order)
    res = f(*variables)
    if not isinstance(res, Jet):
        res = Jet.constant(np.broadcast_to(res, variables[0].batch_shape),
                           variables[0].nvars, order)
    return res


_STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def _central(f, point, multi_index, h):
    axes = [list(_STENCILS[d].items()) for d in multi_index]
    offsets, weights = [], []
    for combo in itertools.product(*axes):
        offsets.append([s for s, _ in combo])
        weights.append(math.prod(w for _, w in combo))
    pts = point[None, :] + h * np.array(offsets, dtype=float)
    vals = np.broadcast_to(np.asarray(f(*pts.T), dtype=float), (len(pts),))
    return float(np.dot(weights, vals)) / h ** sum(multi_index)


def fd_oracle(f: Callable, point, multi_index: Sequence[int], h: float = 1e-4,
              richardson: bool = False) -> float:
    """Central finite-difference estimate of a partial derivative (error O(h^2)).

    ``f`` must accept numpy arrays (one per coordinate). With ``richardson=True``
    the h and h/2 estimates are combined to cancel the h^2 term.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    multi_index = [int(k) for k in multi_index]
    if len(multi_index) != point.size:
        raise ValueError("multi-index length does not match the point")
    if sum(multi_index) > MAX_ORDER:
        raise ValueError(f"total degree above {MAX_ORDER}")
    if h <= 0:
        raise ValueError("step must be positive")
    d = _central(f, point, multi_index, h)
    if richardson:
        d2 = _central(f, point, multi_index, h / 2)
        d = (4.0 * d2 - d) / 3.0
    return d
