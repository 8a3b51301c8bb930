"""Positive Radon measures on the open half-line ]0, inf[.

A measure is a finite mixture of point masses, analytic power-exponential
families ``scale * x**power * exp(-rate * x)`` (optionally cut off at
``upper``) and tabulated densities with power-law continuation outside the
grid.  The three Laplace-type functionals used by the cones,

    laplace                 int exp(-q x)            mu(dx)
    partial_levy_transform  int (1 - exp(-q x))      mu(dx)
    compensated_levy_transform int (exp(-q x) - 1 + q x) mu(dx)

are evaluated in closed form on families, exactly on atoms and with a fixed
Gauss-Legendre rule on tables, so every evaluation is a smooth function of
``q`` (the derivative-based cone checks rely on this).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import DomainError, RepresentationError

INF = math.inf
_GL_CELL = np.polynomial.legendre.leggauss(6)
_PANEL = 0.5  # log-width of the extrapolation panels
_EXTRAP_SPAN = 40.0  # log-width covered on each side of a table


class WeightKind(str, Enum):
    """Integrability weights of the three cones."""

    ONE_MIN_INV = "one_min_inv"  # 1 ^ 1/x, completely monotone side
    X_MIN_ONE = "x_min_one"  # x ^ 1, Levy measures of subordinators
    X_MIN_XSQ = "x_min_xsq"  # x ^ x^2, branching mechanisms


# weight ~ x**lo near 0 and ~ x**hi near infinity
_WEIGHT_EXPONENTS = {
    WeightKind.ONE_MIN_INV: (0, -1),
    WeightKind.X_MIN_ONE: (1, 0),
    WeightKind.X_MIN_XSQ: (2, 1),
    "x": (1, 1),
}


def _weight_fn(w) -> Callable:
    if w == WeightKind.ONE_MIN_INV:
        return lambda x: np.minimum(1.0, 1.0 / x)
    if w == WeightKind.X_MIN_ONE:
        return lambda x: np.minimum(x, 1.0)
    if w == WeightKind.X_MIN_XSQ:
        return lambda x: np.minimum(x, x * x)
    if w == "x":
        return lambda x: x
    raise RepresentationError(f"unknown weight {w!r}")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def kernel_laplace(z):
    return np.exp(-z)


def kernel_partial(z):
    """1 - exp(-z), accurate for tiny z."""
    return -np.expm1(-z)


def kernel_compensated(z):
    """exp(-z) - 1 + z; truncated series below 1e-4 where expm1 loses digits."""
    z = np.asarray(z, dtype=float)
    out = np.expm1(-z) + z
    small = z < 1e-4
    if np.any(small):
        zs = z[small]
        out[small] = zs * zs * (0.5 - zs * (1 / 6 - zs * (1 / 24 - zs * (1 / 120 - zs / 720))))
    return out


_KERNELS = {
    "laplace": kernel_laplace,
    "partial": kernel_partial,
    "compensated": kernel_compensated,
}

# kernel(q x) ~ c(q) x**m as x -> 0
_SMALL_X = {
    "laplace": (lambda q: np.ones_like(q), 0),
    "partial": (lambda q: q, 1),
    "compensated": (lambda q: 0.5 * q * q, 2),
}


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Point mass ``m`` at ``x > 0``."""

    x: float
    m: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "m", float(self.m))
        if not (self.x > 0 and math.isfinite(self.x)):
            raise RepresentationError(f"atom location must be positive, got {self.x}")
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise RepresentationError(f"atom mass must be nonnegative, got {self.m}")


@dataclass(frozen=True)
class PowerExp:
    """Density ``scale * x**power * exp(-rate*x)`` on ``]0, upper[``."""

    power: float
    rate: float = 0.0
    scale: float = 1.0
    upper: float = INF

    def __post_init__(self):
        for name in ("power", "rate", "scale", "upper"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not math.isfinite(self.power):
            raise RepresentationError("power must be finite")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise RepresentationError(f"rate must be nonnegative, got {self.rate}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise RepresentationError(f"scale must be nonnegative, got {self.scale}")
        if not self.upper > 0:
            raise RepresentationError(f"upper cutoff must be positive, got {self.upper}")

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            d = self.scale * x**self.power * np.exp(-self.rate * x)
        return np.where(x < self.upper, d, 0.0)

    @property
    def decreasing(self) -> bool:
        return self.power <= 0 or self.scale == 0


def stable_tail(alpha: float, scale: float) -> PowerExp:
    """Density ``scale * x**(-1-alpha)``, 0 < alpha < 1."""
    if not 0 < alpha < 1:
        raise RepresentationError(f"stable_tail needs 0 < alpha < 1, got {alpha}")
    return PowerExp(-1.0 - alpha, 0.0, scale)


def exponential(rate: float, scale: float = 1.0) -> PowerExp:
    """Density ``scale * exp(-rate * x)``."""
    if not rate > 0:
        raise RepresentationError(f"exponential needs a positive rate, got {rate}")
    return PowerExp(0.0, rate, scale)


@dataclass(frozen=True)
class TabulatedDensity:
    """Density sampled on a strictly increasing positive grid.

    Inside the grid the density is a cubic spline in log-log coordinates
    (linear in ``log x`` if some value is zero).  Beyond the last point it
    continues as ``values[-1] * (x/grid[-1])**tail_exponent`` and below the
    first as ``values[0] * (x/grid[0])**head_exponent``; ``None`` means the
    density vanishes there.
    """

    grid: tuple
    values: tuple
    tail_exponent: float | None = None
    head_exponent: float | None = None
    # measure this table is the tail function of, kept so the inverse map is exact
    origin: "RadonMeasure | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.size < 2 or g.shape != v.shape:
            raise RepresentationError("table needs matching grid/values with at least 2 points")
        if not np.all(np.isfinite(g)) or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise RepresentationError("table grid must be positive and strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise RepresentationError("table values must be finite and nonnegative")
        object.__setattr__(self, "grid", tuple(g.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    @cached_property
    def _g(self) -> np.ndarray:
        return np.asarray(self.grid)

    @cached_property
    def _v(self) -> np.ndarray:
        return np.asarray(self.values)

    @cached_property
    def _spline(self):
        s = np.log(self._g)
        if np.all(self._v > 0):
            return "loglog", CubicSpline(s, np.log(self._v))
        return "linear", None

    def _inner(self, x):
        mode, spl = self._spline
        s = np.log(x)
        if mode == "loglog":
            return np.exp(spl(s))
        return np.interp(s, np.log(self._g), self._v)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        x0, x1 = self._g[0], self._g[-1]
        inside = (x >= x0) & (x <= x1)
        out[inside] = self._inner(x[inside])
        if self.head_exponent is not None:
            lo = x < x0
            out[lo] = self._v[0] * (x[lo] / x0) ** self.head_exponent
        if self.tail_exponent is not None:
            hi = x > x1
            out[hi] = self._v[-1] * (x[hi] / x1) ** self.tail_exponent
        return out

    def log_slope(self, end: str) -> float:
        """Local log-log slope at the first or last grid point."""
        mode, spl = self._spline
        if mode != "loglog":
            g, v = np.log(self._g), np.log(np.maximum(self._v, 1e-300))
            return float((v[1] - v[0]) / (g[1] - g[0]) if end == "head" else (v[-1] - v[-2]) / (g[-1] - g[-2]))
        s = math.log(self.grid[0] if end == "head" else self.grid[-1])
        return float(spl(s, 1))

    @cached_property
    def rule(self):
        """Nodes and density-weighted quadrature weights covering the support."""
        s = np.log(self._g)
        t, w = _GL_CELL
        nodes, weights = [], []
        ds = np.diff(s)
        cell_s = s[:-1, None] + (t[None, :] + 1) * 0.5 * ds[:, None]
        cell_w = w[None, :] * 0.5 * ds[:, None]
        nodes.append(cell_s.ravel())
        weights.append(cell_w.ravel())
        if self.head_exponent is not None:
            ps, pw = _panels(s[0] - _EXTRAP_SPAN, s[0])
            nodes.append(ps)
            weights.append(pw)
        if self.tail_exponent is not None:
            ps, pw = _panels(s[-1], s[-1] + _EXTRAP_SPAN)
            nodes.append(ps)
            weights.append(pw)
        ns = np.concatenate(nodes)
        x = np.exp(ns)
        omega = np.concatenate(weights) * x * self.density(x)
        return x, omega

    @property
    def decreasing(self) -> bool:
        v = self._v
        if np.any(np.diff(v) > 1e-12 * np.maximum(v[:-1], 1e-300)):
            return False
        if self.head_exponent is None:
            if v[0] > 0:
                return False
        elif self.head_exponent > 0:
            return False
        if self.tail_exponent is not None and self.tail_exponent > 0:
            return False
        return True

    def scaled(self, c: float) -> "TabulatedDensity":
        origin = None if self.origin is None else self.origin.scaled(c)
        return TabulatedDensity(self.grid, tuple(c * self._v), self.tail_exponent, self.head_exponent, origin)

    def times_power(self, k: float) -> "TabulatedDensity":
        """Density multiplied by ``x**k``."""
        return TabulatedDensity(
            self.grid,
            tuple(self._v * self._g**k),
            None if self.tail_exponent is None else self.tail_exponent + k,
            None if self.head_exponent is None else self.head_exponent + k,
        )


def _panels(s0: float, s1: float):
    t, w = _GL_CELL
    n = max(1, int(math.ceil((s1 - s0) / _PANEL)))
    edges = np.linspace(s0, s1, n + 1)
    d = np.diff(edges)
    ps = edges[:-1, None] + (t[None, :] + 1) * 0.5 * d[:, None]
    pw = w[None, :] * 0.5 * d[:, None]
    return ps.ravel(), pw.ravel()


# ---------------------------------------------------------------------------
# the measure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadonMeasure:
    """Finite mixture of atoms, analytic families and tabulated densities."""

    atoms: tuple = ()
    families: tuple = ()
    tables: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "tables", tuple(self.tables))
        for a in self.atoms:
            if not isinstance(a, Atom):
                raise RepresentationError(f"not an atom: {a!r}")
        for f in self.families:
            if not isinstance(f, PowerExp):
                raise RepresentationError(f"not a family: {f!r}")
        for t in self.tables:
            if not isinstance(t, TabulatedDensity):
                raise RepresentationError(f"not a table: {t!r}")

    @classmethod
    def zero(cls) -> "RadonMeasure":
        return cls()

    @classmethod
    def atom(cls, x: float, m: float = 1.0) -> "RadonMeasure":
        return cls(atoms=(Atom(x, m),))

    @classmethod
    def family(cls, *fams: PowerExp) -> "RadonMeasure":
        return cls(families=fams)

    @property
    def is_zero(self) -> bool:
        return (
            all(a.m == 0 for a in self.atoms)
            and all(f.scale == 0 for f in self.families)
            and all(not np.any(t._v > 0) for t in self.tables)
        )

    @property
    def has_atoms(self) -> bool:
        return any(a.m > 0 for a in self.atoms)

    @property
    def has_decreasing_density(self) -> bool:
        """True when there are no atoms and every density component is nonincreasing."""
        return (
            not self.has_atoms
            and all(f.decreasing for f in self.families)
            and all(t.decreasing for t in self.tables)
        )

    def density(self, x):
        """Sum of the absolutely continuous parts (atoms excluded)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for f in self.families:
            out = out + f.density(x)
        for t in self.tables:
            out = out + t.density(x)
        return out

    def scaled(self, c: float) -> "RadonMeasure":
        if c < 0:
            raise DomainError("measures can only be scaled by nonnegative constants")
        return RadonMeasure(
            tuple(Atom(a.x, c * a.m) for a in self.atoms),
            tuple(PowerExp(f.power, f.rate, c * f.scale, f.upper) for f in self.families),
            tuple(t.scaled(c) for t in self.tables),
        )

    def __add__(self, other: "RadonMeasure") -> "RadonMeasure":
        return RadonMeasure(self.atoms + other.atoms, self.families + other.families, self.tables + other.tables)

    def pruned(self) -> "RadonMeasure":
        """Drop zero-mass components."""
        return RadonMeasure(
            tuple(a for a in self.atoms if a.m > 0),
            tuple(f for f in self.families if f.scale > 0),
            tuple(t for t in self.tables if np.any(t._v > 0)),
        )

    def integrate(self, g: Callable, method: str = "adaptive") -> float:
        """Return ``int g(x) mu(dx)``.

        ``g`` must accept numpy arrays.  Families are integrated with
        adaptive Gauss-Kronrod (``scipy.integrate.quad``) unless
        ``method="fixed"``; tables always use their fixed rule.
        """
        total = sum(a.m * float(g(np.array([a.x]))[0]) for a in self.atoms)
        for f in self.families:
            if f.scale == 0:
                continue
            if method == "fixed":
                x, om = _family_rule(f)
                total += float(np.dot(om, g(x)))
            else:
                total += _quad_positive(lambda x, f=f: float(g(np.array([x]))[0] * f.density(x)), f.upper)
        for t in self.tables:
            x, om = t.rule
            total += float(np.dot(om, g(x)))
        return total

    # json -------------------------------------------------------------------
    def to_json(self) -> dict:
        out: dict = {}
        if self.atoms:
            out["atoms"] = [{"x": a.x, "m": a.m} for a in self.atoms]
        if self.families:
            out["families"] = [_family_to_json(f) for f in self.families]
        if self.tables:
            tabs = [
                {
                    "grid": list(t.grid),
                    "values": list(t.values),
                    "tail_exponent": t.tail_exponent,
                    "head_exponent": t.head_exponent,
                }
                for t in self.tables
            ]
            if len(tabs) == 1:
                out["table"] = tabs[0]
            else:
                out["tables"] = tabs
        if not out:
            out["atoms"] = []  # the zero measure
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "RadonMeasure":
        if not isinstance(doc, dict):
            raise RepresentationError("measure must be a JSON object")
        unknown = set(doc) - {"atoms", "families", "table", "tables"}
        if unknown:
            raise RepresentationError(f"unknown measure fields {sorted(unknown)}")
        if not doc:
            raise RepresentationError("measure JSON needs at least one of atoms, families, table(s)")
        try:
            for a in doc.get("atoms", []):
                if set(a) != {"x", "m"}:
                    raise RepresentationError(f"atom needs exactly the fields x and m, got {sorted(a)}")
            atoms = tuple(Atom(float(a["x"]), float(a["m"])) for a in doc.get("atoms", []))
            fams = tuple(_family_from_json(f) for f in doc.get("families", []))
            raw_tables = list(doc.get("tables", []))
            if "table" in doc:
                raw_tables.append(doc["table"])
            tables = tuple(
                TabulatedDensity(
                    tuple(t["grid"]),
                    tuple(t["values"]),
                    t.get("tail_exponent"),
                    t.get("head_exponent"),
                )
                for t in raw_tables
            )
        except (KeyError, TypeError) as exc:
            raise RepresentationError(f"malformed measure: {exc}") from exc
        return cls(atoms, fams, tables)


def _family_to_json(f: PowerExp) -> dict:
    if f.rate == 0 and f.upper == INF and -2 < f.power < -1:
        return {"kind": "stable_tail", "alpha": -1.0 - f.power, "scale": f.scale}
    if f.power == 0 and f.upper == INF and f.rate > 0:
        return {"kind": "exponential", "rate": f.rate, "scale": f.scale}
    d = {"kind": "power_exp", "power": f.power, "rate": f.rate, "scale": f.scale}
    if f.upper != INF:
        d["upper"] = f.upper
    return d


def _family_from_json(d: dict) -> PowerExp:
    kind = d.get("kind")
    if kind == "stable_tail":
        return stable_tail(float(d["alpha"]), float(d.get("scale", 1.0)))
    if kind == "exponential":
        return exponential(float(d["rate"]), float(d.get("scale", 1.0)))
    if kind == "power_exp":
        return PowerExp(
            float(d["power"]), float(d.get("rate", 0.0)), float(d.get("scale", 1.0)), float(d.get("upper", INF))
        )
    raise RepresentationError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------------------
# numeric helpers
# ---------------------------------------------------------------------------

def _quad_positive(fn: Callable[[float], float], upper: float = INF, epsrel: float = 1e-10) -> float:
    """Adaptive Gauss-Kronrod over ]0, upper[ split at dyadic points."""
    edges = [0.0]
    for e in (1e-6, 1e-3, 1.0, 1e3):
        if e < upper:
            edges.append(e)
    edges.append(upper)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=epsrel, limit=200)
        total += val
    return total


def _family_rule(f: PowerExp):
    """Fixed log-spaced Gauss-Legendre rule for a family (used for vectorized integrands)."""
    hi = f.upper if f.upper != INF else (60.0 / f.rate if f.rate > 0 else 1e20)
    if f.rate > 0 and f.power > 0:
        hi = min(f.upper, (60.0 + 2 * f.power * math.log1p(f.power / f.rate)) / f.rate + f.power / f.rate)
    s_hi = math.log(hi)
    s_lo = s_hi - 60.0
    ps, pw = _panels(s_lo, s_hi)
    x = np.exp(ps)
    return x, pw * x * f.density(x)


def _expm1_ratio(a: float, L):
    """-expm1(-a L) / a, tending to L as a -> 0."""
    L = np.asarray(L, dtype=float)
    if abs(a) < 1e-14:
        return L
    return -np.expm1(-a * L) / a


def _psi(a: float, z):
    """((1+z)^-a - 1 + a z) / (a (a+1)), smooth through a = 0 and a = -1."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 0.05
    if np.any(small):
        zs = z[small]
        # series: sum_k>=2 binom(-a, k) z^k / (a(a+1)) = z^2/2 - (a+2) z^3/6 + ...
        term = 0.5 * zs * zs
        acc = term.copy()
        for k in range(3, 40):
            term = term * (-(a + k - 1) / k) * zs
            acc = acc + term
        out[small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        if abs(a) < 1e-7:
            out[big] = zb - np.log1p(zb)
        elif abs(a + 1) < 1e-7:
            out[big] = (1 + zb) * np.log1p(zb) - zb
        else:
            out[big] = (np.expm1(-a * np.log1p(zb)) + a * zb) / (a * (a + 1))
    return out


def _near_pole(a: float) -> bool:
    return a <= 0 and abs(a - round(a)) < 1e-9


def _family_kernel(f: PowerExp, kind: str, q: np.ndarray) -> np.ndarray:
    """Closed form of ``int kernel(q x) f(dx)`` with quadrature fallback."""
    p, r, s, u = f.power, f.rate, f.scale, f.upper
    a = p + 1.0
    if s == 0:
        return np.zeros_like(q)
    if kind == "laplace":
        if a <= 0:
            return np.full_like(q, INF)
        z = q + r
        base = s * np.exp(special.gammaln(a) - a * np.log(z))
        if u == INF:
            return base
        return base * special.gammainc(a, z * u)
    if kind == "partial":
        if a <= -1:
            return np.full_like(q, INF)
        if u == INF:
            if r > 0:
                return s * special.gamma(a + 1) * r ** (-a) * _expm1_ratio(a, np.log1p(q / r))
            if a >= 0:
                return np.full_like(q, INF)
            return s * special.gamma(a + 1) / (-a) * q ** (-a)
        if r == 0 and not _near_pole(a):
            return s * _trunc_partial(a, u, q)
    if kind == "compensated":
        if a <= -2:
            return np.full_like(q, INF)
        if u == INF:
            if r > 0:
                return s * special.gamma(a + 2) * r ** (-a) * _psi(a, q / r)
            if a >= -1:
                return np.full_like(q, INF)
            return s * special.gamma(a) * q ** (-a)
        if r == 0 and not _near_pole(a) and not _near_pole(a + 1):
            ka = kernel_compensated(q * u) * u**a / a
            return s * (ka - (q / a) * _trunc_partial(a + 1, u, q))
    return _family_kernel_quad(f, kind, q)


def _trunc_partial(a: float, u: float, q: np.ndarray) -> np.ndarray:
    """int_0^u (1 - e^{-qx}) x^(a-1) dx for a > -1, a != 0, via integration by parts."""
    boundary = kernel_partial(q * u) * u**a / a
    inner = special.gamma(a + 1) * q ** (-(a + 1)) * special.gammainc(a + 1, q * u)
    return boundary - (q / a) * inner


def _family_kernel_quad(f: PowerExp, kind: str, q: np.ndarray) -> np.ndarray:
    k = _KERNELS[kind]
    out = np.empty_like(q)
    for i, qi in enumerate(q):
        out[i] = _quad_positive(lambda x: float(k(np.array([qi * x]))[0] * f.density(x)), f.upper, epsrel=1e-11)
    return out


_BY_PARTS = {"laplace": "partial", "partial": "compensated"}


def _table_kernel(t: TabulatedDensity, kind: str, q: np.ndarray) -> np.ndarray:
    if t.origin is not None and kind in _BY_PARTS:
        # a tail function integrates by parts against its source measure
        return _kernel_integral(t.origin, _BY_PARTS[kind], q) / q
    x, om = t.rule
    k = _KERNELS[kind]
    out = np.empty_like(q)
    step = max(1, 2_000_000 // max(x.size, 1))
    for i in range(0, q.size, step):
        qq = q[i : i + step]
        out[i : i + step] = k(qq[:, None] * x[None, :]) @ om
    # analytic remainders beyond the rule's span
    g0, g1 = t._g[0], t._g[-1]
    v0, v1 = t._v[0], t._v[-1]
    if t.head_exponent is not None and v0 > 0:
        h = t.head_exponent
        c, m = _SMALL_X[kind]
        e = h + m + 1
        if e <= 0:
            return np.full_like(q, INF)
        x_lo = g0 * math.exp(-_EXTRAP_SPAN)
        out = out + c(q) * v0 * g0 ** (-h) * x_lo**e / e
    if t.tail_exponent is not None and v1 > 0:
        tau = t.tail_exponent
        x_hi = g1 * math.exp(_EXTRAP_SPAN)
        amp = v1 * g1 ** (-tau)
        if kind == "partial":
            if tau >= -1:
                return np.full_like(q, INF)
            out = out + amp * x_hi ** (tau + 1) / (-tau - 1)
        elif kind == "compensated":
            if tau >= -2:
                return np.full_like(q, INF)
            out = out + q * amp * x_hi ** (tau + 2) / (-tau - 2) - amp * x_hi ** (tau + 1) / (-tau - 1)
    return out


def _kernel_integral(mu: RadonMeasure, kind: str, q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(~(q > 0)):
        raise DomainError("q must be positive")
    k = _KERNELS[kind]
    total = np.zeros_like(q)
    for a in mu.atoms:
        total = total + a.m * k(q * a.x)
    for f in mu.families:
        total = total + _family_kernel(f, kind, q)
    for t in mu.tables:
        total = total + _table_kernel(t, kind, q)
    return total


def _ret(q, val):
    return float(val[0]) if np.ndim(q) == 0 else val


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def is_integrable(mu: RadonMeasure, w) -> bool:
    """Decide finiteness of ``int w dmu`` from the origin and tail exponents alone."""
    lo, hi = _WEIGHT_EXPONENTS[w]
    for f in mu.families:
        if f.scale == 0:
            continue
        if f.power + lo <= -1:
            return False
        if f.upper == INF and f.rate == 0 and f.power + hi >= -1:
            return False
    for t in mu.tables:
        if t.head_exponent is not None and t._v[0] > 0 and t.head_exponent + lo <= -1:
            return False
        if t.tail_exponent is not None and t._v[-1] > 0 and t.tail_exponent + hi >= -1:
            return False
    return True


def weighted_mass(mu: RadonMeasure, w) -> float:
    """``int w(x) mu(dx)`` for one of the cone weights; ``inf`` when divergent.

    Divergence is decided analytically from the power exponents at 0 and at
    infinity, never from quadrature overflow.
    """
    w = WeightKind(w) if not isinstance(w, WeightKind) and w != "x" else w
    if not is_integrable(mu, w):
        return INF
    wf = _weight_fn(w)
    total = sum(a.m * float(wf(np.array([a.x]))[0]) for a in mu.atoms)
    for f in mu.families:
        if f.scale == 0:
            continue
        total += _quad_positive(lambda x, f=f: float(wf(np.array([x]))[0] * f.density(x)), f.upper)
    lo, hi = _WEIGHT_EXPONENTS[w]
    for t in mu.tables:
        x, om = t.rule
        total += float(np.dot(om, wf(x)))
        if t.head_exponent is not None and t._v[0] > 0:
            g0 = t._g[0]
            x_lo = g0 * math.exp(-_EXTRAP_SPAN)
            e = t.head_exponent + lo + 1
            total += t._v[0] * g0 ** (-t.head_exponent) * x_lo**e / e
        if t.tail_exponent is not None and t._v[-1] > 0:
            g1 = t._g[-1]
            x_hi = g1 * math.exp(_EXTRAP_SPAN)
            e = t.tail_exponent + hi + 1
            total += t._v[-1] * g1 ** (-t.tail_exponent) * x_hi**e / (-e)
    return float(total)


def first_moment(mu: RadonMeasure) -> float:
    """``int x mu(dx)``, ``inf`` when the exponents make it divergent."""
    return weighted_mass(mu, "x")


def laplace(mu: RadonMeasure, q):
    """``int exp(-q x) mu(dx)``; ``inf`` for a density non-integrable at the origin."""
    return _ret(q, _kernel_integral(mu, "laplace", q))


def partial_levy_transform(mu: RadonMeasure, q):
    """``int (1 - exp(-q x)) mu(dx)`` for a Levy measure with finite ``x ^ 1`` mass."""
    if not is_integrable(mu, WeightKind.X_MIN_ONE):
        raise DomainError("Levy measure violates int (x ^ 1) Lambda(dx) < inf")
    return _ret(q, _kernel_integral(mu, "partial", q))


def compensated_levy_transform(mu: RadonMeasure, q):
    """``int (exp(-q x) - 1 + q x) mu(dx)`` for a measure with finite ``x ^ x^2`` mass."""
    if not is_integrable(mu, WeightKind.X_MIN_XSQ):
        raise DomainError("jump measure violates int (x ^ x^2) Pi(dx) < inf")
    return _ret(q, _kernel_integral(mu, "compensated", q))


def log_grid(lo: float = 1e-6, hi: float = 1e6, n: int = 512) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def tabulate(fn: Callable, grid: Iterable[float], head_exponent="fit", tail_exponent="fit") -> TabulatedDensity:
    """Tabulate a nonnegative vectorized density; ``"fit"`` takes the end log-slopes."""
    g = np.asarray(list(grid), dtype=float)
    v = np.maximum(np.asarray(fn(g), dtype=float), 0.0)
    t = TabulatedDensity(tuple(g), tuple(v))
    he = t.log_slope("head") if head_exponent == "fit" else head_exponent
    te = t.log_slope("tail") if tail_exponent == "fit" else tail_exponent
    if v[0] == 0:
        he = None
    if v[-1] == 0:
        te = None
    return TabulatedDensity(t.grid, t.values, te, he)


# ---------------------------------------------------------------------------
# tail functions  mu((y, inf))  and their inverse
# ---------------------------------------------------------------------------

def upper_gamma(a: float, z):
    """Unnormalized upper incomplete gamma Gamma(a, z) for any real a and z > 0."""
    z = np.asarray(z, dtype=float)
    if a > 0:
        return special.gammaincc(a, z) * special.gamma(a)
    if abs(a) < 1e-14:
        return special.exp1(z)
    # Gamma(a, z) = (Gamma(a+1, z) - z^a e^-z) / a
    return (upper_gamma(a + 1.0, z) - z**a * np.exp(-z)) / a


def _family_tail_values(f: PowerExp, y: np.ndarray) -> np.ndarray:
    p, r, s, u = f.power, f.rate, f.scale, f.upper
    a = p + 1.0
    if r > 0:
        hi = 0.0 if u == INF else upper_gamma(a, r * u)
        return s * r ** (-a) * (upper_gamma(a, r * y) - hi)
    if u == INF:
        return s * y**a / (-a)
    if abs(a) < 1e-14:
        return s * np.log(u / y)
    return s * (u**a - y**a) / a


def _family_tail(f: PowerExp):
    """Tail function of one family as a family when closed under the map, else a table."""
    p, r, s, u = f.power, f.rate, f.scale, f.upper
    a = p + 1.0
    if u == INF and r == 0:
        if a >= 0:
            raise DomainError("tail function infinite: density not integrable at infinity")
        return PowerExp(a, 0.0, s / (-a))
    if u == INF and p == 0:
        return PowerExp(0.0, r, s / r)
    if u != INF:
        # geometric in y up to u/2, then geometric in the distance to the cutoff
        lo = min(1e-6, u * 1e-12)
        left = np.geomspace(lo, 0.5 * u, 400, endpoint=False)
        right = u - np.geomspace(0.5 * u, u * 1e-10, 112)
        y = np.concatenate([left, right])
    else:
        hi = (max(p, 0.0) + 60.0) / r
        y = np.geomspace(min(1e-6, hi * 1e-12), hi, 512)
    v = _family_tail_values(f, y)
    head = a if a < 0 else 0.0
    return TabulatedDensity(tuple(y), tuple(np.maximum(v, 0.0)), None, head, RadonMeasure.family(f))


def _table_tail(t: TabulatedDensity) -> TabulatedDensity:
    g, v = t._g, t._v
    s = np.log(g)
    tt, w = _GL_CELL
    ds = np.diff(s)
    cs = s[:-1, None] + (tt[None, :] + 1) * 0.5 * ds[:, None]
    cx = np.exp(cs)
    cell = (w[None, :] * 0.5 * ds[:, None] * cx * t._inner(cx)).sum(axis=1)
    rem = 0.0
    if t.tail_exponent is not None and v[-1] > 0:
        tau = t.tail_exponent
        if tau >= -1:
            raise DomainError("tail function infinite: table tail exponent >= -1")
        rem = v[-1] * g[-1] / (-tau - 1)
    tail = rem + np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    head = None
    if t.head_exponent is not None and v[0] > 0:
        head = min(t.head_exponent + 1.0, 0.0)
    elif tail[0] > 0:
        head = 0.0  # constant below the grid
    te = None if t.tail_exponent is None or v[-1] == 0 else t.tail_exponent + 1.0
    return TabulatedDensity(t.grid, tuple(tail), te, head, RadonMeasure(tables=(t,)))


def tail_function(mu: RadonMeasure) -> RadonMeasure:
    """The absolutely continuous measure ``mu((y, inf)) dy``.

    Atoms become box densities, stable-type and exponential families stay
    closed-form, everything else is tabulated.
    """
    fams, tabs = [], []
    for a in mu.atoms:
        if a.m > 0:
            fams.append(PowerExp(0.0, 0.0, a.m, a.x))
    for f in mu.families:
        if f.scale == 0:
            continue
        out = _family_tail(f)
        (fams if isinstance(out, PowerExp) else tabs).append(out)
    for t in mu.tables:
        if np.any(t._v > 0):
            tabs.append(_table_tail(t))
    return RadonMeasure((), tuple(fams), tuple(tabs))


def _table_neg_derivative(t: TabulatedDensity) -> TabulatedDensity:
    g, v = t._g, t._v
    mode, spl = t._spline
    if mode == "loglog":
        d = -v * spl(np.log(g), 1) / g
    else:
        d = -np.gradient(v, g)
    d = np.maximum(d, 0.0)
    head = None
    if t.head_exponent is not None and v[0] > 0 and abs(t.head_exponent) > 1e-12:
        if t.head_exponent > 0:
            raise DomainError("density increasing near the origin: not a tail function")
        head = t.head_exponent - 1.0
    tail = None if t.tail_exponent is None or v[-1] == 0 else t.tail_exponent - 1.0
    return TabulatedDensity(t.grid, tuple(d), tail, head)


def negative_derivative(mu: RadonMeasure) -> RadonMeasure:
    """Measure ``Lambda`` whose tail function is the density of ``mu`` (inverse of :func:`tail_function`)."""
    if mu.has_atoms:
        raise DomainError("a measure with atoms is not a tail function")
    atoms, fams, tabs = [], [], []
    for f in mu.families:
        p, r, s, u = f.power, f.rate, f.scale, f.upper
        if s == 0:
            continue
        if p > 0:
            raise DomainError("density increasing near the origin: not a tail function")
        # -d/dx s x^p e^{-rx} = s r x^p e^{-rx} - s p x^{p-1} e^{-rx}
        if r > 0:
            fams.append(PowerExp(p, r, s * r, u))
        if p != 0:
            fams.append(PowerExp(p - 1.0, r, -p * s, u))
        if u != INF:
            atoms.append(Atom(u, s * u**p * math.exp(-r * u)))
        elif r == 0 and p == 0:
            raise DomainError("constant density is not a tail function")
    out = RadonMeasure()
    for t in mu.tables:
        if t.origin is not None:
            out = out + t.origin
        else:
            tabs.append(_table_neg_derivative(t))
    return RadonMeasure(tuple(atoms), tuple(fams), tuple(tabs)) + out


def times_x(mu: RadonMeasure, k: float = 1.0) -> RadonMeasure:
    """The measure ``x**k mu(dx)``, exact on every component."""
    return RadonMeasure(
        tuple(Atom(a.x, a.m * a.x**k) for a in mu.atoms),
        tuple(PowerExp(f.power + k, f.rate, f.scale, f.upper) for f in mu.families),
        tuple(t.times_power(k) for t in mu.tables),
    )
