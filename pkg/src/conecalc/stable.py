"""Positive stable laws: the functions ``e_alpha``, densities, the density bound and nu_alpha.

``sigma_x`` denotes a positive stable variable with ``E exp(-q sigma_x) =
exp(-x q**alpha)``.  Its density ``p(x, t)`` in ``t`` is reduced by
self-similarity to ``rho(u) = p(1, u)``,

    p(x, t) = x**(-1/alpha) * rho(t * x**(-1/alpha)),

and ``rho`` is evaluated by the closed form at ``alpha = 1/2``, by the
alternating large-argument series for ``u >= max(1/2, alpha)`` and by the
Zolotarev integral below that crossover.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from . import measures as M
from .cones import BernsteinTriple, BranchingTriple
from .errors import DomainError, EvaluationError
from .measures import PowerExp, RadonMeasure, TabulatedDensity

SERIES_TOL = 1e-14
MAX_TERMS = 10_000
_INT_PANELS = 64
_INT_ORDER = 16


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise DomainError(f"stable index must satisfy 0 < alpha < 1, got {alpha}")
    return alpha


def in_theorem1_range(alpha: float) -> bool:
    """True for ``0 < alpha <= 1/2``: the indices for which ``Psi o e_alpha`` stays Bernstein."""
    return 0 < check_alpha(alpha) <= 0.5


def levy_constant(alpha: float) -> float:
    """``alpha / Gamma(1 - alpha)``, the Levy density constant of ``q**alpha``."""
    return alpha / special.gamma(1.0 - alpha)


def e_alpha(alpha: float, q):
    """``q**alpha``."""
    check_alpha(alpha)
    return np.power(q, alpha)


def e_alpha_triple(alpha: float, scale: float = 1.0) -> BernsteinTriple:
    """Bernstein triple of ``scale * q**alpha``."""
    alpha = check_alpha(alpha)
    return BernsteinTriple(0.0, 0.0, RadonMeasure.family(M.stable_tail(alpha, scale * levy_constant(alpha))))


def stable_scale(phi: BernsteinTriple):
    """``(a, k, alpha)`` when ``phi = a + k q**alpha`` exactly, else ``None``."""
    mu = phi.levy
    if phi.b != 0 or mu.atoms or mu.tables or len(mu.families) != 1:
        return None
    f = mu.families[0]
    if f.rate != 0 or f.upper != math.inf or not -2 < f.power < -1:
        return None
    alpha = -1.0 - f.power
    return phi.a, f.scale / levy_constant(alpha), alpha


def crossover(alpha: float) -> float:
    return max(0.5, alpha)


def series_coefficient(alpha: float, n: int) -> float:
    """Coefficient of ``u**(-n alpha - 1)`` in the large-argument series of ``rho``."""
    mag = math.exp(special.gammaln(n * alpha + 1) - special.gammaln(n + 1)) / math.pi
    return (-1) ** (n - 1) * mag * math.sin(math.pi * n * alpha)


@dataclass(frozen=True)
class StableDensityEval:
    """How a density value was obtained."""

    alpha: float
    method: str  # closed_form_half | zolotarev_series | zolotarev_integral
    terms_used: int
    error_estimate: float


@dataclass(frozen=True)
class StableDensity:
    value: float
    info: StableDensityEval

    def __float__(self) -> float:
        return self.value


def rho_closed_half(u):
    """``rho`` at ``alpha = 1/2``: ``u**(-3/2) exp(-1/(4u)) / (2 sqrt(pi))``."""
    u = np.asarray(u, dtype=float)
    return np.exp(-1.5 * np.log(u) - 0.25 / u) / (2.0 * math.sqrt(math.pi))


def rho_series(alpha: float, u, start: int = 1, tol: float = SERIES_TOL, max_terms: int = MAX_TERMS):
    """Partial sums of the series from index ``start``; returns ``(value, terms, error)``.

    Summation stops once the term magnitude (without the sine factor) falls
    below ``tol`` times the partial sum and is decreasing.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    logu = np.log(u)
    S = np.zeros_like(u)
    big = np.zeros_like(u)
    last = np.full_like(u, np.inf)
    terms = np.zeros(u.shape, dtype=int)
    active = np.ones(u.shape, dtype=bool)
    prev = np.full_like(u, np.inf)
    for n in range(start, max_terms + 1):
        lm = special.gammaln(n * alpha + 1) - special.gammaln(n + 1) - (n * alpha + 1) * logu[active]
        mag = np.exp(lm) / math.pi
        coef = (-1) ** (n - 1) * math.sin(math.pi * n * alpha)
        t = coef * mag
        S[active] += t
        big[active] = np.maximum(big[active], np.abs(t))
        terms[active] = n - start + 1
        last[active] = mag
        done = ((mag <= tol * np.abs(S[active])) | (mag < 1e-300)) & (lm < prev[active])
        prev[active] = lm
        idx = np.nonzero(active)[0]
        active[idx[done]] = False
        if not active.any():
            break
    else:
        raise EvaluationError(
            f"stable series for alpha={alpha} did not converge in {max_terms} terms (min u={u.min():.3g})"
        )
    err = last + 1e-16 * big * np.sqrt(terms)
    return S, terms, err


@lru_cache(maxsize=None)
def _phi_rule(panels: int, order: int):
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, math.pi, panels + 1)
    d = np.diff(edges)
    x = (edges[:-1, None] + (t[None, :] + 1) * 0.5 * d[:, None]).ravel()
    wt = (w[None, :] * 0.5 * d[:, None]).ravel()
    return x, wt


def _log_zolotarev_A(alpha: float, phi):
    beta = alpha / (1.0 - alpha)
    return beta * np.log(np.sin(alpha * phi)) + np.log(np.sin((1 - alpha) * phi)) - np.log(np.sin(phi)) / (1 - alpha)


def _rho_integral_rule(alpha: float, u: np.ndarray, panels: int) -> np.ndarray:
    phi, w = _phi_rule(panels, _INT_ORDER)
    logA = _log_zolotarev_A(alpha, phi)
    A = np.exp(logA)
    logu = np.log(u)
    logz = -alpha / (1 - alpha) * logu
    logpre = math.log(alpha / (1 - alpha) / math.pi) - logu / (1 - alpha)
    out = np.empty_like(u)
    step = max(1, 2_000_000 // phi.size)
    for i in range(0, u.size, step):
        lz = logz[i : i + step, None]
        e = logA[None, :] - np.exp(lz) * A[None, :] + logpre[i : i + step, None]
        out[i : i + step] = np.exp(e) @ w
    return out


def rho_integral(alpha: float, u):
    """Zolotarev integral for ``rho``; returns ``(value, error)`` from two rule sizes."""
    alpha = check_alpha(alpha)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    fine = _rho_integral_rule(alpha, u, _INT_PANELS)
    coarse = _rho_integral_rule(alpha, u, _INT_PANELS // 2)
    return fine, np.abs(fine - coarse)


@lru_cache(maxsize=32)
def _rho_small_spline(alpha: float):
    """Spline of ``log rho + A0 z`` on ``log u`` below the crossover (the bulk of nu tables)."""
    beta = alpha / (1 - alpha)
    A0 = alpha**beta * (1 - alpha)
    s_hi = math.log(crossover(alpha)) + 0.05
    s_lo = -math.log(745.0 / A0) / beta
    s = np.linspace(s_lo, s_hi, 3000)
    u = np.exp(s)
    vals, _ = rho_integral(alpha, u)
    resid = np.log(vals) + A0 * u ** (-beta)
    return s_lo, CubicSpline(s, resid), A0, beta


def _rho_small(alpha: float, u: np.ndarray) -> np.ndarray:
    s_lo, spl, A0, beta = _rho_small_spline(alpha)
    s = np.log(u)
    out = np.zeros_like(u)
    ok = s > s_lo
    out[ok] = np.exp(spl(s[ok]) - A0 * u[ok] ** (-beta))
    return out


def rho(alpha: float, u, fast: bool = False) -> np.ndarray:
    """Vectorized ``rho_alpha(u) = p(1, u)``.

    ``fast`` replaces the direct Zolotarev integral by a cached spline of it
    (used inside large quadratures).
    """
    alpha = check_alpha(alpha)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if alpha == 0.5:
        return rho_closed_half(u)
    out = np.empty_like(u)
    hi = u >= crossover(alpha)
    if hi.any():
        out[hi] = rho_series(alpha, u[hi])[0]
    lo = ~hi
    if lo.any():
        out[lo] = _rho_small(alpha, u[lo]) if fast else rho_integral(alpha, u[lo])[0]
    return np.maximum(out, 0.0)


def stable_density(alpha: float, x, t, info: bool = False):
    """Density ``p(x, t)`` of ``sigma_x`` at ``t``.

    With ``info=True`` a scalar :class:`StableDensity` carrying the method,
    number of terms and error estimate is returned.
    """
    alpha = check_alpha(alpha)
    if info:
        x, t = float(x), float(t)
        if not (x > 0 and t > 0):
            raise DomainError("stable_density needs x, t > 0")
        sc = x ** (-1.0 / alpha)
        u = np.array([t * sc])
        if alpha == 0.5:
            v = float(rho_closed_half(u)[0])
            ev = StableDensityEval(alpha, "closed_form_half", 0, 4e-16 * v)
        elif u[0] >= crossover(alpha):
            v, n, e = rho_series(alpha, u)
            v = float(v[0])
            ev = StableDensityEval(alpha, "zolotarev_series", int(n[0]), float(e[0]) * sc)
        else:
            v, e = rho_integral(alpha, u)
            v = float(v[0])
            ev = StableDensityEval(alpha, "zolotarev_integral", _INT_PANELS * _INT_ORDER, float(e[0]) * sc)
        return StableDensity(max(v, 0.0) * sc, ev)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(x <= 0) or np.any(t <= 0):
        raise DomainError("stable_density needs x, t > 0")
    xb, tb = np.broadcast_arrays(x, t)
    sc = xb ** (-1.0 / alpha)
    val = (sc * rho(alpha, (tb * sc).ravel()).reshape(xb.shape))
    return float(val) if val.ndim == 0 else val


def lemma1_bound(alpha: float, x, t):
    """``(alpha / Gamma(1-alpha)) * x * t**(-1-alpha)``."""
    alpha = check_alpha(alpha)
    return levy_constant(alpha) * np.asarray(x, dtype=float) * np.power(np.asarray(t, dtype=float), -1.0 - alpha)


@dataclass
class Lemma1Report:
    verdict: str
    alpha: float
    points_checked: int
    max_ratio: float
    witness: dict | None = None
    searched: bool = False

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "alpha": self.alpha,
            "points_checked": self.points_checked,
            "max_density_over_bound": self.max_ratio,
            "witness": self.witness,
            "asymptotic_search": self.searched,
        }


def check_lemma1(alpha: float, x_grid, t_grid, rel: float = 1e-9) -> Lemma1Report:
    """Verify ``p(x, t) <= bound(x, t) (1 + rel)`` on a grid.

    For ``alpha > 1/2`` a grid without violations is followed by a search
    along growing ``t`` at fixed ``x``, where the second series term
    (positive for ``alpha > 1/2``) pushes the density above the bound.
    """
    alpha = check_alpha(alpha)
    X, T = np.meshgrid(np.asarray(x_grid, float), np.asarray(t_grid, float), indexing="ij")
    p = stable_density(alpha, X, T)
    b = lemma1_bound(alpha, X, T)
    ratio = p / b
    excess = p - b * (1 + rel)
    n = int(X.size)
    if np.any(excess > 0):
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        w = {"x": float(X[i]), "t": float(T[i]), "density": float(p[i]), "bound": float(b[i])}
        return Lemma1Report("FAIL", alpha, n, float(ratio.max()), w)
    if alpha <= 0.5:
        return Lemma1Report("PASS", alpha, n, float(ratio.max()))
    # violation lives in the large-t regime
    xs = np.asarray(x_grid, float)
    t0 = float(np.max(t_grid))
    for k in range(1, 41):
        tt = t0 * 10.0 ** (k / 2)
        pp = stable_density(alpha, xs, np.full_like(xs, tt))
        bb = lemma1_bound(alpha, xs, tt)
        ex = pp - bb * (1 + rel)
        n += xs.size
        if np.any(ex > 0):
            j = int(np.argmax(pp / bb))
            w = {"x": float(xs[j]), "t": tt, "density": float(pp[j]), "bound": float(bb[j])}
            return Lemma1Report("FAIL", alpha, n, float(pp[j] / bb[j]), w, searched=True)
    return Lemma1Report("PASS", alpha, n, float(ratio.max()), searched=True)


# ---------------------------------------------------------------------------
# nu_alpha
# ---------------------------------------------------------------------------

def bound_minus_density(alpha: float, x, t) -> np.ndarray:
    """``bound(x, t) - p(x, t)`` without cancellation.

    Above the crossover the leading series term equals the bound exactly, so
    the difference is minus the series from its second term.
    """
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    shape = x.shape
    x, t = x.ravel(), t.ravel()
    b = lemma1_bound(alpha, x, t)
    if alpha == 0.5:
        return (b * -np.expm1(-x * x / (4.0 * t))).reshape(shape)
    sc = x ** (-1.0 / alpha)
    u = t * sc
    out = np.empty_like(u)
    hi = u >= crossover(alpha)
    if hi.any():
        out[hi] = -sc[hi] * rho_series(alpha, u[hi], start=2)[0]
    lo = ~hi
    if lo.any():
        out[lo] = b[lo] - sc[lo] * _rho_small(alpha, u[lo])
    return out.reshape(shape)


def _leading_small_x(alpha: float):
    """``(n, -c_n)`` of the first nonvanishing term ``bound - p ~ -c_n x^n t^(-1-n alpha)``."""
    for n in range(2, 50):
        c = series_coefficient(alpha, n)
        if abs(c) > 1e-15:
            return n, -c
    raise EvaluationError("no nonvanishing series term")


def _family_x_rule(f: PowerExp):
    hi = f.upper
    if f.rate > 0:
        hi = min(hi, (60.0 + max(f.power, 0.0) * 4) / f.rate)
    hi = min(hi, 1e20)
    lo = 1e-20
    ps, pw = M._panels(math.log(lo), math.log(hi))
    x = np.exp(ps)
    return x, pw * x * f.density(x), lo, hi


def nu_alpha_density(Pi: RadonMeasure, alpha: float, t):
    """Levy density ``nu_alpha(t) = int Pi(dx) (bound(x,t) - p(x,t))`` of ``Psi o e_alpha``.

    Requires ``alpha <= 1/2``; nonnegativity then follows from the density
    bound, and small negative rounding is clipped.
    """
    alpha = check_alpha(alpha)
    if alpha > 0.5:
        raise DomainError("nu_alpha needs alpha <= 1/2: for larger alpha the density bound fails")
    if not M.is_integrable(Pi, M.WeightKind.X_MIN_XSQ):
        raise DomainError("jump measure violates int (x ^ x^2) Pi(dx) < inf")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    out = np.zeros_like(t)
    for a in Pi.atoms:
        out += a.m * bound_minus_density(alpha, a.x, t)
    rules = []
    nlead, clead = _leading_small_x(alpha)
    c1 = levy_constant(alpha)
    for f in Pi.families:
        if f.scale == 0:
            continue
        x, om, lo, hi = _family_x_rule(f)
        rules.append((x, om))
        e = nlead + f.power + 1
        out += clead * t ** (-1 - nlead * alpha) * f.scale * lo**e / e
        if hi == 1e20 and f.upper == math.inf and f.rate == 0:
            out += c1 * t ** (-1 - alpha) * f.scale * hi ** (f.power + 2) / (-f.power - 2)
    for tab in Pi.tables:
        rules.append(tab.rule)
    for x, om in rules:
        step = max(1, 1_000_000 // x.size)
        for i in range(0, t.size, step):
            tt = t[i : i + step]
            D = bound_minus_density(alpha, x[None, :], tt[:, None])
            out[i : i + step] += D @ om
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def nu_alpha_table(Pi: RadonMeasure, alpha: float, lo: float = 1e-10, hi: float = 1e20, per_decade: int = 40):
    """``nu_alpha`` tabulated on a log grid with fitted power-law ends."""
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    grid = np.geomspace(lo, hi, n)
    vals = nu_alpha_density(Pi, alpha, grid)
    return M.tabulate(lambda g: vals, grid)


def compose_levy_measure(psi: BranchingTriple, alpha: float, **grid) -> RadonMeasure:
    """Levy measure of ``Psi o e_alpha`` for ``alpha <= 1/2``.

    Drift and Gaussian parts map to ``a e_alpha`` and ``b e_(2 alpha)``; the
    jump part gives the tabulated ``nu_alpha``.
    """
    alpha = check_alpha(alpha)
    if alpha > 0.5:
        raise DomainError("Psi o e_alpha is Bernstein for every Psi only when alpha <= 1/2")
    fams = []
    if psi.a > 0:
        fams.append(M.stable_tail(alpha, psi.a * levy_constant(alpha)))
    if psi.b > 0 and alpha < 0.5:
        fams.append(M.stable_tail(2 * alpha, psi.b * levy_constant(2 * alpha)))
    tabs = ()
    if not psi.jumps.is_zero:
        tabs = (nu_alpha_table(psi.jumps, alpha, **grid),)
    return RadonMeasure((), tuple(fams), tabs)
