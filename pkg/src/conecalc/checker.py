"""Numeric semi-decision of cone membership for black-box functions.

Membership in CM, B2 or B3 is decided by the sign pattern of the
derivatives ``f, f', ..., f^(K)`` on a grid.  Derivatives are estimated by
Richardson-extrapolated central differences, computed twice (in ``q`` and
in ``log q``) with the better-converged estimate kept; its error estimate
widens the sign tolerance so that a PASS is never caused by noise alone
being read as a sign.  A PASS therefore means "no violation found to order
K on this grid", never a proof.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial
from typing import Callable

import numpy as np

from .errors import DomainError, EstimationError, EvaluationError

TAU = 1e-7  # relative sign tolerance
KAPPA = 3.0  # multiple of the derivative error estimate added to the tolerance
DEFAULT_K = 8
_RATIO = 1.6
_LEVELS = 5


def default_grid(points: int = 25, lo: float = 1e-2, hi: float = 1e2) -> np.ndarray:
    return np.geomspace(lo, hi, points)


@dataclass(frozen=True)
class FunctionHandle:
    """Vectorized evaluator on ``]q_min, q_max[`` with an optional exact derivative."""

    evaluator: Callable
    domain_hint: tuple = (0.0, math.inf)
    label: str = "f"
    derivative: Callable | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, q):
        scalar = np.ndim(q) == 0
        qa = np.atleast_1d(np.asarray(q, dtype=float))
        try:
            out = np.asarray(self.evaluator(qa), dtype=float)
            if out.shape != qa.shape:
                out = np.broadcast_to(out, qa.shape).astype(float)
        except (TypeError, ValueError):
            out = np.array([float(self.evaluator(float(x))) for x in qa])
        if not np.all(np.isfinite(out)):
            bad = qa[~np.isfinite(out)][0]
            raise EvaluationError(f"{self.label} is not finite at q={bad:.6g}")
        return float(out[0]) if scalar else out

    def in_domain(self, q) -> np.ndarray:
        lo, hi = self.domain_hint
        q = np.asarray(q)
        return (q > lo) & (q < hi)


def as_handle(f, label: str | None = None) -> FunctionHandle:
    """Wrap a cone representation, a callable or a handle as a :class:`FunctionHandle`."""
    if isinstance(f, FunctionHandle):
        return f
    if callable(f):
        return FunctionHandle(f, label=label or getattr(f, "__name__", type(f).__name__))
    raise TypeError(f"cannot evaluate {type(f).__name__}")


@dataclass
class ConeCertificate:
    """Outcome of a membership check.

    ``verdict`` is ``"PASS"``, ``"FAIL"`` or ``"INCONCLUSIVE"``; a FAIL
    carries ``witness = {"q", "n", "value"}`` with ``value`` the estimate of
    ``f^(n)(q)``.
    """

    verdict: str
    order_checked: int
    grid: list
    tolerance: float
    cone: str = ""
    label: str = ""
    witness: dict | None = None
    reason: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict == "FAIL" and self.witness is None:
            raise ValueError("a FAIL certificate needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_json(self) -> dict:
        d = {
            "verdict": self.verdict,
            "cone": self.cone,
            "label": self.label,
            "K": self.order_checked,
            "witness": self.witness,
            "grid": [float(g) for g in self.grid],
            "tolerance": self.tolerance,
            "semantics": "numeric semi-decision: no sign violation found to order K on the grid",
        }
        if self.reason:
            d["reason"] = self.reason
        if self.details:
            d["details"] = self.details
        return d


# ---------------------------------------------------------------------------
# derivative estimation
# ---------------------------------------------------------------------------

_EPS = 4 * np.finfo(float).eps  # relative rounding of one handle evaluation


@lru_cache(maxsize=None)
def _stencil_coeffs(n: int) -> np.ndarray:
    return np.array([(-1) ** (n - k) * comb(n, k) for k in range(n + 1)], dtype=float)


@lru_cache(maxsize=None)
def _stirling1(n: int) -> tuple:
    """Signed Stirling numbers of the first kind s(n, k), k = 0..n."""
    s = [[0] * (n + 1) for _ in range(n + 1)]
    s[0][0] = 1
    for i in range(1, n + 1):
        for k in range(1, i + 1):
            s[i][k] = s[i - 1][k - 1] - (i - 1) * s[i - 1][k]
    return tuple(s[n])


def _richardson(T: np.ndarray, noise: np.ndarray):
    """Richardson table in h^2 over levels; returns the best entry and its error per column.

    ``noise`` bounds the rounding error of each level; it is propagated
    through the extrapolation so that a flat (fully rounded) table is not
    mistaken for a converged one.
    """
    L = T.shape[0]
    R = [[T[i]] for i in range(L)]
    cands, errs = [], []
    for i in range(1, L):
        for k in range(1, i + 1):
            fac = _RATIO ** (2 * k)
            R[i].append(R[i][k - 1] + (R[i][k - 1] - R[i - 1][k - 1]) / (fac - 1))
            cands.append(R[i][k])
            amp = np.prod([(_RATIO ** (2 * j) + 1) / (_RATIO ** (2 * j) - 1) for j in range(1, k + 1)])
            rnd = amp * noise[i - k : i + 1].max(axis=0)
            errs.append(np.abs(R[i][k] - R[i][k - 1]) + np.abs(R[i][k] - R[i - 1][k - 1]) + rnd)
    cands, errs = np.array(cands), np.array(errs)
    j = np.argmin(errs, axis=0)
    cols = np.arange(T.shape[1])
    return cands[j, cols], errs[j, cols]


def derivative_table(f: FunctionHandle, q, K: int):
    """Estimates of ``f^(n)(q)`` for ``n = 0..K`` with error estimates.

    Returns ``(D, E)`` of shape ``(K+1, len(q))``.  All stencil points are
    evaluated in a single vectorized call.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    m = q.size
    levels = np.arange(_LEVELS)
    chunks, index = [q], {}
    pos = m
    for n in range(1, K + 1):
        h = (q * min(1.0, 1.6 / n))[None, :] / _RATIO ** levels[:, None]  # (L, m)
        j = np.arange(n + 1) - n / 2
        pts = q[None, None, :] + j[None, :, None] * h[:, None, :]  # (L, n+1, m)
        index[("q", n)] = (pos, pts.shape)
        chunks.append(pts.ravel())
        pos += pts.size
    for k in range(1, K + 1):
        h = 0.5 / _RATIO**levels
        j = np.arange(k + 1) - k / 2
        pts = q[None, None, :] * np.exp(j[None, :, None] * h[:, None, None])
        pts = np.broadcast_to(pts, (_LEVELS, k + 1, m))
        index[("s", k)] = (pos, pts.shape)
        chunks.append(pts.ravel())
        pos += pts.size
    allpts = np.concatenate(chunks)
    inside = f.in_domain(allpts)
    vals = np.full(allpts.shape, np.nan)
    if np.any(inside):
        vals[inside] = f(allpts[inside])
    f0 = vals[:m]
    if not np.all(np.isfinite(f0)):
        raise EvaluationError(f"{f.label}: grid point outside the domain")

    D = np.zeros((K + 1, m))
    E = np.zeros((K + 1, m))
    D[0] = f0
    g_val, g_err = {}, {}
    for k in range(1, K + 1):
        p0, shp = index[("s", k)]
        v = vals[p0 : p0 + int(np.prod(shp))].reshape(shp)
        h = 0.5 / _RATIO**levels
        c = _stencil_coeffs(k)
        T = np.einsum("j,ljm->lm", c, v) / (h**k)[:, None]
        noise = _EPS * np.einsum("j,ljm->lm", np.abs(c), np.abs(v)) / (h**k)[:, None]
        g_val[k], g_err[k] = _richardson(T, noise)
    for n in range(1, K + 1):
        p0, shp = index[("q", n)]
        v = vals[p0 : p0 + int(np.prod(shp))].reshape(shp)
        h = (q * min(1.0, 1.6 / n))[None, :] / _RATIO ** levels[:, None]
        c = _stencil_coeffs(n)
        T = np.einsum("j,ljm->lm", c, v) / h**n
        dq, eq = _richardson(T, _EPS * np.einsum("j,ljm->lm", np.abs(c), np.abs(v)) / h**n)
        st = _stirling1(n)
        dl = sum(st[k] * g_val[k] for k in range(1, n + 1)) / q**n
        el = sum(abs(st[k]) * g_err[k] for k in range(1, n + 1)) / q**n
        eq = np.where(np.isfinite(dq), eq, np.inf)
        el = np.where(np.isfinite(dl), el, np.inf)
        use_q = eq <= el
        D[n] = np.where(use_q, dq, dl)
        E[n] = np.where(use_q, eq, el)
        if not np.all(np.isfinite(D[n])):
            raise EvaluationError(f"{f.label}: derivative of order {n} could not be estimated")
    return D, E


def derivative(f, q: float, n: int):
    """Single estimate ``(value, error)`` of ``f^(n)(q)``."""
    D, E = derivative_table(as_handle(f), np.array([q]), n)
    return float(D[n, 0]), float(E[n, 0])


def numeric_derivative(f, label: str | None = None) -> FunctionHandle:
    """Handle for ``f'``: the exact derivative when the handle has one, else finite differences."""
    f = as_handle(f)
    if f.derivative is not None:
        return FunctionHandle(f.derivative, f.domain_hint, label or f"({f.label})'")

    def ev(q):
        D, _ = derivative_table(f, q, 1)
        return D[1]

    return FunctionHandle(ev, f.domain_hint, label or f"({f.label})'")


# ---------------------------------------------------------------------------
# sign checks
# ---------------------------------------------------------------------------

def _sign_cm(n):
    return (-1) ** n


def _sign_b2(n):
    return 1 if n == 0 else (-1) ** (n - 1)


def _sign_b3(n):
    return 1 if n <= 1 else (-1) ** n


_SIGNS = {"CM": _sign_cm, "B2": _sign_b2, "B3": _sign_b3}


def _violation(f0, D, E, q, n, sign, tau):
    """Normalized violation (positive means the sign condition fails)."""
    qn = q**n
    scale = np.maximum(np.maximum(np.abs(f0), np.abs(D) * qn), 1e-300)
    margin = sign * D * qn + tau * scale + KAPPA * E * qn
    return -margin / scale


def _validate(K, grid):
    if not 2 <= K <= 10:
        raise DomainError(f"derivative order K must be in 2..10, got {K}")
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 1 or np.any(g <= 0):
        raise DomainError("grid must be a nonempty list of positive points")
    return np.sort(g)


def _sign_check(f: FunctionHandle, K: int, grid, cone: str, tau: float = TAU) -> ConeCertificate:
    sign = _SIGNS[cone]
    D, E = derivative_table(f, grid, K)
    f0 = D[0]
    viol = np.array([_violation(f0, D[n], E[n], grid, n, sign(n), tau) for n in range(K + 1)])
    details = {
        "max_rel_error_estimate": float(
            np.max(E[1:] * grid ** np.arange(1, K + 1)[:, None] / np.maximum(np.abs(f0), 1e-300))
        )
        if K
        else 0.0
    }
    failing = viol > 0
    if not failing.any():
        return ConeCertificate("PASS", K, list(map(float, grid)), tau, cone, f.label, details=details)
    n = int(np.argmax(failing.any(axis=1)))
    w = _locate_witness(f, grid, viol[n], n, sign(n), tau, D[n])
    details["failing_orders"] = [int(k) for k in np.nonzero(failing.any(axis=1))[0]]
    return ConeCertificate("FAIL", K, list(map(float, grid)), tau, cone, f.label, witness=w, details=details)


def _point_violation(f, q, n, sign, tau):
    D, E = derivative_table(f, np.array([q]), n)
    v = _violation(D[0], D[n], E[n], np.array([q]), n, sign, tau)[0]
    return float(v), float(D[n, 0])


def _locate_witness(f, grid, viol_n, n, sign, tau, Dn) -> dict:
    """Witness at the lowest failing order.

    When the grid contains a pass/fail boundary for that order the
    sign change is bracketed by bisection (width <= 1e-3 q) and the
    violating end is reported; otherwise the most violating grid point.
    """
    fail = viol_n > 0
    bounds = [i for i in range(len(grid) - 1) if fail[i] != fail[i + 1]]
    if not bounds:
        i = int(np.argmax(viol_n))
        return {"q": float(grid[i]), "n": n, "value": float(Dn[i])}
    # the boundary next to the strongest violation
    def strength(i):
        return viol_n[i] if fail[i] else viol_n[i + 1]

    i = max(bounds, key=strength)
    lo, hi = float(grid[i]), float(grid[i + 1])
    lo_fails = bool(fail[i])
    val = float(Dn[i] if lo_fails else Dn[i + 1])
    for _ in range(60):
        if hi - lo <= 1e-3 * lo:
            break
        mid = math.sqrt(lo * hi)
        v, d = _point_violation(f, mid, n, sign, tau)
        if (v > 0) == lo_fails:
            lo = mid
            if lo_fails:
                val = d
        else:
            hi = mid
            if not lo_fails:
                val = d
    qw = lo if lo_fails else hi
    return {"q": qw, "n": n, "value": val}


def check_cm(f, K: int = DEFAULT_K, grid=None, tau: float = TAU) -> ConeCertificate:
    """PASS iff ``(-1)^n f^(n) >= -tol`` for ``n = 0..K`` on the grid."""
    f = as_handle(f)
    grid = _validate(K, default_grid() if grid is None else grid)
    return _sign_check(f, K, grid, "CM", tau)


def check_bernstein(f, K: int = DEFAULT_K, grid=None, tau: float = TAU) -> ConeCertificate:
    """PASS iff ``f >= 0`` and ``(-1)^(n-1) f^(n) >= -tol`` for ``n = 1..K``.

    ``K`` counts derivatives of ``f`` itself, so the derivative ``f'`` is
    checked for complete monotonicity to order ``K - 1``.
    """
    f = as_handle(f)
    grid = _validate(K, default_grid() if grid is None else grid)
    return _sign_check(f, K, grid, "B2", tau)


def limit_at_zero(f, kmax: int = 20):
    """Aitken-extrapolated limit of ``f(2^-k)``; returns ``(limit, last value)``."""
    f = as_handle(f)
    qs = 2.0 ** -np.arange(0, kmax + 1)
    qs = qs[f.in_domain(qs)]
    v = f(qs)
    x0, x1, x2 = v[-3], v[-2], v[-1]
    den = x2 - 2 * x1 + x0
    lim = x2 - (x2 - x1) ** 2 / den if den != 0 else x2
    if not np.isfinite(lim) or abs(lim - x2) > abs(x2 - x0) + abs(x2):
        lim = x2
    return float(lim), float(x2)


def check_branching(f, K: int = DEFAULT_K, grid=None, tau: float = TAU) -> ConeCertificate:
    """PASS iff ``f(0+) = 0``, ``f, f' >= 0`` and ``(-1)^n f^(n) >= -tol`` for ``n = 2..K``."""
    f = as_handle(f)
    grid = _validate(K, default_grid() if grid is None else grid)
    lim, last = limit_at_zero(f)
    tol0 = 1e-6 * max(1.0, abs(f(1.0)) if f.in_domain(1.0) else 1.0)
    if min(abs(lim), abs(last)) > tol0:
        return ConeCertificate(
            "FAIL", K, list(map(float, grid)), tau, "B3", f.label,
            witness={"q": 0.0, "n": 0, "value": lim}, reason="does not vanish at 0",
        )
    cert = _sign_check(f, K, grid, "B3", tau)
    cert.details["limit_at_zero"] = lim
    return cert


# ---------------------------------------------------------------------------
# drift extraction
# ---------------------------------------------------------------------------

def _aitken(x: np.ndarray) -> np.ndarray:
    d1 = x[1:-1] - x[:-2]
    d2 = x[2:] - 2 * x[1:-1] + x[:-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        y = x[2:] - (x[2:] - x[1:-1]) ** 2 / d2
    safe = np.abs(d2) > 1e-300
    return np.where(safe & np.isfinite(y), y, x[2:]) if d1.size else x


def drift_coefficient(f, kmin: int = 10, kmax: int = 30):
    """``lim f(q)/q`` as ``q -> inf``, extrapolated along ``q = 2^k``.

    Returns ``(b, error_estimate)``.  The convergence rate is unknown (a
    power such as ``q^(alpha-1)``), so repeated Aitken acceleration is used,
    which is exact for geometric decay in ``k``.
    """
    f = as_handle(f)
    qs = 2.0 ** np.arange(kmin, kmax + 1)
    r = f(qs) / qs
    seqs = [r]
    x = r
    while x.size >= 5:
        x = _aitken(x)
        seqs.append(x)
    best, err = float(r[-1]), abs(float(r[-1] - r[-2]))
    for s in seqs[1:]:
        e = abs(float(s[-1] - s[-2]))
        if e < err:
            best, err = float(s[-1]), e
    scale = max(1.0, abs(float(r[0])))
    if not np.isfinite(best) or err > 1e-3 * scale:
        raise EstimationError(f"drift of {f.label} did not converge (estimate {best:.3g} +/- {err:.2g})")
    err = max(err, 1e-12 * scale)
    if best < 0 and best > -10 * err - 1e-9 * scale:
        best = 0.0
    return best, err


# ---------------------------------------------------------------------------
# Gaver-Stehfest inversion and the Stieltjes test
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def stehfest_weights(N: int) -> np.ndarray:
    if N % 2:
        raise DomainError("Gaver-Stehfest order must be even")
    M = N // 2
    v = []
    for k in range(1, N + 1):
        s = 0
        for j in range((k + 1) // 2, min(k, M) + 1):
            s += j**M * factorial(2 * j) / (
                factorial(M - j) * factorial(j) * factorial(j - 1) * factorial(k - j) * factorial(2 * j - k)
            )
        v.append((-1) ** (k + M) * s)
    return np.array(v, dtype=float)


def gaver_stehfest(F: Callable, x, N: int = 12) -> np.ndarray:
    """Approximate inverse Laplace transform of ``F`` at ``x > 0`` from real samples."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = stehfest_weights(N)
    k = np.arange(1, N + 1)
    s = (k[None, :] * math.log(2.0)) / x[:, None]
    vals = np.asarray(F(s.ravel()), dtype=float).reshape(s.shape)
    return math.log(2.0) / x * (vals @ V)


def check_stieltjes_derivative(
    f, K: int = DEFAULT_K, grid=None, orders=(8, 10, 12), inversion_grid=None
) -> ConeCertificate:
    """Test whether ``f'`` is a Stieltjes transform.

    (i) ``f'`` must be completely monotone (checked through the derivatives
    of ``f`` of orders 1..K+1, or directly when an exact derivative is
    supplied); (ii) the density ``h`` with ``f' - b = L[h]`` recovered by
    Gaver-Stehfest inversion must itself be completely monotone on a coarse
    grid.  Orders disagreeing by more than 1e-2 relative give INCONCLUSIVE.
    """
    f = as_handle(f)
    grid = _validate(K, default_grid() if grid is None else grid)
    fp = numeric_derivative(f)
    if f.derivative is not None:
        c1 = check_cm(fp, K, grid)
    else:
        c1 = _sign_check(f, min(K + 1, 10), grid, "B2")
        c1.cone = "CM(f')"
    details = {"derivative_certificate": c1.to_json()}
    if not c1.passed:
        w = dict(c1.witness)
        if f.derivative is None:
            w["n"] = w["n"] - 1  # order of the derivative of f'
        return ConeCertificate("FAIL", K, list(map(float, grid)), TAU, "Stieltjes", f.label,
                               witness=w, reason="f' not completely monotone", details=details)
    b, _ = drift_coefficient(f)  # f'(inf) equals the drift of f
    xs = np.geomspace(0.1, 10.0, 9) if inversion_grid is None else np.asarray(inversion_grid, float)

    def F(s):
        return fp(s) - b

    inv = {N: gaver_stehfest(F, xs, N) for N in orders}
    ref = inv[orders[-1]]
    hmax = max(float(np.max(np.abs(ref))), 1e-300)
    disagreement = max(float(np.max(np.abs(inv[N] - ref))) for N in orders[:-1]) / hmax
    details.update({"inversion_disagreement": disagreement, "inversion_grid": xs.tolist(), "drift": b})
    if disagreement > 1e-2:
        return ConeCertificate("INCONCLUSIVE", K, list(map(float, grid)), TAU, "Stieltjes", f.label,
                               reason="inversion", details=details)
    N = orders[-1]
    h = FunctionHandle(lambda x: gaver_stehfest(F, x, N), (0.0, math.inf), f"L^-1[{f.label}']")
    tau_h = max(TAU, 10.0 * disagreement)
    c2 = _sign_check(h, 2, xs, "CM", tau_h)
    details["density_certificate"] = c2.to_json()
    if not c2.passed:
        return ConeCertificate("FAIL", K, list(map(float, grid)), TAU, "Stieltjes", f.label,
                               witness=c2.witness, reason="inverted density not completely monotone",
                               details=details)
    return ConeCertificate("PASS", K, list(map(float, grid)), TAU, "Stieltjes", f.label, details=details)
