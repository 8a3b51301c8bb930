"""Composition, subordination, internality and inversion of cone members."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import measures as M
from . import stable as S
from .checker import (
    DEFAULT_K,
    ConeCertificate,
    FunctionHandle,
    as_handle,
    check_bernstein,
    check_branching,
    check_cm,
    check_stieltjes_derivative,
    default_grid,
    derivative,
    drift_coefficient,
    numeric_derivative,
)
from .cones import (
    BernsteinTriple,
    BranchingTriple,
    CompletelyMonotoneRep,
    derivative_map_B2_to_B1,
    derivative_map_B3_to_B2,
    eval_bernstein,
)
from .errors import CapabilityError, DomainError, EvaluationError, PreconditionError
from .measures import Atom, PowerExp, RadonMeasure, TabulatedDensity

MC_FALLBACK = "conecalc.simulate.subordination_mc_check"


def _label(f) -> str:
    if isinstance(f, FunctionHandle):
        return f.label
    if isinstance(f, (BernsteinTriple, BranchingTriple, CompletelyMonotoneRep)):
        return f"{f.cone}{type(f).__name__}"
    return getattr(f, "__name__", "f")


def handle(f, label: str | None = None) -> FunctionHandle:
    """Handle for a triple (with its exact derivative attached) or any callable."""
    if isinstance(f, FunctionHandle):
        return f
    if isinstance(f, BranchingTriple):
        d = derivative_map_B3_to_B2(f)
        return FunctionHandle(f, label=label or "Psi", derivative=d, meta={"triple": f})
    if isinstance(f, BernsteinTriple):
        d = derivative_map_B2_to_B1(f)
        return FunctionHandle(f, label=label or "Phi", derivative=d, meta={"triple": f})
    if isinstance(f, CompletelyMonotoneRep):
        return FunctionHandle(f, label=label or "f", meta={"triple": f})
    return as_handle(f, label)


def compose(psi, phi, label: str | None = None) -> FunctionHandle:
    """``q -> psi(phi(q))`` with the factors recorded in ``meta``."""
    hp, hf = handle(psi), handle(phi)

    def ev(q):
        inner = hf(q)
        if np.any(~hp.in_domain(inner)):
            raise DomainError("inner values leave the domain of the outer function")
        return hp(inner)

    deriv = None
    if hp.derivative is not None and hf.derivative is not None:
        dp, df = hp.derivative, hf.derivative
        deriv = lambda q: np.asarray(dp(hf(q))) * np.asarray(df(q))  # noqa: E731
    return FunctionHandle(
        ev,
        hf.domain_hint,
        label or f"{hp.label}o{hf.label}",
        derivative=deriv,
        meta={"factors": (hp.label, hf.label), "method": "closed-form"},
    )


def compose_with_e_alpha_triple(psi: BranchingTriple, alpha: float, **grid) -> BernsteinTriple:
    """Bernstein triple of ``psi o e_alpha`` for ``alpha <= 1/2``."""
    if alpha > 0.5:
        raise PreconditionError(f"alpha={alpha:g} > 1/2: psi o e_alpha need not be Bernstein")
    mu = S.compose_levy_measure(psi, alpha, **grid)
    drift = psi.b if alpha == 0.5 else 0.0
    return BernsteinTriple(0.0, drift, mu)


# ---------------------------------------------------------------------------
# Bochner subordination
# ---------------------------------------------------------------------------

def _x_grid():
    return M.log_grid(1e-6, 1e6, 512)


def _tau_rule(alpha: float):
    # rho negligible below u_min, where A0 u^(-alpha/(1-alpha)) exceeds 745
    beta = alpha / (1 - alpha)
    A0 = alpha**beta * (1 - alpha)
    u_min = (745.0 / A0) ** (-1.0 / beta)
    tau_lo, tau_hi = 1e-12, u_min ** (-alpha)
    t, w = np.polynomial.legendre.leggauss(8)
    nP = int(math.ceil((math.log(tau_hi) - math.log(tau_lo)) / 0.25))
    edges = np.linspace(math.log(tau_lo), math.log(tau_hi), nP + 1)
    d = np.diff(edges)
    s = (edges[:-1, None] + (t[None, :] + 1) * 0.5 * d[:, None]).ravel()
    ws = (w[None, :] * 0.5 * d[:, None]).ravel()
    tau = np.exp(s)
    u = tau ** (-1.0 / alpha)
    phi0 = tau ** (-1.0 / alpha) * S.rho(alpha, u)
    return tau, ws * tau * phi0, tau_lo


def _subordinate_stable(a1: float, k: float, alpha: float, outer: BernsteinTriple) -> RadonMeasure:
    x = _x_grid()
    lam = np.zeros_like(x)
    L2 = outer.levy
    for at in L2.atoms:
        lam += at.m * math.exp(-a1 * at.x) * S.stable_density(alpha, k * at.x, x)
    if L2.families:
        tau, om, tau_lo = _tau_rule(alpha)
        c1 = S.levy_constant(alpha)
        xa = x**alpha / k
        for f in L2.families:
            if f.scale == 0:
                continue
            t = xa[:, None] * tau[None, :]
            dens = f.density(t) * np.exp(-a1 * t)
            lam += (dens @ om) * xa / x
            e = f.power + 2.0
            lam += c1 * f.scale * xa ** (f.power + 1) * tau_lo**e / e / x
    for tab in L2.tables:
        tn, om = tab.rule
        P = S.stable_density(alpha, k * tn[None, :], x[:, None])
        lam += P @ (om * np.exp(-a1 * tn))
    tabs = ()
    if np.any(lam > 0):
        tabs = (M.tabulate(lambda g: lam, x),)
    return RadonMeasure((), (), tabs)


def _push_forward(m: RadonMeasure, a1: float, b1: float) -> RadonMeasure:
    """Image of ``exp(-a1 t) m(dt)`` under ``t -> b1 t``."""
    atoms = tuple(Atom(b1 * a.x, a.m * math.exp(-a1 * a.x)) for a in m.atoms)
    fams = tuple(
        PowerExp(f.power, (f.rate + a1) / b1, f.scale * b1 ** (-f.power - 1.0), f.upper * b1) for f in m.families
    )
    tabs = []
    for t in m.tables:
        g = np.asarray(t.grid)
        v = np.asarray(t.values) * np.exp(-a1 * g) / b1
        tail = t.tail_exponent if a1 == 0 else None
        tabs.append(TabulatedDensity(tuple(g * b1), tuple(v), tail, t.head_exponent))
    return RadonMeasure(atoms, fams, tuple(tabs))


def _subordinate_poisson(a1: float, x0: float, lam: float, outer: BernsteinTriple) -> RadonMeasure:
    L2 = outer.levy
    if L2.tables or any(f.upper != math.inf for f in L2.families):
        raise CapabilityError(f"compound Poisson inner needs closed-form outer families; use {MC_FALLBACK}")
    K = 2000
    k = np.arange(1, K + 1, dtype=float)
    w = np.zeros(K)
    w[0] += outer.b * lam
    for a in L2.atoms:
        z = lam * a.x
        w += a.m * np.exp(-(a1 + lam) * a.x + k * math.log(z) - special.gammaln(k + 1)) if z > 0 else 0.0
    tabs = []
    for f in L2.families:
        if f.scale == 0:
            continue

        def logw(kk, f=f):
            e = kk + f.power + 1.0
            return (math.log(f.scale) + kk * math.log(lam) + special.gammaln(e) - special.gammaln(kk + 1)
                    - e * math.log(a1 + lam + f.rate))

        w += np.exp(logw(k))
        if a1 + f.rate == 0:
            # weights decay like k^power: continue the lattice beyond K by its
            # midpoint density, exact up to O(K^-2) relative on the remainder
            kk = np.geomspace(K + 0.5, 1e12, 96)
            tabs.append(TabulatedDensity(tuple(x0 * kk), tuple(np.exp(logw(kk)) / x0), f.power, None))
    keep = w > 1e-300
    atoms = tuple(Atom(x0 * kk, float(ww)) for kk, ww in zip(k[keep], w[keep]))
    return RadonMeasure(atoms, (), tuple(tabs))


def bochner_subordinate(inner: BernsteinTriple, outer: BernsteinTriple) -> BernsteinTriple:
    """Triple of ``outer o inner``.

    Killing ``outer(a_inner)``, drift ``b_outer b_inner`` and Levy measure
    ``b_outer Lambda_inner + int P(tau_t in dx, alive) Lambda_outer(dt)``,
    the mixture computed for stable, pure-drift and single-atom compound
    Poisson inners.  Other inners raise :class:`CapabilityError`; the Monte
    Carlo check in :mod:`conecalc.simulate` is the fallback there.
    """
    a3 = float(eval_bernstein(outer, inner.a)) if inner.a > 0 else outer.a
    b3 = outer.b * inner.b
    own = inner.levy.scaled(outer.b) if outer.b > 0 else RadonMeasure()
    st = S.stable_scale(inner)
    if inner.levy.is_zero:
        if inner.b == 0:
            raise DomainError("inner Bernstein function is constant: subordination degenerates")
        mix = _push_forward(outer.levy, inner.a / inner.b, inner.b)
        return BernsteinTriple(a3, b3, mix.pruned())
    if st is not None:
        a1, k, alpha = st
        mix = _subordinate_stable(a1, k, alpha, outer)
        return BernsteinTriple(a3, b3, (own + mix).pruned())
    mu = inner.levy
    if inner.b == 0 and len(mu.atoms) == 1 and not mu.families and not mu.tables:
        at = mu.atoms[0]
        mix = _subordinate_poisson(inner.a, at.x, at.m, outer)
        return BernsteinTriple(a3, b3, mix)
    raise CapabilityError(f"inner marginal densities not available analytically; use {MC_FALLBACK}")


# ---------------------------------------------------------------------------
# internality
# ---------------------------------------------------------------------------

@dataclass
class InternalityCertificate:
    verdict: str  # INTERNAL | NOT_INTERNAL
    order_checked: int
    drift: float
    drift_error: float
    square_certificate: ConeCertificate | None = None
    witness: dict | None = None
    provenance: str = "numeric"

    @property
    def internal(self) -> bool:
        return self.verdict == "INTERNAL"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "K": self.order_checked,
            "drift": {"value": self.drift, "error": self.drift_error},
            "witness": self.witness,
            "provenance": self.provenance,
            "square_certificate": None if self.square_certificate is None else self.square_certificate.to_json(),
        }


def is_internal(phi, K: int = DEFAULT_K, grid=None) -> InternalityCertificate:
    """INTERNAL iff the drift vanishes and ``phi**2`` passes the Bernstein check."""
    h = handle(phi)
    grid = default_grid() if grid is None else np.asarray(grid, float)
    if isinstance(phi, BernsteinTriple):
        b, berr = phi.b, 0.0
    else:
        b, berr = drift_coefficient(h)
    thr = 1e-6 * max(1.0, abs(float(h(1.0))))
    if b > thr:
        return InternalityCertificate("NOT_INTERNAL", K, b, berr, witness={"drift": b, "threshold": thr})
    sq = FunctionHandle(lambda q: h(q) ** 2, h.domain_hint, f"({h.label})^2")
    cert = check_bernstein(sq, K, grid)
    verdict = "INTERNAL" if cert.passed else "NOT_INTERNAL"
    return InternalityCertificate(verdict, K, b, berr, cert, None if cert.passed else cert.witness)


@dataclass
class InternalConstruction:
    """Internal function ``a + c' sqrt(kappa)`` built from a subordinator."""

    triple: BernsteinTriple
    closed_form: FunctionHandle
    c_prime: float
    infinite_mean: bool
    provenance: str = "constructor"


def internal_from_subordinator(a: float, c: float, kappa: BernsteinTriple) -> InternalConstruction:
    """Levy measure ``c int t^(-3/2) P(sigma_t in dx) dt`` with killing ``a``.

    ``c`` is a free positive constant; the closed form uses ``c' = 2 c sqrt(pi)``.
    """
    if c <= 0:
        raise DomainError("c must be positive")
    if a < 0:
        raise DomainError("a must be nonnegative")
    outer = BernsteinTriple(0.0, 0.0, RadonMeasure.family(M.stable_tail(0.5, c)))
    sub = bochner_subordinate(kappa, outer)
    triple = BernsteinTriple(sub.a + a, sub.b, sub.levy)
    cp = 2.0 * c * math.sqrt(math.pi)
    kh = handle(kappa)
    closed = FunctionHandle(lambda q: a + cp * np.sqrt(kh(q)), label="a+c'sqrt(kappa)")
    # E sigma_t = t kappa'(0) without killing, and int t^(-1/2) dt diverges
    infinite_mean = (not triple.levy.is_zero) and kappa.a == 0
    return InternalConstruction(triple, closed, cp, infinite_mean)


# ---------------------------------------------------------------------------
# inversion and derived functions
# ---------------------------------------------------------------------------

def _psi_and_prime(psi):
    h = handle(psi)
    if isinstance(psi, BranchingTriple):
        d = derivative_map_B3_to_B2(psi)
        return h, FunctionHandle(d, label="Psi'", derivative=derivative_map_B2_to_B1(d))
    return h, numeric_derivative(h)


def invert_branching(psi, label: str = "Psi^-1") -> FunctionHandle:
    """Inverse ``p -> q`` with ``psi(q) = p``, for nonzero ``psi``.

    Bracketing by doubling, then Newton from the right end of the bracket
    (monotone for convex increasing functions) with bisection whenever an
    iterate leaves the bracket.
    """
    if isinstance(psi, BranchingTriple) and psi.is_zero:
        raise DomainError("the zero mechanism has no inverse")
    h, dh = _psi_and_prime(psi)

    def inv(p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(p < 0):
            raise DomainError("p outside the range of Psi")
        out = np.zeros_like(p)
        pos = p > 0
        if not pos.any():
            return out
        pp = p[pos]
        lo = np.zeros_like(pp)
        hi = np.ones_like(pp)
        for _ in range(2100):
            v = h(hi)
            low = v < pp
            if not low.any():
                break
            lo[low] = hi[low]
            hi[low] *= 2.0
        else:
            raise DomainError("p outside the range of Psi")
        q = hi.copy()
        active = np.ones(pp.shape, dtype=bool)
        for _ in range(200):
            qa = q[active]
            f = h(qa) - pp[active]
            d = dh(qa)
            lo_a, hi_a = lo[active], hi[active]
            lo_a = np.where(f < 0, qa, lo_a)
            hi_a = np.where(f > 0, qa, hi_a)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0, f / d, np.inf)
            nq = qa - step
            bad = ~((nq > lo_a) & (nq < hi_a)) | ~np.isfinite(nq)
            nq = np.where(bad, 0.5 * (lo_a + hi_a), nq)
            conv = (np.abs(nq - qa) <= 4e-16 * qa) | (f == 0) | (hi_a - lo_a <= 4e-16 * hi_a)
            lo[active], hi[active] = lo_a, hi_a
            q[active] = np.where(f == 0, qa, nq)
            idx = np.nonzero(active)[0]
            active[idx[conv]] = False
            if not active.any():
                break
        out[pos] = q
        return out

    return FunctionHandle(inv, label=label, derivative=lambda p: 1.0 / dh(inv(p)), meta={"inverse_of": h.label})


def reciprocal_cm(f, label: str | None = None) -> FunctionHandle:
    """``q -> 1/f(q)``; raises on a zero of ``f``."""
    h = handle(f)

    def ev(q):
        v = h(q)
        if np.any(v == 0):
            raise EvaluationError(f"pole: {h.label} vanishes at q={np.asarray(q)[v == 0][0]:.6g}")
        return 1.0 / v

    return FunctionHandle(ev, h.domain_hint, label or f"1/{h.label}")


def ladder_functions(psi) -> dict:
    """``1/Phi'``, ``Id/Phi`` and ``1/(Phi Phi')`` for ``Phi = psi^-1``.

    ``1/Phi'`` is ``Psi' o Phi`` and ``1/(Phi Phi')`` is ``(Psi'/Id) o Phi``,
    so no numeric differentiation of the inverse is needed.
    """
    h, dh = _psi_and_prime(psi)
    phi = invert_branching(psi)
    d0 = float(dh(np.array([1e-300]))[0]) if isinstance(psi, BranchingTriple) else None

    def inv_phi_prime(q):
        return dh(phi(q))

    def id_over_phi(q):
        q = np.atleast_1d(np.asarray(q, float))
        v = phi(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = q / v
        if np.any(v == 0):
            lim = d0 if d0 is not None else float(dh(np.array([1e-12]))[0])
            r = np.where(v == 0, lim, r)
        return r

    def one_over(q):
        v = phi(q)
        return dh(v) / v

    return {
        "inv_phi_prime": FunctionHandle(inv_phi_prime, label="1/Phi'"),
        "id_over_phi": FunctionHandle(id_over_phi, label="Id/Phi"),
        "one_over_phi_phiprime": FunctionHandle(one_over, label="1/(Phi Phi')"),
        "phi": phi,
    }


@dataclass
class Corollary1Report:
    verdict: str
    internality: InternalityCertificate
    identity_max_rel_error: float
    identity_grid: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "internality": self.internality.to_json(),
            "identity_max_rel_error": self.identity_max_rel_error,
            "identity_grid": self.identity_grid,
        }


def _second_derivative(psi):
    if isinstance(psi, BranchingTriple):
        d1 = derivative_map_B3_to_B2(psi)
        return derivative_map_B2_to_B1(d1)
    h = handle(psi)
    return FunctionHandle(lambda q: np.array([derivative(h, float(x), 2)[0] for x in np.atleast_1d(q)]))


def corollary1_check(psi, K: int = DEFAULT_K, grid=None, identity_grid=None, rel: float = 1e-6) -> Corollary1Report:
    """Internality of ``1/Phi'`` plus ``d/dq [1/(2 Phi'^2)] = Psi'' o Phi``."""
    lad = ladder_functions(psi)
    inv_pp, phi = lad["inv_phi_prime"], lad["phi"]
    cert = is_internal(inv_pp, K, grid)
    qs = np.geomspace(0.1, 10.0, 13) if identity_grid is None else np.asarray(identity_grid, float)
    g = FunctionHandle(lambda q: 0.5 * inv_pp(q) ** 2, label="1/(2 Phi'^2)")
    lhs = np.array([derivative(g, float(q), 1)[0] for q in qs])
    rhs = np.asarray(_second_derivative(psi)(phi(qs)), float)
    err = float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)))
    ok = cert.internal and err <= rel
    return Corollary1Report("INTERNAL" if ok else "NOT_INTERNAL", cert, err, qs.tolist())


def stieltjes_compose(f, g, K: int = DEFAULT_K, grid=None):
    """``q -> f(1/g(q))`` with its CM certificate, gated on the preconditions.

    ``f`` must be Bernstein with a Stieltjes-transform derivative and ``g``
    Bernstein and positive; a failing precondition raises
    :class:`PreconditionError` carrying the certificate.
    """
    hf, hg = handle(f, "f"), handle(g, "g")
    grid = default_grid() if grid is None else np.asarray(grid, float)
    for cert, what in (
        (check_bernstein(hf, K, grid), "f is not Bernstein"),
        (check_stieltjes_derivative(hf, K, grid), "f' is not a Stieltjes transform"),
        (check_bernstein(hg, K, grid), "g is not Bernstein"),
    ):
        if not cert.passed:
            raise PreconditionError(f"{what} ({cert.verdict}{': ' + cert.reason if cert.reason else ''})", cert)
    if np.any(hg(grid) <= 0):
        raise PreconditionError("g must be positive")
    out = FunctionHandle(lambda q: hf(1.0 / hg(q)), label=f"{hf.label}o(1/{hg.label})")
    return out, check_cm(out, K, grid)


@dataclass
class IterationResult:
    n: int
    b3_product: FunctionHandle
    b2_product: FunctionHandle
    b3_certificate: ConeCertificate
    b2_certificate: ConeCertificate


def iterate_remark(psi, n: int, K: int = DEFAULT_K, grid=None) -> IterationResult:
    """``e_(2-2^(1-n)) x (Psi o e_(2^-n))`` in B3 and ``e_(1-2^-n) x (Psi o e_(2^(-n-1)))`` in B2."""
    if not 0 <= n <= 8:
        raise DomainError("iteration depth n must be in 0..8")
    h = handle(psi)
    p1, i1 = 2.0 - 2.0 ** (1 - n), 2.0**-n
    p2, i2 = 1.0 - 2.0**-n, 2.0 ** (-n - 1)
    f1 = FunctionHandle(lambda q: q**p1 * h(q**i1), label=f"e_{p1:g} x Psi o e_{i1:g}")
    f2 = FunctionHandle(lambda q: q**p2 * h(q**i2), label=f"e_{p2:g} x Psi o e_{i2:g}")
    return IterationResult(n, f1, f2, check_branching(f1, K, grid), check_bernstein(f2, K, grid))
