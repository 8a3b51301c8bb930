"""Monte Carlo oracle for subordinators.

Draws come from counter-based Philox streams: sample chunk ``j`` always
uses the stream ``Philox(seed).jumped(j)``, so a batch is bit-identical for
a given seed whatever the number of worker threads.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import measures as M
from . import stable as S
from .cones import BernsteinTriple, eval_bernstein
from .errors import DomainError, RepresentationError
from .measures import RadonMeasure

CHUNK = 1 << 14
KILLED = "KILLED"


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("CONECALC_MAX_THREADS", "1")))
    except ValueError:
        return 1


def _stream(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)).jumped(chunk))


def _chunked(n: int, seed: int, work) -> np.ndarray:
    """Run ``work(rng, size, chunk_index)`` over fixed-size chunks and concatenate in order."""
    sizes = [min(CHUNK, n - i) for i in range(0, n, CHUNK)]
    jobs = [(j, s) for j, s in enumerate(sizes)]
    if max_threads() > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_threads()) as ex:
            parts = list(ex.map(lambda js: work(_stream(seed, js[0]), js[1], js[0]), jobs))
    else:
        parts = [work(_stream(seed, j), s, j) for j, s in jobs]
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class SampleBatch:
    """Draws of ``sigma_t``; killed paths are stored as ``inf``."""

    values: np.ndarray
    t: float
    seed: int
    scheme: str
    params: dict = field(default_factory=dict)
    bias_bound: float = 0.0  # per unit q, from small-jump truncation

    @property
    def killed(self) -> np.ndarray:
        return np.isinf(self.values)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def to_csv(self, path: str) -> None:
        """Write one value (or KILLED) per row plus a JSON sidecar ``path + '.json'``."""
        with open(path, "w") as fh:
            fh.write("value\n")
            for v in self.values:
                fh.write(f"{KILLED}\n" if np.isinf(v) else f"{float(v)!r}\n")
        with open(path + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "scheme": self.scheme,
            "t": self.t,
            "n": self.n,
            "params": self.params,
            "generator": "numpy Philox, chunk j uses Philox(seed).jumped(j)",
            "chunk": CHUNK,
        }


def kanter(alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Exact draws with ``E exp(-q S) = exp(-q**alpha)`` (Kanter's transform)."""
    U = rng.uniform(0.0, math.pi, size)
    E = rng.standard_exponential(size)
    logA = S._log_zolotarev_A(alpha, U)
    return np.exp((1 - alpha) / alpha * (logA - np.log(E)))


def sample_stable(alpha: float, x: float, n: int, seed: int) -> SampleBatch:
    """``n`` draws of ``sigma_x``, ``E exp(-q sigma_x) = exp(-x q**alpha)``."""
    alpha = S.check_alpha(alpha)
    if x <= 0 or n < 0:
        raise DomainError("need x > 0 and n >= 0")
    vals = _chunked(n, seed, lambda rng, s, j: x ** (1 / alpha) * kanter(alpha, rng, s))
    return SampleBatch(vals, x, seed, "exact_stable", {"alpha": alpha, "x": x})


# ---------------------------------------------------------------------------
# compound Poisson sampling of a Levy measure above a cutoff
# ---------------------------------------------------------------------------

class _JumpLaw:
    """Law of jumps of ``Lambda`` restricted to ``]eps, inf[``: a mixture sampled by inverse CDF."""

    def __init__(self, mu: RadonMeasure, eps: float):
        self.parts = []  # (mass, sampler(rng, size))
        for a in mu.atoms:
            if a.x > eps and a.m > 0:
                self.parts.append((a.m, lambda rng, s, x=a.x: np.full(s, x)))
        for f in mu.families:
            if f.scale > 0:
                self.parts.append(self._family(f, eps))
        for t in mu.tables:
            self.parts.append(self._tabulated(RadonMeasure(tables=(t,)), eps, t))
        self.parts = [p for p in self.parts if p[0] > 0]
        self.rate = float(sum(p[0] for p in self.parts))
        if not math.isfinite(self.rate):
            raise RepresentationError("Lambda((eps, inf)) is not finite")

    @staticmethod
    def _family(f: M.PowerExp, eps: float):
        p, r, s, u = f.power, f.rate, f.scale, f.upper
        if u <= eps:
            return (0.0, None)
        if r == 0 and u == math.inf and p < -1:
            a = -(p + 1)
            mass = s * eps ** (-a) / a
            return (mass, lambda rng, n: eps * rng.uniform(size=n) ** (-1.0 / a))
        if p == 0 and u == math.inf and r > 0:
            mass = s * math.exp(-r * eps) / r
            return (mass, lambda rng, n: eps + rng.standard_exponential(n) / r)
        return _JumpLaw._tabulated(RadonMeasure.family(f), eps, f)

    @staticmethod
    def _tabulated(mu: RadonMeasure, eps: float, comp):
        hi = getattr(comp, "upper", math.inf)
        if isinstance(comp, M.TabulatedDensity):
            hi = comp.grid[-1] * math.exp(M._EXTRAP_SPAN) if comp.tail_exponent is not None else comp.grid[-1]
        elif comp.rate > 0:
            hi = min(hi, eps + (60.0 + max(comp.power, 0) * 4) / comp.rate)
        hi = min(hi, 1e12)
        grid = np.geomspace(eps, hi, 4097)
        dens = mu.density(grid)
        s = np.log(grid)
        # cumulative mass by the trapezoid rule in log x
        inc = 0.5 * (dens[1:] * grid[1:] + dens[:-1] * grid[:-1]) * np.diff(s)
        cdf = np.concatenate([[0.0], np.cumsum(inc)])
        mass = float(cdf[-1])
        if mass <= 0:
            return (0.0, None)
        cdf /= mass
        return (mass, lambda rng, n: np.exp(np.interp(rng.uniform(size=n), cdf, s)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0 or not self.parts:
            return np.zeros(size)
        w = np.array([p[0] for p in self.parts]) / self.rate
        which = rng.choice(len(self.parts), size=size, p=w)
        out = np.empty(size)
        for i, (_, sampler) in enumerate(self.parts):
            sel = which == i
            k = int(sel.sum())
            if k:
                out[sel] = sampler(rng, k)
        return out


def _small_jump_mean(mu: RadonMeasure, eps: float) -> float:
    """``int_0^eps x Lambda(dx)``."""
    total = sum(a.x * a.m for a in mu.atoms if a.x <= eps)
    for f in mu.families:
        if f.scale == 0:
            continue
        top = min(eps, f.upper)
        a = f.power + 2
        if f.rate == 0:
            total += f.scale * top**a / a
        else:
            total += M._quad_positive(lambda x, f=f: x * float(f.density(np.array([x]))[0]), top)
    for t in mu.tables:
        x, om = t.rule
        total += float(np.dot(om, np.where(x <= eps, x, 0.0)))
    return float(total)


def _sample_at_times(phi: BernsteinTriple, times: np.ndarray, rng, law: _JumpLaw, comp: float) -> np.ndarray:
    """One draw of ``sigma_t`` for each entry of ``times`` (inf marks killing or infinite time)."""
    size = times.size
    alive = np.isfinite(times)
    tt = np.where(alive, times, 0.0)
    out = (phi.b + comp) * tt
    if phi.a > 0:
        kill = rng.uniform(size=size) > np.exp(-phi.a * tt)
    else:
        kill = np.zeros(size, dtype=bool)
    if law.rate > 0:
        counts = rng.poisson(law.rate * tt)
        total = int(counts.sum())
        jumps = law.sample(rng, total)
        owner = np.repeat(np.arange(size), counts)
        out = out + np.bincount(owner, weights=jumps, minlength=size)
    out[kill | ~alive] = np.inf
    return out


def sample_subordinator(phi: BernsteinTriple, t: float, n: int, seed: int, eps: float = 1e-3) -> SampleBatch:
    """Drift, compound Poisson jumps above ``eps``, mean-matched small jumps and killing."""
    if not 0 < eps <= 1e-2:
        raise DomainError("small-jump cutoff must satisfy 0 < eps <= 1e-2")
    if t < 0:
        raise DomainError("t must be nonnegative")
    law = _JumpLaw(phi.levy, eps)
    comp = _small_jump_mean(phi.levy, eps)

    def work(rng, s, j):
        return _sample_at_times(phi, np.full(s, float(t)), rng, law, comp)

    vals = _chunked(n, seed, work)
    return SampleBatch(
        vals, t, seed, f"compound_poisson({eps:g})",
        {"a": phi.a, "b": phi.b, "eps": eps, "jump_rate": law.rate, "small_jump_mean": comp},
        bias_bound=t * comp,
    )


def empirical_laplace(batch: SampleBatch, q: float):
    """``(mean of exp(-q value), standard error)``; killed draws contribute 0."""
    if batch.n == 0:
        raise DomainError("empty batch")
    if q <= 0:
        raise DomainError("q must be positive")
    e = np.exp(-q * batch.values)
    if e.min() == e.max():
        return float(e[0]), 0.0
    est = float(e.mean())
    se = float(e.std(ddof=1) / math.sqrt(batch.n)) if batch.n > 1 else 0.0
    return est, se


@dataclass
class MCReport:
    verdict: str
    rows: list
    seed: int
    n: int
    t: float

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "seed": self.seed, "n": self.n, "t": self.t, "rows": self.rows}


def laplace_check(batch: SampleBatch, exponent, q_grid, bias_per_q: float = 0.0) -> MCReport:
    """Compare ``empirical_laplace`` with ``exp(-t exponent(q))`` within 4 standard errors plus bias."""
    rows, ok = [], True
    for q in q_grid:
        est, se = empirical_laplace(batch, float(q))
        exact = math.exp(-batch.t * float(exponent(float(q))))
        bias = bias_per_q * float(q)
        passed = abs(est - exact) <= 4 * se + bias + 1e-15
        ok &= passed
        rows.append({"q": float(q), "empirical": est, "se": se, "analytic": exact, "bias_bound": bias,
                     "pass": bool(passed)})
    return MCReport("PASS" if ok else "FAIL", rows, batch.seed, batch.n, batch.t)


def subordination_mc_check(
    inner: BernsteinTriple, outer: BernsteinTriple, t: float, n: int, q_grid, seed: int, eps: float = 1e-3
) -> MCReport:
    """Sample ``inner`` at the random times given by ``outer`` and compare with ``outer o inner``."""
    outer_law = _JumpLaw(outer.levy, eps)
    outer_comp = _small_jump_mean(outer.levy, eps)
    st = S.stable_scale(inner)
    inner_law = None if st is not None else _JumpLaw(inner.levy, eps)
    inner_comp = 0.0 if st is not None else _small_jump_mean(inner.levy, eps)

    def work(rng, s, j):
        T = _sample_at_times(outer, np.full(s, float(t)), rng, outer_law, outer_comp)
        if st is not None:
            a1, k, alpha = st
            alive = np.isfinite(T)
            tt = np.where(alive, T, 0.0)
            v = (k * tt) ** (1 / alpha) * kanter(alpha, rng, s)
            if a1 > 0:
                v[rng.uniform(size=s) > np.exp(-a1 * tt)] = np.inf
            v[~alive] = np.inf
            return v
        return _sample_at_times(inner, T, rng, inner_law, inner_comp)

    vals = _chunked(n, seed, work)
    batch = SampleBatch(vals, t, seed, "subordinated", {"eps": eps})
    def exponent(q):
        return float(eval_bernstein(outer, float(eval_bernstein(inner, q))))

    rows, ok = [], True
    for q in q_grid:
        est, se = empirical_laplace(batch, float(q))
        exact = math.exp(-t * exponent(float(q)))
        # an exponent error d at a random time T costs at most E(1 - exp(-T d))
        inner_bias = -math.expm1(-t * float(eval_bernstein(outer, float(q) * inner_comp))) if inner_comp else 0.0
        bias = t * outer_comp * float(eval_bernstein(inner, float(q))) + inner_bias
        passed = abs(est - exact) <= 4 * se + bias + 1e-15
        ok &= passed
        rows.append({"q": float(q), "empirical": est, "se": se, "analytic": exact, "bias_bound": bias,
                     "pass": bool(passed)})
    return MCReport("PASS" if ok else "FAIL", rows, seed, n, t)
