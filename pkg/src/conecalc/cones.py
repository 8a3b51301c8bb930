"""The three function cones as typed representations.

``CompletelyMonotoneRep``  f(q) = c + int exp(-q x) mu(dx)
``BernsteinTriple``        f(q) = a + b q + int (1 - exp(-q x)) Lambda(dx)
``BranchingTriple``        f(q) = a q + b q**2 + int (exp(-q x) - 1 + q x) Pi(dx)

together with the maps between them: differentiation and integration
(which shift a measure by a factor ``x``) and division or multiplication
by ``q`` (which pass to and from tail functions).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import measures as M
from .errors import DomainError, RepresentationError
from .measures import RadonMeasure, WeightKind


def _nonneg(name: str, v: float) -> float:
    v = float(v)
    if not (v >= 0 and np.isfinite(v)):
        raise RepresentationError(f"{name} must be a finite nonnegative number, got {v}")
    return v


def _ret(q, val):
    return float(val[0]) if np.ndim(q) == 0 else val


@dataclass(frozen=True)
class CompletelyMonotoneRep:
    """Constant ``atom_at_zero`` plus the Laplace transform of ``mu``."""

    mu: RadonMeasure = field(default_factory=RadonMeasure)
    atom_at_zero: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "atom_at_zero", _nonneg("atom_at_zero", self.atom_at_zero))
        if not np.isfinite(M.laplace(self.mu, 1e-6)):
            raise RepresentationError("Laplace transform of mu diverges")

    cone = "CM"

    @property
    def b1_mass(self) -> float:
        """``int (1 ^ 1/x) mu(dx)``; finite exactly when the function is also in B1."""
        return M.weighted_mass(self.mu, WeightKind.ONE_MIN_INV)

    @property
    def in_b1(self) -> bool:
        return bool(np.isfinite(self.b1_mass))

    @property
    def in_b1_decreasing(self) -> bool:
        return self.in_b1 and self.mu.has_decreasing_density

    def __call__(self, q):
        return eval_cm(self, q)


@dataclass(frozen=True)
class BernsteinTriple:
    """Killing rate ``a``, drift ``b`` and Levy measure ``Lambda``."""

    a: float = 0.0
    b: float = 0.0
    levy: RadonMeasure = field(default_factory=RadonMeasure)

    def __post_init__(self):
        object.__setattr__(self, "a", _nonneg("a", self.a))
        object.__setattr__(self, "b", _nonneg("b", self.b))
        if not M.is_integrable(self.levy, WeightKind.X_MIN_ONE):
            raise DomainError("Levy measure violates int (x ^ 1) Lambda(dx) < inf")

    cone = "B2"

    @property
    def decreasing(self) -> bool:
        """Membership flag for the decreasing-density subcone."""
        return self.levy.has_decreasing_density

    def __call__(self, q):
        return eval_bernstein(self, q)


@dataclass(frozen=True)
class BranchingTriple:
    """Drift ``a``, half Gaussian coefficient ``b`` and jump measure ``Pi``."""

    a: float = 0.0
    b: float = 0.0
    jumps: RadonMeasure = field(default_factory=RadonMeasure)

    def __post_init__(self):
        object.__setattr__(self, "a", _nonneg("a", self.a))
        object.__setattr__(self, "b", _nonneg("b", self.b))
        if not M.is_integrable(self.jumps, WeightKind.X_MIN_XSQ):
            raise DomainError("jump measure violates int (x ^ x^2) Pi(dx) < inf")

    cone = "B3"

    @property
    def is_zero(self) -> bool:
        return self.a == 0 and self.b == 0 and self.jumps.is_zero

    def __call__(self, q):
        return eval_branching(self, q)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_cm(f: CompletelyMonotoneRep, q):
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    val = f.atom_at_zero + (M.laplace(f.mu, qa) if not f.mu.is_zero else 0.0 * qa)
    return _ret(q, val)


def eval_bernstein(phi: BernsteinTriple, q):
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    val = phi.a + phi.b * qa
    if not phi.levy.is_zero:
        val = val + M.partial_levy_transform(phi.levy, qa)
    return _ret(q, val)


def eval_branching(psi: BranchingTriple, q):
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    val = psi.a * qa + psi.b * qa * qa
    if not psi.jumps.is_zero:
        val = val + M.compensated_levy_transform(psi.jumps, qa)
    return _ret(q, val)


def evaluate(f, q):
    """Evaluate any cone representation."""
    if isinstance(f, CompletelyMonotoneRep):
        return eval_cm(f, q)
    if isinstance(f, BernsteinTriple):
        return eval_bernstein(f, q)
    if isinstance(f, BranchingTriple):
        return eval_branching(f, q)
    raise RepresentationError(f"not a cone representation: {type(f).__name__}")


# ---------------------------------------------------------------------------
# derivative / integral maps
# ---------------------------------------------------------------------------

def derivative_map_B3_to_B2(psi: BranchingTriple) -> BernsteinTriple:
    """``Psi'`` as the Bernstein triple ``(a, 2b, x Pi(dx))``."""
    return BernsteinTriple(psi.a, 2.0 * psi.b, M.times_x(psi.jumps))


def derivative_map_B2_to_B1(phi: BernsteinTriple) -> CompletelyMonotoneRep:
    """``Phi'`` as the completely monotone rep with constant ``b`` and measure ``x Lambda(dx)``."""
    return CompletelyMonotoneRep(M.times_x(phi.levy), phi.b)


def integral_map(f, value_at_zero: float = 0.0):
    """Primitive ``q -> value_at_zero + int_0^q f``, the inverse of the derivative maps.

    A completely monotone rep in B1 goes to a Bernstein triple with killing
    rate ``value_at_zero``; a Bernstein triple goes to a branching mechanism,
    whose value at zero is always 0.
    """
    if isinstance(f, CompletelyMonotoneRep):
        if not f.in_b1:
            raise DomainError("primitive not Bernstein: int (1 ^ 1/x) mu(dx) is infinite")
        return BernsteinTriple(value_at_zero, f.atom_at_zero, M.times_x(f.mu, -1.0))
    if isinstance(f, BernsteinTriple):
        if value_at_zero != 0:
            raise DomainError("a branching mechanism vanishes at 0")
        return BranchingTriple(f.a, f.b / 2.0, M.times_x(f.levy, -1.0))
    raise RepresentationError("integral_map expects a CM rep or a Bernstein triple")


# ---------------------------------------------------------------------------
# divide / multiply by q
# ---------------------------------------------------------------------------

def divide_by_q_map(f):
    """``g = f / q`` through tail functions; the output has a decreasing density.

    For a Bernstein input the resulting measure may fail the B1 condition
    when the Levy measure has a heavy tail; this is recorded by
    ``CompletelyMonotoneRep.in_b1`` rather than rejected.
    """
    if isinstance(f, BranchingTriple):
        return BernsteinTriple(f.a, f.b, M.tail_function(f.jumps))
    if isinstance(f, BernsteinTriple):
        if f.a != 0:
            raise DomainError("f(0+) = a > 0, so f/q is not completely monotone (needs lim f = 0 at 0)")
        return CompletelyMonotoneRep(M.tail_function(f.levy), f.b)
    raise RepresentationError("divide_by_q_map expects a Bernstein or branching triple")


def mul_by_q_map(g):
    """Inverse of :func:`divide_by_q_map`: ``f = q g``."""
    if isinstance(g, BernsteinTriple):
        return BranchingTriple(g.a, g.b, M.negative_derivative(g.levy))
    if isinstance(g, CompletelyMonotoneRep):
        return BernsteinTriple(0.0, g.atom_at_zero, M.negative_derivative(g.mu))
    raise RepresentationError("mul_by_q_map expects a Bernstein triple or a CM rep")


# ---------------------------------------------------------------------------
# convex cone operations
# ---------------------------------------------------------------------------

def cone_scale_add(f1, f2, c1: float = 1.0, c2: float = 1.0):
    """``c1 f1 + c2 f2`` for two representations of the same cone."""
    if type(f1) is not type(f2):
        raise RepresentationError("cone_scale_add needs two members of the same cone")
    if c1 < 0 or c2 < 0:
        raise DomainError("cone coefficients must be nonnegative")
    if isinstance(f1, CompletelyMonotoneRep):
        return CompletelyMonotoneRep(
            (f1.mu.scaled(c1) + f2.mu.scaled(c2)).pruned(), c1 * f1.atom_at_zero + c2 * f2.atom_at_zero
        )
    cls = type(f1)
    m1 = f1.levy if cls is BernsteinTriple else f1.jumps
    m2 = f2.levy if cls is BernsteinTriple else f2.jumps
    return cls(c1 * f1.a + c2 * f2.a, c1 * f1.b + c2 * f2.b, (m1.scaled(c1) + m2.scaled(c2)).pruned())


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def to_json(f) -> dict:
    if isinstance(f, CompletelyMonotoneRep):
        return {"cone": "CM", "atom_at_zero": f.atom_at_zero, "measure": f.mu.to_json()}
    if isinstance(f, BernsteinTriple):
        return {"cone": "B2", "a": f.a, "b": f.b, "measure": f.levy.to_json()}
    if isinstance(f, BranchingTriple):
        return {"cone": "B3", "a": f.a, "b": f.b, "measure": f.jumps.to_json()}
    raise RepresentationError(f"not a cone representation: {type(f).__name__}")


def from_json(doc: dict):
    if not isinstance(doc, dict) or "cone" not in doc:
        raise RepresentationError("triple JSON needs a 'cone' field")
    cone = doc["cone"]
    mu = RadonMeasure.from_json(doc["measure"]) if "measure" in doc else RadonMeasure()
    try:
        if cone == "CM":
            # the constant part may also be given as "a"
            return CompletelyMonotoneRep(mu, float(doc.get("atom_at_zero", doc.get("a", 0.0))))
        if cone == "B2":
            return BernsteinTriple(float(doc.get("a", 0.0)), float(doc.get("b", 0.0)), mu)
        if cone == "B3":
            return BranchingTriple(float(doc.get("a", 0.0)), float(doc.get("b", 0.0)), mu)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, RepresentationError):
            raise
        raise RepresentationError(f"malformed triple: {exc}") from exc
    raise RepresentationError(f"unknown cone {cone!r}")
