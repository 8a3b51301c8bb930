import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from conecalc import measures as M
from conecalc.errors import DomainError, RepresentationError
from conecalc.measures import Atom, PowerExp, RadonMeasure, TabulatedDensity, WeightKind

from conftest import quad_oracle

E1 = math.exp(-1.0)


def e_alpha_measure(alpha):
    return RadonMeasure.family(M.stable_tail(alpha, alpha / math.gamma(1 - alpha)))


class TestTypes:
    def test_atom_requires_positive_location(self):
        with pytest.raises(RepresentationError):
            Atom(0.0, 1.0)

    def test_atom_requires_nonnegative_mass(self):
        with pytest.raises(RepresentationError):
            Atom(1.0, -1.0)

    def test_table_grid_must_increase(self):
        with pytest.raises(RepresentationError):
            TabulatedDensity(np.array([1.0, 0.5, 2.0]), np.array([1.0, 1.0, 1.0]))

    def test_table_values_nonnegative(self):
        with pytest.raises(RepresentationError):
            TabulatedDensity(np.array([1.0, 2.0]), np.array([1.0, -1.0]))

    def test_tail_extrapolation_continuous(self):
        grid = M.log_grid(1e-3, 1e3, 200)
        t = M.tabulate(lambda x: x**-1.5 * np.exp(-0.01 * x), grid)
        last = float(t.density(np.array([grid[-1]]))[0])
        assert last == pytest.approx(t.values[-1], rel=1e-9)
        beyond = float(t.density(np.array([grid[-1] * (1 + 1e-9)]))[0])
        assert beyond == pytest.approx(t.values[-1], rel=1e-7)


class TestWeightedMass:
    def test_stable_tail_x_min_one_finite(self):
        assert math.isfinite(M.weighted_mass(e_alpha_measure(0.5), WeightKind.X_MIN_ONE))

    def test_atom_x_min_xsq(self):
        assert M.weighted_mass(RadonMeasure.atom(1.0, 2.0), WeightKind.X_MIN_XSQ) == 2.0

    def test_stable_tail_one_min_inv_diverges(self):
        assert M.weighted_mass(RadonMeasure.family(M.stable_tail(0.5, 1.0)), WeightKind.ONE_MIN_INV) == math.inf

    def test_exponential_against_quadrature(self):
        mu = RadonMeasure.family(M.exponential(2.0, 3.0))
        oracle = quad_oracle(lambda x: min(x, 1.0) * 3 * math.exp(-2 * x))
        assert M.weighted_mass(mu, WeightKind.X_MIN_ONE) == pytest.approx(oracle, rel=1e-9)

    @given(st.floats(0.05, 0.95))
    def test_stable_tail_divergence_is_analytic(self, alpha):
        mu = RadonMeasure.family(M.stable_tail(alpha, 1.0))
        assert M.is_integrable(mu, WeightKind.X_MIN_ONE)
        # x * x^(-1-alpha) is not integrable at infinity
        assert not M.is_integrable(mu, WeightKind.X_MIN_XSQ)
        assert not M.is_integrable(mu, WeightKind.ONE_MIN_INV)


class TestLaplace:
    def test_atom(self):
        assert M.laplace(RadonMeasure.atom(1.0, 1.0), 1.0) == pytest.approx(E1, rel=1e-15)

    def test_exponential(self):
        assert M.laplace(RadonMeasure.family(M.exponential(1.0, 1.0)), 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_stable_tail_diverges(self):
        assert M.laplace(RadonMeasure.family(M.stable_tail(0.5, 1.0)), 1.0) == math.inf

    def test_differenced_truncations_reproduce_e_alpha(self):
        # q^a = int (1 - e^(-qx)) c x^(-1-a) dx, the two pieces by independent quadrature
        a, q = 0.5, 1.0
        c = a / math.gamma(1 - a)
        head = quad_oracle(lambda x: -math.expm1(-q * x) * c * x ** (-1 - a), 0.0, 1.0)
        tail = quad_oracle(lambda x: -math.expm1(-q * x) * c * x ** (-1 - a), 1.0)
        assert M.partial_levy_transform(e_alpha_measure(a), q) == pytest.approx(head + tail, rel=1e-9)

    @given(st.floats(-0.9, 3.0), st.floats(0.1, 5.0), st.floats(0.05, 20.0))
    def test_power_exp_against_quadrature(self, p, r, q):
        mu = RadonMeasure.family(PowerExp(p, r, 1.0))
        oracle = quad_oracle(lambda x: math.exp(-q * x) * x**p * math.exp(-r * x))
        assert M.laplace(mu, q) == pytest.approx(oracle, rel=1e-8)

    @given(st.lists(st.tuples(st.floats(0.01, 50.0), st.floats(0.0, 5.0)), min_size=1, max_size=5))
    def test_nonincreasing(self, atoms):
        mu = RadonMeasure(atoms=tuple(Atom(x, m) for x, m in atoms), families=(M.exponential(1.0, 1.0),))
        v = M.laplace(mu, np.geomspace(1e-3, 1e3, 40))
        assert np.all(np.diff(v) <= 1e-15)

    def test_atom_vs_narrow_bump(self):
        width, mass, q = 1e-3, 2.0, 3.0
        grid = np.linspace(1 - width / 2, 1 + width / 2, 41)
        bump = M.tabulate(lambda x: np.full_like(x, mass / width), grid, head_exponent=None, tail_exponent=None)
        a = M.laplace(RadonMeasure.atom(1.0, mass), q)
        b = M.laplace(RadonMeasure(tables=(bump,)), q)
        assert abs(a - b) <= width * q * mass


class TestPartialLevy:
    def test_e_half(self):
        assert M.partial_levy_transform(e_alpha_measure(0.5), 4.0) == pytest.approx(2.0, rel=1e-12)

    def test_atom(self):
        assert M.partial_levy_transform(RadonMeasure.atom(1.0, 1.0), 1.0) == pytest.approx(1 - E1, rel=1e-15)

    def test_e_quarter(self):
        assert M.partial_levy_transform(e_alpha_measure(0.25), 16.0) == pytest.approx(2.0, rel=1e-12)

    def test_domain_error_names_condition(self):
        with pytest.raises(DomainError, match="x \\^ 1"):
            M.partial_levy_transform(RadonMeasure.family(PowerExp(-2.5, 0.0, 1.0)), 1.0)

    @given(st.floats(0.05, 0.95), st.floats(1e-3, 1e3))
    def test_e_alpha_identity(self, alpha, q):
        assert M.partial_levy_transform(e_alpha_measure(alpha), q) == pytest.approx(q**alpha, rel=1e-10)

    def test_concave_samples(self):
        mu = RadonMeasure(atoms=(Atom(0.5, 1.0),), families=(M.exponential(2.0, 1.0), M.stable_tail(0.3, 1.0)))
        q = np.linspace(0.1, 10, 101)
        v = M.partial_levy_transform(mu, q)
        assert np.all(np.diff(v) >= 0)
        assert np.all(v[2:] - 2 * v[1:-1] + v[:-2] <= 1e-9)


class TestCompensated:
    def test_atom(self):
        assert M.compensated_levy_transform(RadonMeasure.atom(1.0, 1.0), 1.0) == pytest.approx(E1, rel=1e-15)

    def test_atom_small_q(self):
        q = 1e-3
        assert M.compensated_levy_transform(RadonMeasure.atom(1.0, 1.0), q) == pytest.approx(q * q / 2, rel=1e-3)
        assert abs(M.compensated_levy_transform(RadonMeasure.atom(1.0, 1.0), q) - q * q / 2) <= 1e-6

    def test_exponential(self):
        assert M.compensated_levy_transform(RadonMeasure.family(M.exponential(1.0, 1.0)), 1.0) == pytest.approx(
            0.5, rel=1e-12
        )

    def test_cancellation_safe_kernel(self):
        u = np.array([1e-12, 1e-8, 1e-5])
        assert np.allclose(M.kernel_compensated(u), u**2 / 2 - u**3 / 6, rtol=1e-12)

    def test_vanishes_at_origin(self):
        mu = RadonMeasure.family(PowerExp(-2.5, 0.0, 1.0))
        v = [M.compensated_levy_transform(mu, 2.0**-k) for k in range(5, 21)]
        assert np.all(np.diff(v) < 0) and v[-1] < 1e-8

    def test_domain_error(self):
        with pytest.raises(DomainError):
            M.compensated_levy_transform(RadonMeasure.family(PowerExp(-3.5, 0.0, 1.0)), 1.0)

    @given(st.floats(-2.9, -1.1), st.sampled_from([0.0, 0.1, 1.0, 3.0]), st.floats(0.05, 20.0))
    def test_power_exp_against_quadrature(self, p, r, q):
        mu = RadonMeasure.family(PowerExp(p, r, 1.0))
        f = lambda x: (math.expm1(-q * x) + q * x) * x**p * math.exp(-r * x)  # noqa: E731
        if r == 0 and p > -2:
            return
        assert M.compensated_levy_transform(mu, q) == pytest.approx(quad_oracle(f), rel=1e-7)

    @given(st.floats(0.1, 5.0), st.floats(0.1, 5.0))
    def test_convex(self, x0, r):
        mu = RadonMeasure(atoms=(Atom(x0, 1.0),), families=(M.exponential(r, 1.0),))
        q = np.linspace(0.05, 10, 60)
        v = M.compensated_levy_transform(mu, q)
        assert np.all(v[2:] - 2 * v[1:-1] + v[:-2] >= -1e-12)


class TestTailFunction:
    def test_atom_is_box(self):
        tail = M.tail_function(RadonMeasure.atom(2.0, 3.0))
        y = np.array([0.5, 1.9, 2.1])
        assert np.allclose(tail.density(y), [3.0, 3.0, 0.0])

    def test_stable_tail(self):
        tail = M.tail_function(RadonMeasure.family(M.stable_tail(0.5, 1.0)))
        y = np.array([0.1, 1.0, 10.0])
        assert np.allclose(tail.density(y), 2.0 * y**-0.5, rtol=1e-14)

    @given(st.floats(-0.5, 2.0), st.floats(0.2, 4.0))
    def test_generic_family_against_quadrature(self, p, r):
        tail = M.tail_function(RadonMeasure.family(PowerExp(p, r, 1.0)))
        for y in (0.05, 1.0, 5.0):
            oracle = quad_oracle(lambda x: x**p * math.exp(-r * x), y)
            # pointwise values are interpolated; transforms are exact, see below
            assert float(tail.density(np.array([y]))[0]) == pytest.approx(oracle, rel=1e-6)

    @given(st.floats(-0.5, 2.0), st.floats(0.2, 4.0))
    def test_generic_family_tail_transforms(self, p, r):
        mu = RadonMeasure.family(PowerExp(p, r, 1.0))
        tail = M.tail_function(mu)
        q = np.geomspace(1e-2, 1e2, 9)
        assert np.allclose(q * M.laplace(tail, q), M.partial_levy_transform(mu, q), rtol=1e-12)
        oracle = [quad_oracle(lambda y: -math.expm1(-qq * y) * quad_oracle(lambda x: x**p * math.exp(-r * x), y))
                  for qq in (0.1, 3.0)]
        assert M.partial_levy_transform(tail, np.array([0.1, 3.0])) == pytest.approx(oracle, rel=1e-7)

    def test_tail_is_decreasing(self):
        assert M.tail_function(RadonMeasure.family(M.exponential(1.0, 1.0))).has_decreasing_density

    def test_negative_derivative_inverts_tail(self):
        mu = RadonMeasure(atoms=(Atom(1.0, 1.0),), families=(PowerExp(0.5, 1.0, 2.0), M.stable_tail(0.3, 1.0)))
        back = M.negative_derivative(M.tail_function(mu))
        q = np.geomspace(0.01, 100, 9)
        assert np.allclose(M.partial_levy_transform(back, q), M.partial_levy_transform(mu, q), rtol=1e-9)

    def test_upper_gamma_matches_scipy_for_positive_a(self):
        for a in (0.3, 1.0, 2.5):
            for z in (0.1, 1.0, 7.0):
                assert M.upper_gamma(a, z) == pytest.approx(special.gammaincc(a, z) * special.gamma(a), rel=1e-13)

    def test_upper_gamma_negative_a_against_quadrature(self):
        for a in (-0.5, -1.5):
            z = 0.7
            oracle = quad_oracle(lambda t: t ** (a - 1) * math.exp(-t), z)
            assert M.upper_gamma(a, z) == pytest.approx(oracle, rel=1e-10)


class TestJSON:
    def test_roundtrip(self):
        grid = M.log_grid(1e-2, 1e2, 50)
        mu = RadonMeasure(
            atoms=(Atom(1.0, 2.0),),
            families=(M.stable_tail(0.5, 0.3), M.exponential(1.0, 2.0), PowerExp(0.5, 1.0, 1.0, upper=3.0)),
            tables=(M.tabulate(lambda x: np.exp(-x), grid),),
        )
        doc = json.loads(json.dumps(mu.to_json()))
        assert RadonMeasure.from_json(doc) == mu

    def test_single_table_key(self):
        doc = {"table": {"grid": [1.0, 2.0, 4.0], "values": [1.0, 0.5, 0.25], "tail_exponent": -1.0}}
        mu = RadonMeasure.from_json(doc)
        assert float(mu.density(np.array([8.0]))[0]) == pytest.approx(0.125, rel=1e-9)

    def test_unknown_field_rejected(self):
        with pytest.raises(RepresentationError):
            RadonMeasure.from_json({"atoms": [{"x": 1, "m": 1, "colour": 2}]})

    def test_empty_document_rejected(self):
        with pytest.raises(RepresentationError):
            RadonMeasure.from_json({})
