import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from conecalc import composition as C
from conecalc import measures as M
from conecalc import stable as S
from conecalc.checker import FunctionHandle, check_bernstein, check_branching, check_cm
from conecalc.cones import BernsteinTriple, BranchingTriple, eval_bernstein
from conecalc.errors import CapabilityError, DomainError, EvaluationError, PreconditionError
from conecalc.measures import RadonMeasure

SQUARE = BranchingTriple(0.0, 1.0)
DRIFT_GAUSS = BranchingTriple(1.0, 1.0)
ATOM = BranchingTriple(0.0, 0.0, RadonMeasure.atom(1.0, 1.0))
EXP = BranchingTriple(0.0, 0.0, RadonMeasure.family(M.exponential(1.0, 1.0)))
QLOG = np.geomspace(1e-2, 1e2, 13)


def e(alpha, k=1.0):
    return S.e_alpha_triple(alpha, k)


class TestCompose:
    def test_square_of_sqrt_is_identity(self):
        h = C.compose(SQUARE, e(0.5))
        assert np.allclose(h(QLOG), QLOG, rtol=1e-14)
        assert h.meta["factors"] == ("Psi", "Phi")

    def test_atom_at_one(self):
        assert C.compose(ATOM, e(0.5))(1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)

    @pytest.mark.parametrize("alpha,ok", [(0.25, True), (0.5, True), (0.55, False), (0.6, False), (0.75, False)])
    def test_square_of_e_alpha(self, alpha, ok):
        cert = check_bernstein(C.compose(SQUARE, e(alpha)), 8)
        assert cert.passed is ok
        if not ok:
            assert cert.witness is not None

    @pytest.mark.parametrize("alpha", [0.1, 0.25, 0.4, 0.5])
    def test_corpus_through_e_alpha(self, branching_case, alpha):
        _, psi, _ = branching_case
        assert check_bernstein(C.compose(psi, e(alpha)), 8).passed

    def test_chain_derivative(self):
        h = C.compose(DRIFT_GAUSS, e(0.5))
        # d/dq (sqrt q + q) = 1/(2 sqrt q) + 1
        assert h.derivative(4.0) == pytest.approx(1.25, rel=1e-12)

    def test_domain_mismatch(self):
        neg = FunctionHandle(lambda q: -np.asarray(q, float), label="neg")
        with pytest.raises(DomainError):
            C.compose(e(0.5), neg)(1.0)


class TestComposeWithEAlphaTriple:
    def test_atom_at_half(self):
        tr = C.compose_with_e_alpha_triple(ATOM, 0.5)
        assert float(eval_bernstein(tr, 1.0)) == pytest.approx(math.exp(-1.0), rel=1e-6)
        assert tr.decreasing

    def test_exponential_quarter(self):
        tr = C.compose_with_e_alpha_triple(EXP, 0.25)
        # Psi(2) = int (e^{-2x} - 1 + 2x) e^{-x} dx
        oracle, _ = integrate.quad(lambda x: (math.exp(-2 * x) - 1 + 2 * x) * math.exp(-x), 0, np.inf)
        assert float(eval_bernstein(tr, 16.0)) == pytest.approx(oracle, rel=1e-6)

    @pytest.mark.parametrize("psi", [SQUARE, DRIFT_GAUSS, ATOM, EXP, BranchingTriple(1.0, 1.0, EXP.jumps)])
    @pytest.mark.parametrize("alpha", [0.25, 0.5])
    def test_matches_composition(self, psi, alpha):
        tr = C.compose_with_e_alpha_triple(psi, alpha)
        assert np.allclose(eval_bernstein(tr, QLOG), psi(QLOG**alpha), rtol=1e-6)

    def test_above_half_rejected(self):
        with pytest.raises(PreconditionError):
            C.compose_with_e_alpha_triple(ATOM, 0.6)


class TestBochner:
    def test_half_of_half(self):
        out = C.bochner_subordinate(e(0.5), e(0.5))
        x = np.geomspace(0.1, 10, 25)
        closed = 0.25 / math.gamma(0.75) * x**-1.25
        assert np.allclose(out.levy.density(x), closed, rtol=1e-6)

    def test_half_of_half_by_quadrature(self):
        # independent oracle: int p_t(x) c t^{-3/2} dt with the alpha=1/2 density in closed form
        c = 1 / (2 * math.sqrt(math.pi))
        out = C.bochner_subordinate(e(0.5), e(0.5))
        for x in (0.3, 2.0):
            # P(tau_t in dx)/dx = t / (2 sqrt(pi) x^{3/2}) exp(-t^2 / (4x)), with t = e^s
            f = lambda s: (math.exp(s) / (2 * math.sqrt(math.pi) * x**1.5) * math.exp(-math.exp(2 * s) / (4 * x))  # noqa: E731
                           * c * math.exp(-0.5 * s))
            ref, _ = integrate.quad(f, -40, 40, limit=400, epsrel=1e-12)
            assert out.levy.density(x) == pytest.approx(ref, rel=1e-6)

    def test_drift_inner_is_identity(self):
        outer = BernsteinTriple(0.5, 2.0, RadonMeasure.family(M.exponential(1.0, 3.0)))
        out = C.bochner_subordinate(BernsteinTriple(0.0, 1.0), outer)
        assert np.allclose(eval_bernstein(out, QLOG), eval_bernstein(outer, QLOG), rtol=1e-12)

    def test_drift_outer_is_identity(self):
        out = C.bochner_subordinate(e(0.5), BernsteinTriple(0.0, 1.0))
        assert np.allclose(eval_bernstein(out, QLOG), np.sqrt(QLOG), rtol=1e-12)

    @pytest.mark.parametrize(
        "inner,outer",
        [
            (e(0.3), e(0.6)),
            (e(0.7, 2.0), BernsteinTriple(1.0, 0.5, RadonMeasure.family(M.exponential(1.0, 1.0)))),
            (BernsteinTriple(0.0, 0.0, RadonMeasure.atom(1.0, 2.0)), e(0.5)),
            (BernsteinTriple(0.2, 0.0, RadonMeasure.atom(0.5, 1.0)), BernsteinTriple(0.0, 1.0, RadonMeasure.atom(2.0, 1.0))),
        ],
    )
    def test_evaluation_consistency(self, inner, outer):
        out = C.bochner_subordinate(inner, outer)
        lhs = eval_bernstein(out, QLOG)
        rhs = eval_bernstein(outer, eval_bernstein(inner, QLOG))
        assert np.allclose(lhs, rhs, rtol=1e-6)

    def test_unsupported_inner(self):
        inner = BernsteinTriple(0.0, 0.0, RadonMeasure.family(M.exponential(1.0, 1.0)))
        with pytest.raises(CapabilityError, match="subordination_mc_check"):
            C.bochner_subordinate(inner, e(0.5))


class TestInternality:
    @pytest.mark.parametrize("alpha,ok", [(0.25, True), (0.5, True), (0.6, False), (0.75, False)])
    def test_e_alpha(self, alpha, ok):
        assert C.is_internal(e(alpha)).internal is ok

    def test_log1p_witness(self):
        cert = C.is_internal(FunctionHandle(np.log1p, label="log1p"))
        assert cert.verdict == "NOT_INTERNAL"
        assert cert.witness["n"] == 2
        assert cert.witness["q"] == pytest.approx(math.e - 1, abs=0.2)

    def test_drift_rejected(self):
        cert = C.is_internal(FunctionHandle(lambda q: np.asarray(q, float), label="id"))
        assert cert.verdict == "NOT_INTERNAL"
        assert cert.drift == pytest.approx(1.0, abs=1e-6)
        assert cert.square_certificate is None

    def test_json(self):
        doc = C.is_internal(e(0.5)).to_json()
        assert doc["verdict"] == "INTERNAL" and doc["square_certificate"]["verdict"] == "PASS"

    def test_internal_composes_with_corpus(self, branching_case):
        _, psi, _ = branching_case
        phi = e(0.4)
        assert C.is_internal(phi).internal
        assert check_bernstein(C.compose(psi, phi), 8).passed


class TestInternalFromSubordinator:
    def test_drift_kappa_gives_sqrt(self):
        ic = C.internal_from_subordinator(0.0, 1 / (2 * math.sqrt(math.pi)), BernsteinTriple(0.0, 1.0))
        assert ic.c_prime == pytest.approx(1.0, rel=1e-15)
        assert np.allclose(eval_bernstein(ic.triple, QLOG), np.sqrt(QLOG), rtol=1e-6)

    def test_change_of_variables_constant(self):
        # int (1 - e^{-lt}) t^{-3/2} dt = 2 sqrt(pi l)
        for lam in (0.3, 4.0):
            v, _ = integrate.quad(lambda s: -math.expm1(-lam * math.exp(s)) * math.exp(-0.5 * s), -50, 50, limit=400)
            assert v == pytest.approx(2 * math.sqrt(math.pi * lam), rel=1e-9)

    @pytest.mark.parametrize(
        "a,c,kappa",
        [
            (0.0, 1.0, BernsteinTriple(0.0, 1.0)),
            (0.5, 0.3, S.e_alpha_triple(0.5)),
            (0.0, 2.0, S.e_alpha_triple(0.7, 1.5)),
            (0.1, 1.0, BernsteinTriple(0.0, 0.0, RadonMeasure.atom(1.0, 1.0))),
        ],
    )
    def test_closed_form_and_internal(self, a, c, kappa):
        ic = C.internal_from_subordinator(a, c, kappa)
        assert np.allclose(eval_bernstein(ic.triple, QLOG), ic.closed_form(QLOG), rtol=1e-6)
        assert ic.infinite_mean
        assert C.is_internal(ic.closed_form if a == 0 else FunctionHandle(lambda q: ic.closed_form(q) - a)).internal

    def test_killed_kappa_has_finite_mean(self):
        ic = C.internal_from_subordinator(0.0, 1.0, BernsteinTriple(1.0, 1.0))
        assert not ic.infinite_mean

    def test_invalid_constants(self):
        with pytest.raises(DomainError):
            C.internal_from_subordinator(0.0, 0.0, BernsteinTriple(0.0, 1.0))
        with pytest.raises(DomainError):
            C.internal_from_subordinator(-1.0, 1.0, BernsteinTriple(0.0, 1.0))


class TestInversion:
    def test_values(self):
        assert C.invert_branching(DRIFT_GAUSS)(2.0) == pytest.approx(1.0, rel=1e-15)
        assert C.invert_branching(SQUARE)(9.0) == pytest.approx(3.0, rel=1e-15)

    def test_quadratic_formula(self):
        p = np.geomspace(1e-3, 1e3, 31)
        inv = C.invert_branching(DRIFT_GAUSS)
        assert np.allclose(inv(p), (np.sqrt(1 + 4 * p) - 1) / 2, rtol=1e-10)
        assert check_bernstein(inv, 8).passed

    @given(st.floats(1e-3, 1e3))
    def test_residual(self, p):
        for psi in (SQUARE, DRIFT_GAUSS, ATOM, EXP):
            q = C.invert_branching(psi)(p)
            assert abs(float(psi(q)) - p) <= 1e-12 * max(1.0, p)

    def test_handle_input(self):
        inv = C.invert_branching(FunctionHandle(lambda q: np.asarray(q, float) ** 1.5, label="q^1.5"))
        assert inv(8.0) == pytest.approx(4.0, rel=1e-12)

    def test_errors(self):
        with pytest.raises(DomainError):
            C.invert_branching(BranchingTriple(0.0, 0.0))
        with pytest.raises(DomainError):
            C.invert_branching(SQUARE)(-1.0)
        assert C.invert_branching(SQUARE)(0.0) == 0.0


class TestReciprocal:
    def test_partial_fractions(self):
        h = C.reciprocal_cm(DRIFT_GAUSS)
        assert np.allclose(h(QLOG), 1 / QLOG - 1 / (1 + QLOG), rtol=1e-12)
        assert check_cm(h, 8).passed

    def test_sqrt_and_kernel(self):
        assert np.allclose(C.reciprocal_cm(e(0.5))(QLOG), QLOG**-0.5)
        assert check_cm(C.reciprocal_cm(BernsteinTriple(1.0, 1.0)), 8).passed

    def test_pole(self):
        with pytest.raises(EvaluationError, match="pole"):
            C.reciprocal_cm(SQUARE)(np.array([0.0, 1.0]))


class TestLadder:
    def test_square(self):
        lad = C.ladder_functions(SQUARE)
        assert np.allclose(lad["inv_phi_prime"](QLOG), 2 * np.sqrt(QLOG), rtol=1e-12)
        assert np.allclose(lad["id_over_phi"](QLOG), np.sqrt(QLOG), rtol=1e-12)
        assert np.allclose(lad["one_over_phi_phiprime"](QLOG), 2.0, rtol=1e-10)

    def test_drift_gauss(self):
        lad = C.ladder_functions(DRIFT_GAUSS)
        assert np.allclose(lad["inv_phi_prime"](QLOG), np.sqrt(1 + 4 * QLOG), rtol=1e-10)
        assert check_bernstein(lad["inv_phi_prime"], 8).passed
        assert lad["id_over_phi"](0.0) == pytest.approx(1.0)

    def test_all_certified(self):
        lad = C.ladder_functions(BranchingTriple(1.0, 1.0, RadonMeasure.atom(1.0, 1.0)))
        assert check_bernstein(lad["inv_phi_prime"], 8).passed
        assert check_bernstein(lad["id_over_phi"], 8).passed
        assert check_cm(lad["one_over_phi_phiprime"], 8).passed


class TestInverseDerivativeInternal:
    @pytest.mark.parametrize("psi", [SQUARE, DRIFT_GAUSS])
    def test_closed_forms(self, psi):
        rep = C.corollary1_check(psi)
        assert rep.verdict == "INTERNAL"
        assert rep.identity_max_rel_error <= 1e-6

    def test_identity_at_one(self):
        rep = C.corollary1_check(DRIFT_GAUSS, identity_grid=[1.0])
        assert rep.identity_max_rel_error <= 1e-6
        assert rep.to_json()["identity_grid"] == [1.0]

    def test_corpus(self, branching_case):
        _, psi, _ = branching_case
        assert C.corollary1_check(psi).verdict == "INTERNAL"


class TestStieltjesCompose:
    def test_log1p_over_q(self):
        out, cert = C.stieltjes_compose(FunctionHandle(np.log1p, label="log1p"), BernsteinTriple(0.0, 1.0))
        assert np.allclose(out(QLOG), np.log1p(1 / QLOG), rtol=1e-13)
        assert cert.passed

    def test_sqrt_over_one_plus_q(self):
        out, cert = C.stieltjes_compose(FunctionHandle(np.sqrt, label="sqrt"), BernsteinTriple(1.0, 1.0))
        assert np.allclose(out(QLOG), (1 + QLOG) ** -0.5, rtol=1e-13)
        assert cert.passed

    def test_gate_rejects_delta_one(self):
        with pytest.raises(PreconditionError) as info:
            C.stieltjes_compose(FunctionHandle(lambda q: -np.expm1(-q), label="1-e^-q"), BernsteinTriple(0.0, 1.0))
        assert info.value.certificate is not None
        assert not info.value.certificate.passed

    def test_gate_rejects_non_bernstein_g(self):
        with pytest.raises(PreconditionError, match="g is not Bernstein"):
            C.stieltjes_compose(FunctionHandle(np.log1p), FunctionHandle(lambda q: np.asarray(q, float) ** 2))


class TestIteration:
    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_square(self, n):
        r = C.iterate_remark(SQUARE, n, K=6)
        assert r.b3_certificate.passed and r.b2_certificate.passed
        # Psi = q^2 collapses both products to powers: q^2 and q^(1 - 2^-n + 2^-n)
        assert np.allclose(r.b3_product(QLOG), QLOG**2, rtol=1e-12)
        assert np.allclose(r.b2_product(QLOG), QLOG, rtol=1e-12)

    def test_n_zero_is_psi(self):
        r = C.iterate_remark(DRIFT_GAUSS, 0, K=6)
        assert np.allclose(r.b3_product(QLOG), DRIFT_GAUSS(QLOG), rtol=1e-14)

    def test_corpus(self, branching_case):
        _, psi, _ = branching_case
        r = C.iterate_remark(psi, 2, K=6)
        assert r.b3_certificate.passed and r.b2_certificate.passed

    def test_depth_bound(self):
        with pytest.raises(DomainError):
            C.iterate_remark(SQUARE, 9)


def test_special_constant():
    # Levy density constant of e_(1/4): (1/4)/Gamma(3/4)
    assert S.levy_constant(0.25) == pytest.approx(0.25 / special.gamma(0.75), rel=1e-14)
