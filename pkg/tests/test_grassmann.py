import itertools

import numpy as np
import pytest

from fermisse.bath import DiscreteModes
from fermisse.grassmann import (
    GrassmannAlgebra,
    GrassmannElement,
    GrassmannParityError,
    coherent_state,
    jw_matrix,
    outer_product,
    require_even,
    verify_completeness,
    verify_novikov,
)


def random_element(alg, rng, payload_dim=None):
    terms = {}
    for mask in range(2**alg.n_generators):
        if payload_dim:
            terms[mask] = rng.normal(size=(payload_dim, payload_dim)) + 1j * rng.normal(
                size=(payload_dim, payload_dim)
            )
        else:
            terms[mask] = complex(rng.normal(), rng.normal())
    return GrassmannElement(alg, terms)


class TestProduct:
    def test_nilpotency(self):
        alg = GrassmannAlgebra(2)
        x = alg.xi(0)
        assert (x * x).terms == {}

    def test_anticommutation_exhaustive(self):
        for K in (1, 2, 3):
            alg = GrassmannAlgebra(K)
            gens = [alg.generator(i) for i in range(2 * K)]
            for a, b in itertools.product(range(2 * K), repeat=2):
                prod = gens[a] * gens[b] + gens[b] * gens[a]
                assert prod.terms == {}, (a, b)

    def test_distributivity_example(self):
        alg = GrassmannAlgebra(1)
        lhs = (alg.one() + alg.xi(0)) * (alg.one() + alg.xis(0))
        # 1 + xi + xi* + xi xi*
        assert lhs.terms[0] == 1.0
        assert lhs.terms[0b01] == 1.0
        assert lhs.terms[0b10] == 1.0
        assert lhs.terms[0b11] == 1.0

    def test_associativity_random(self):
        rng = np.random.default_rng(11)
        alg = GrassmannAlgebra(2)
        for _ in range(25):
            a, b, c = (random_element(alg, rng) for _ in range(3))
            lhs = (a * b) * c
            rhs = a * (b * c)
            assert (lhs + (-1.0) * rhs).max_abs() < 1e-12

    def test_mismatched_generator_sets(self):
        a = GrassmannAlgebra(1).xi(0)
        b = GrassmannAlgebra(2).xi(0)
        with pytest.raises(ValueError):
            a * b


class TestBerezin:
    def test_defining_rules(self):
        alg = GrassmannAlgebra(1)
        assert alg.xi(0).berezin_integrate([alg.xi_index(0)]).terms[0] == 1.0
        assert alg.one().berezin_integrate([alg.xi_index(0)]).terms == {}

    def test_weighted_pair_average(self):
        # int dxi* dxi e^{-xi* xi} xi xi* = 1
        alg = GrassmannAlgebra(1)
        x = alg.xi(0) * alg.xis(0)
        assert (x * alg.gaussian_weight()).berezin_integrate(alg.measure_order()).terms[
            0
        ] == pytest.approx(1.0)

    def test_unknown_generator(self):
        alg = GrassmannAlgebra(1)
        with pytest.raises(ValueError):
            alg.one().berezin_integrate([5])
        with pytest.raises(ValueError):
            alg.one().berezin_integrate([0, 0])

    def test_matches_left_derivative_on_random_elements(self):
        rng = np.random.default_rng(5)
        alg = GrassmannAlgebra(3)
        for _ in range(100):
            elem = random_element(alg, rng)
            g = int(rng.integers(0, 6))
            diff = elem.berezin_integrate([g]) + (-1.0) * elem.left_derivative(g)
            assert diff.max_abs() == 0.0


class TestDerivatives:
    def test_left_example(self):
        alg = GrassmannAlgebra(2)
        x = alg.xi(0) * alg.xi(1)  # xi1 xi2
        out = x.left_derivative(alg.xi_index(0))
        assert out.terms == {1 << alg.xi_index(1): 1.0}

    def test_right_example(self):
        alg = GrassmannAlgebra(2)
        x = alg.xi(0) * alg.xi(1)
        out = x.right_derivative(alg.xi_index(1))
        assert out.terms == {1 << alg.xi_index(0): 1.0}

    def test_double_derivative_vanishes(self):
        rng = np.random.default_rng(9)
        alg = GrassmannAlgebra(2)
        for _ in range(20):
            elem = random_element(alg, rng)
            for g in range(4):
                assert elem.left_derivative(g).left_derivative(g).terms == {}
                assert elem.right_derivative(g).right_derivative(g).terms == {}

    def test_left_right_relation_on_monomials(self):
        # on a degree-p monomial the two derivatives differ by (-1)^(p-1)
        alg = GrassmannAlgebra(2)
        x = alg.xi(0) * alg.xis(0) * alg.xi(1)
        g = alg.xi_index(1)
        left = x.left_derivative(g)
        right = x.right_derivative(g)
        assert (left + (-1.0) ** (3 - 1) * (-1.0) * right).max_abs() == 0.0


class TestGaussianAverage:
    def test_single_generator_averages_to_zero(self):
        alg = GrassmannAlgebra(2)
        assert alg.xi(0).gaussian_average() == 0.0
        assert alg.xis(1).gaussian_average() == 0.0

    def test_normalization(self):
        alg = GrassmannAlgebra(3)
        assert alg.one().gaussian_average() == pytest.approx(1.0)

    def test_pair_orthogonality(self):
        alg = GrassmannAlgebra(3)
        for a in range(3):
            for b in range(3):
                val = (alg.xi(a) * alg.xis(b)).gaussian_average()
                assert val == pytest.approx(1.0 if a == b else 0.0)

    def test_fast_path_equals_definitional_route(self):
        rng = np.random.default_rng(21)
        for K in (1, 2, 3):
            alg = GrassmannAlgebra(K)
            for _ in range(10):
                elem = random_element(alg, rng)
                fast = elem.gaussian_average()
                slow = elem.gaussian_average_definitional()
                assert abs(fast - slow) < 1e-12

    def test_noise_covariance_is_kernel(self):
        from fermisse.sse import build_noise

        for K in (1, 2, 3):
            rng = np.random.default_rng(K)
            omegas = np.sort(rng.uniform(0.2, 2.0, K))
            coups = rng.uniform(0.1, 0.5, K)
            modes = DiscreteModes(omegas, coups)
            alg = GrassmannAlgebra(K)
            t, s = 1.3, 0.45
            got = (
                build_noise(alg, modes, t, conjugate=False)
                * build_noise(alg, modes, s, conjugate=True)
            ).gaussian_average()
            want = np.sum(coups**2 * np.exp(-1j * omegas * (t - s)))
            assert abs(got - want) < 1e-13


class TestCoherentState:
    def test_eigen_relation(self):
        for K in (1, 2, 3):
            alg = GrassmannAlgebra(K)
            coh = coherent_state(alg)
            for k in range(K):
                lhs = coh.apply(jw_matrix(K, k))
                rhs = alg.xi(k) * coh
                assert (lhs + (-1.0) * rhs).max_abs() == 0.0

    def test_completeness(self):
        assert verify_completeness(1) <= 1e-14
        assert verify_completeness(2) <= 1e-14
        assert verify_completeness(3) <= 1e-13

    def test_mode_cap(self):
        with pytest.raises(ValueError):
            verify_completeness(5)


class TestAdjointAndParity:
    def test_adjoint_involution(self):
        rng = np.random.default_rng(2)
        alg = GrassmannAlgebra(2)
        elem = random_element(alg, rng, payload_dim=2)
        twice = elem.adjoint().adjoint()
        assert (twice + (-1.0) * elem).max_abs() < 1e-14

    def test_parity_flip_squares_to_identity(self):
        rng = np.random.default_rng(4)
        alg = GrassmannAlgebra(3)
        elem = random_element(alg, rng)
        assert ((elem.parity_flip().parity_flip()) + (-1.0) * elem).max_abs() == 0.0

    def test_monomial_parity(self):
        alg = GrassmannAlgebra(2)
        assert alg.one().monomial_parity() == 1
        assert alg.xi(0).monomial_parity() == -1
        assert (alg.one() + alg.xi(0)).monomial_parity() is None

    def test_require_even_rejects_single_generator(self):
        alg = GrassmannAlgebra(1)
        with pytest.raises(GrassmannParityError):
            require_even(alg.xi(0))


class TestNovikov:
    def test_scalar_one_both_sides_vanish(self):
        alg = GrassmannAlgebra(2)
        res_l, res_r = verify_novikov(
            alg.one(), np.array([0.3, 0.4]), np.array([0.8, 1.2]), 0.7
        )
        assert res_l == 0.0
        assert res_r == 0.0

    def test_holds_on_sse_built_element(self):
        from fermisse.bath import BathSpec, TimeGrid
        from fermisse.models import ManyFermionVacuum
        from fermisse.propagator import build_system_ops
        from fermisse.sse import NoiseFamily, propagate_sse_direct

        modes = DiscreteModes(np.array([0.8, 1.25]), np.array([0.3, 0.4]))
        bath = BathSpec(modes, 0.0, -10.0)
        model = ManyFermionVacuum((1.0,), bath)
        ops = build_system_ops(model)
        fam = NoiseFamily(sum(ops.d_ops), modes.couplings, modes.omegas)
        traj = propagate_sse_direct(
            ops, [fam], TimeGrid(1.0, 300), np.array([0.0, 1.0], dtype=complex)
        )
        P = outer_product(traj.psi, traj.psi.parity_flip())
        res_l, res_r = verify_novikov(
            P, modes.couplings, modes.omegas, 1.0, parity_matrix=ops.parity
        )
        assert res_l <= 1e-12
        assert res_r <= 1e-12

    def test_odd_element_rejected(self):
        alg = GrassmannAlgebra(1)
        with pytest.raises(GrassmannParityError):
            verify_novikov(alg.xi(0), np.array([0.3]), np.array([1.0]), 0.5)


class TestDump:
    def test_canonical_listing(self):
        alg = GrassmannAlgebra(1)
        elem = alg.one() + 2.0 * (alg.xi(0) * alg.xis(0))
        text = elem.dump()
        assert "1:" in text and "xi1 xi1*" in text
