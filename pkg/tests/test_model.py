import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from legendre_decomp import (
    Basis,
    ModelState,
    NumericalError,
    RawTensor,
    build_sample_space,
    compute_eta,
    compute_eta_hat,
    compute_psi,
    fisher_matrix,
    kl_divergence,
    normalize,
    reconstruct_q,
)
from legendre_decomp.model import log_q_grid, parameter_matrix, prefix_sums, suffix_sums
from legendre_decomp.tensor_core import NormalizedTensor

import oracles

LOG23 = (math.log(2), math.log(3))


def basis22():
    return Basis(build_sample_space((2, 2)), [(1, 2), (2, 1)])


def instance(rng, **kw):
    shape, omega, p, rows, theta = oracles.random_instance(rng, **kw)
    space = build_sample_space(shape)
    return space, NormalizedTensor(space, p), Basis(space, rows), omega, theta


class TestCumulativeSums:
    def test_against_loops(self, rng):
        a = rng.normal(size=(3, 4, 2))
        pre, suf = prefix_sums(a), suffix_sums(a)
        for v in np.ndindex(a.shape):
            assert pre[v] == pytest.approx(a[: v[0] + 1, : v[1] + 1, : v[2] + 1].sum())
            assert suf[v] == pytest.approx(a[v[0]:, v[1]:, v[2]:].sum())

    def test_input_untouched(self):
        a = np.arange(6.0).reshape(2, 3)
        prefix_sums(a)
        suffix_sums(a)
        assert_array_equal(a, np.arange(6.0).reshape(2, 3))


class TestPsi:
    def test_zero_theta(self):
        b = Basis(build_sample_space((2, 2, 2)), [(2, 1, 1), (1, 2, 2)])
        assert compute_psi(b, np.zeros(2)) == pytest.approx(math.log(8), abs=1e-15)

    def test_empty_basis(self):
        b = Basis(build_sample_space((3, 5), exclude={(2, 2)}), [])
        assert compute_psi(b, []) == pytest.approx(math.log(14), abs=1e-15)

    def test_enumerated(self):
        assert compute_psi(basis22(), LOG23) == pytest.approx(math.log(12), abs=1e-14)

    def test_large_theta_is_stable(self):
        b = basis22()
        psi = compute_psi(b, [800.0, 800.0])
        assert psi == pytest.approx(1600.0 + math.log1p(2 * math.exp(-800) + math.exp(-1600)))

    def test_rejects_bad_theta(self):
        with pytest.raises(NumericalError):
            compute_psi(basis22(), [np.nan, 0.0])
        with pytest.raises(ValueError):
            compute_psi(basis22(), [0.0])

    def test_matches_oracle(self, rng):
        for _ in range(10):
            space, _, basis, omega, theta = instance(rng)
            z = oracles.zeta(basis.as_tuples(), omega).T.astype(float) @ theta
            assert compute_psi(basis, theta) == pytest.approx(np.log(np.exp(z).sum()), rel=1e-13)


class TestReconstruct:
    def test_zero_theta_uniform(self):
        b = Basis(build_sample_space((3, 2)), [(2, 2), (3, 1)])
        assert_allclose(reconstruct_q(b, np.zeros(2)).probs, np.full(6, 1 / 6), rtol=1e-15)

    def test_enumerated(self):
        q = reconstruct_q(basis22(), LOG23)
        assert_allclose(q.probs, np.array([1, 2, 3, 6]) / 12, rtol=1e-14)

    def test_total_mass_carried(self):
        assert reconstruct_q(basis22(), LOG23, total_mass=12.0).total_mass == 12.0

    def test_matches_oracle_with_exclusions(self, rng):
        space = build_sample_space((3, 4, 2), exclude={(2, 3, 1), (3, 4, 2), (1, 2, 2)})
        omega = list(space)
        rows = [omega[i] for i in rng.choice(np.arange(1, len(omega)), 9, replace=False)]
        basis = Basis(space, rows)
        theta = rng.normal(size=len(basis))
        assert_allclose(
            reconstruct_q(basis, theta).probs,
            oracles.q(basis.as_tuples(), omega, theta),
            rtol=1e-12,
        )

    def test_full_basis_hits_any_distribution(self, rng):
        space = build_sample_space((3, 3))
        target = rng.dirichlet(np.ones(9))
        # Moebius inversion of log p on the grid gives the exact parameters
        logs = np.log(target).reshape(3, 3)
        mu = logs.copy()
        mu[1:, :] -= logs[:-1, :]
        mu[:, 1:] -= logs[:, :-1]
        mu[1:, 1:] += logs[:-1, :-1]
        basis = Basis(space, list(space)[1:])
        q = reconstruct_q(basis, mu.ravel()[1:])
        assert_allclose(q.probs, target, rtol=1e-12)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-30, 30), min_size=8, max_size=8),
    st.integers(0, 2**8 - 1),
)
def test_reconstruct_positive_and_normalized(thetas, subset):
    space = build_sample_space((3, 3))
    rows = [v for k, v in enumerate(list(space)[1:]) if subset >> k & 1]
    basis = Basis(space, rows)
    q = reconstruct_q(basis, thetas[: len(basis)])
    assert np.all(q.probs > 0)
    assert abs(q.probs.sum() - 1.0) <= 1e-12


class TestEta:
    def test_uniform_counts(self):
        b = Basis(build_sample_space((2, 2)), [(1, 2), (2, 1), (2, 2)])
        q = reconstruct_q(b, np.zeros(3))
        assert_allclose(compute_eta(q, b), [0.5, 0.5, 0.25])

    def test_point_masses(self):
        space = build_sample_space((2, 3, 2))
        b = Basis(space, [(1, 1, 2), (2, 3, 2), (1, 2, 1)])
        bottom = np.zeros(len(space))
        bottom[0] = 1.0
        assert_array_equal(compute_eta(NormalizedTensor(space, bottom), b), 0.0)
        top = np.zeros(len(space))
        top[-1] = 1.0
        assert_array_equal(compute_eta(NormalizedTensor(space, top), b), 1.0)

    def test_eta_hat_example(self, p22, indep_basis):
        assert_allclose(compute_eta_hat(p22, indep_basis), [0.3, 0.5])

    def test_eta_hat_uniform_counts_up_sets(self):
        space = build_sample_space((3, 4))
        p = normalize(RawTensor(np.ones((3, 4))))
        b = Basis(space, [(2, 3), (3, 1), (1, 4)])
        assert_allclose(compute_eta_hat(p, b), [3 / 12, 4 / 12, 4 / 12])

    def test_exclusions_skipped(self):
        space = build_sample_space((2, 2), exclude={(2, 2)})
        p = normalize(RawTensor([[1.0, 2.0], [3.0, 100.0]]), space)
        b = Basis(space, [(1, 2), (2, 1)])
        assert_allclose(compute_eta_hat(p, b), [2 / 6, 3 / 6])

    def test_matches_oracle(self, rng):
        for _ in range(10):
            space, p, basis, omega, _ = instance(rng)
            assert_allclose(compute_eta(p, basis), oracles.eta(basis.as_tuples(), omega, p.probs), rtol=1e-12)

    def test_bounds_and_monotone(self, rng):
        for _ in range(10):
            space, p, basis, _, theta = instance(rng)
            eta = compute_eta(reconstruct_q(basis, theta), basis)
            assert np.all((eta >= 0) & (eta <= 1 + 1e-15))
            rows = basis.as_tuples()
            for i, u in enumerate(rows):
                for j, v in enumerate(rows):
                    if all(a <= b for a, b in zip(u, v)):
                        assert eta[i] >= eta[j] - 1e-15


class TestKL:
    def test_identity(self, p22):
        assert kl_divergence(p22, p22) == 0.0

    def test_two_cells(self):
        s = build_sample_space((2,))
        p = NormalizedTensor(s, [0.5, 0.5])
        q = NormalizedTensor(s, [0.25, 0.75])
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.14384, abs=5e-6)

    def test_zero_cells_contribute_nothing(self):
        s = build_sample_space((3,))
        p = NormalizedTensor(s, [0.5, 0.0, 0.5])
        q = NormalizedTensor(s, [0.5, 0.25, 0.25])
        assert kl_divergence(p, q) == pytest.approx(0.5 * math.log(2))
        assert kl_divergence(q, p) == math.inf

    def test_nonnegative_on_random_pairs(self, rng):
        s = build_sample_space((4, 3))
        for _ in range(50):
            p = NormalizedTensor(s, rng.dirichlet(np.ones(12)))
            q = NormalizedTensor(s, rng.dirichlet(np.ones(12)))
            assert kl_divergence(p, q) > 0
            assert kl_divergence(p, p) == 0.0


class TestModelState:
    def test_consistent(self, rng):
        for _ in range(10):
            _, _, basis, _, theta = instance(rng)
            st_ = ModelState.at(basis, theta)
            assert st_.psi == pytest.approx(compute_psi(basis, theta), rel=1e-14, abs=1e-14)
            assert_allclose(st_.q.probs, reconstruct_q(basis, theta).probs, rtol=1e-13)
            assert_allclose(st_.eta, compute_eta(st_.q, basis), rtol=1e-12, atol=1e-15)
            assert abs(st_.q.probs.sum() - 1) <= 1e-12

    def test_with_exclusions(self, rng):
        space = build_sample_space((3, 3, 3), exclude={(3, 3, 3), (2, 1, 2), (1, 3, 1)})
        omega = list(space)
        basis = Basis(space, [omega[i] for i in rng.choice(np.arange(1, len(omega)), 8, replace=False)])
        theta = rng.normal(size=8)
        st_ = ModelState.at(basis, theta)
        assert_allclose(st_.q.probs, oracles.q(basis.as_tuples(), omega, theta), rtol=1e-12)
        assert_allclose(st_.eta, oracles.eta(basis.as_tuples(), omega, st_.q.probs), rtol=1e-12)

    def test_read_only(self):
        st_ = ModelState.at(basis22(), LOG23)
        with pytest.raises(ValueError):
            st_.theta[0] = 1.0
        with pytest.raises(ValueError):
            st_.eta[0] = 1.0


class TestFisher:
    def test_uniform_incomparable_pair(self):
        g = fisher_matrix(ModelState.at(basis22(), [0.0, 0.0]))
        assert g[0, 1] == pytest.approx(0.0, abs=1e-16)
        assert_allclose(np.diag(g), [0.25, 0.25])

    def test_identities(self, rng):
        space = build_sample_space((4, 4))
        basis = Basis(space, [(1, 2), (1, 3), (2, 2), (3, 4), (4, 1)])
        st_ = ModelState.at(basis, rng.normal(size=5))
        g, eta = st_.fisher(), st_.eta
        assert_allclose(np.diag(g), eta - eta**2, rtol=1e-12)
        # (1,2) <= (2,2) <= (3,4)
        for i, j in [(0, 2), (2, 3), (0, 3), (1, 3)]:
            assert g[i, j] == pytest.approx(eta[j] * (1 - eta[i]), rel=1e-12)
        assert_array_equal(g, g.T)
        assert np.linalg.eigvalsh(g).min() > -1e-14

    def test_matches_oracle(self, rng):
        for _ in range(10):
            _, _, basis, omega, theta = instance(rng)
            st_ = ModelState.at(basis, theta)
            assert_allclose(
                fisher_matrix(st_),
                oracles.fisher(basis.as_tuples(), omega, st_.q.probs),
                atol=1e-14,
            )

    def test_empty(self):
        b = Basis(build_sample_space((2, 2)), [])
        assert fisher_matrix(ModelState.at(b, [])).shape == (0, 0)


class TestDerivatives:
    """Finite differences against the analytic eta and Fisher matrix."""

    def test_dpsi_is_eta(self, rng):
        for _ in range(8):
            _, _, basis, _, theta = instance(rng)
            fd = oracles.fd_gradient(lambda t: compute_psi(basis, t), theta, h=1e-5)
            eta = ModelState.at(basis, theta).eta
            assert np.linalg.norm(fd - eta) <= 1e-6 * np.linalg.norm(eta)

    def test_deta_is_fisher(self, rng):
        for _ in range(8):
            _, _, basis, _, theta = instance(rng)
            h = 1e-6
            jac = np.empty((len(basis), len(basis)))
            for k in range(len(basis)):
                d = np.zeros(len(basis))
                d[k] = h
                jac[:, k] = (ModelState.at(basis, theta + d).eta - ModelState.at(basis, theta - d).eta) / (2 * h)
            g = fisher_matrix(ModelState.at(basis, theta))
            assert np.linalg.norm(jac - g) <= 1e-5 * np.linalg.norm(g)

    def test_kl_hessian_is_fisher(self, rng):
        for _ in range(5):
            _, p, basis, omega, theta = instance(rng, max_basis=12)
            rows = basis.as_tuples()
            hess = oracles.fd_hessian(lambda t: oracles.kl(p.probs, rows, omega, t), theta, h=1e-4)
            g = fisher_matrix(ModelState.at(basis, theta))
            assert np.linalg.norm(hess - g) <= 1e-5 * np.linalg.norm(g)


class TestRank:
    @pytest.mark.parametrize("rows, bound", [((1, 6, 11), 3), ((4, 9, 13), 4)])
    def test_basis_on_rows(self, rng, rows, bound):
        space = build_sample_space((15, 12))
        members = [(r, c) for r in rows for c in range(1, 13) if (r, c) != (1, 1)]
        basis = Basis(space, members)
        theta = rng.normal(size=len(basis))
        t = parameter_matrix(basis, theta)
        lq = log_q_grid(basis, theta)
        lower15, lower12 = np.tril(np.ones((15, 15))), np.tril(np.ones((12, 12)))
        assert_allclose(lower15 @ t @ lower12.T, lq, atol=1e-12)
        for m in (t, lq):
            s = np.linalg.svd(m, compute_uv=False)
            assert np.all(s[bound:] <= 1e-8 * s[0])

    def test_matrices_only(self):
        b = Basis(build_sample_space((2, 2, 2)), [(2, 1, 1)])
        with pytest.raises(ValueError):
            parameter_matrix(b, [0.0])

    def test_log_q_excluded_cells(self):
        space = build_sample_space((2, 2), exclude={(2, 2)})
        lq = log_q_grid(Basis(space, [(1, 2)]), [0.5])
        assert lq[1, 1] == -np.inf
        assert np.exp(lq[np.isfinite(lq)]).sum() == pytest.approx(1.0)
