import numpy as np
import pytest

from sbridge import (
    InvalidParameterError,
    NoiseSchedule,
    Prior,
    ProductProcess,
    ReferenceProcess,
    StateSpace,
    TimeOrderError,
    build_schedule,
    geometric_schedule,
    reference_kernel,
    reference_rate,
)


class TestStateSpaceAndPrior:
    def test_labels_distinct(self):
        with pytest.raises(InvalidParameterError):
            StateSpace(("a", "a"))

    def test_needs_two_labels(self):
        with pytest.raises(InvalidParameterError):
            StateSpace(("a",))

    def test_prior_positive(self):
        with pytest.raises(InvalidParameterError):
            Prior(np.array([0.0, 1.0]))

    def test_prior_sums_to_one(self):
        with pytest.raises(InvalidParameterError):
            Prior(np.array([0.6, 0.6]))


class TestBuildSchedule:
    def test_paper_anchor_095(self):
        sched = build_schedule(100, 0.999)
        assert 0.945 <= sched.alpha_bar[-1] <= 0.955

    def test_paper_anchor_090(self):
        sched = build_schedule(100, 0.99795)
        assert 0.895 <= sched.alpha_bar[-1] <= 0.905

    def test_no_noise_limit(self):
        sched = build_schedule(64, 1.0 - 1e-12)
        assert np.all(sched.alpha_bar > 1.0 - 1e-9)

    def test_alpha_bar_starts_at_one_and_decreases(self):
        sched = build_schedule(80, 0.995)
        assert sched.alpha_bar[0] == 1.0
        assert np.all(np.diff(sched.alpha_bar) <= 0)
        assert np.all(sched.alpha_bar > 0)

    def test_symmetric_retention(self):
        # alpha(t_k) = alpha(tau - t_k): index k mirrors to n - k on the grid
        sched = build_schedule(100, 0.998)
        for k in range(1, 100):
            assert sched.alpha[k] == pytest.approx(sched.alpha[100 - k], abs=1e-15)

    def test_alpha_min_bounds(self):
        with pytest.raises(InvalidParameterError):
            build_schedule(10, 0.0)
        with pytest.raises(InvalidParameterError):
            build_schedule(10, 1.0)

    def test_min_steps(self):
        with pytest.raises(InvalidParameterError):
            build_schedule(1, 0.99)

    def test_csv_export(self, tmp_path):
        sched = build_schedule(10, 0.99)
        path = tmp_path / "schedule.csv"
        sched.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,t,alpha,alpha_bar"
        assert len(lines) == 12
        step, t, alpha, abar = lines[-1].split(",")
        assert int(step) == 10
        assert float(abar) == pytest.approx(sched.alpha_bar[-1], abs=0)

    def test_subsample_keeps_alpha_bar(self):
        sched = build_schedule(64, 0.995)
        coarse = sched.subsample(4)
        assert coarse.n_steps == 16
        np.testing.assert_array_equal(coarse.alpha_bar, sched.alpha_bar[::4])
        with pytest.raises(InvalidParameterError):
            sched.subsample(5)

    def test_index_of_rejects_off_grid(self):
        sched = geometric_schedule(10, 0.5)
        assert sched.index_of(0.3) == 3
        with pytest.raises(InvalidParameterError):
            sched.index_of(0.35)


class TestReferenceKernel:
    def test_zero_elapsed_time_is_identity(self, small_process):
        k = reference_kernel(small_process.schedule, small_process.prior, 0.3, 0.3)
        np.testing.assert_allclose(k.entries, np.eye(4), atol=0)

    def test_direct_substitution_two_states(self):
        # retention ratio 0.3 with uniform prior on two states
        sched = geometric_schedule(10, 0.3)
        prior = Prior.uniform(2)
        k = reference_kernel(sched, prior, 0.0, 1.0)
        np.testing.assert_allclose(k.entries, [[0.65, 0.35], [0.35, 0.65]], atol=1e-15)

    def test_time_order_error(self, small_process):
        with pytest.raises(TimeOrderError):
            reference_kernel(small_process.schedule, small_process.prior, 0.5, 0.3)

    def test_chapman_kolmogorov_random_triples(self, rng):
        sched = build_schedule(100, 0.995)
        prior = Prior(rng.dirichlet(np.ones(5) * 4.0))
        proc = ReferenceProcess(sched, prior)
        for _ in range(1000):
            i, j, k = np.sort(rng.integers(0, 101, size=3))
            lhs = proc.kernel(i, j) @ proc.kernel(j, k)
            np.testing.assert_allclose(lhs, proc.kernel(i, k), atol=1e-12)

    def test_rows_stochastic(self, small_process):
        for j in (0, 10, 50):
            k = small_process.kernel(0, j)
            np.testing.assert_allclose(k.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(k >= 0)

    def test_prior_is_stationary(self, small_process):
        m = small_process.prior.m
        for (i, j) in ((0, 7), (3, 31), (0, 50)):
            np.testing.assert_allclose(m @ small_process.kernel(i, j), m, atol=1e-12)


class TestReferenceRate:
    def test_constant_alpha_bar_gives_zero_rate(self):
        sched = NoiseSchedule.from_alpha_bar(np.ones(11))
        rate = reference_rate(sched, Prior.uniform(3), 0.5)
        np.testing.assert_allclose(rate.entries, 0.0, atol=1e-15)

    def test_row_sums_zero_and_offdiag_nonneg(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            sched = build_schedule(40, float(r.uniform(0.9, 0.999)))
            prior = Prior(r.dirichlet(np.ones(4) * 5.0))
            for k in (1, 13, 39):
                a = reference_rate(sched, prior, k * sched.dt).entries
                np.testing.assert_allclose(a.sum(axis=1), 0.0, atol=1e-12)
                off = a[~np.eye(4, dtype=bool)]
                assert np.all(off >= 0)

    def test_kernel_rate_consistency_second_order(self, rng):
        # halving the step halves the first-order kernel error by 4
        fine = build_schedule(512, 0.999)
        prior = Prior(rng.dirichlet(np.ones(3) * 5.0))
        errs = []
        for factor in (8, 4, 2, 1):
            coarse = fine.subsample(factor)
            proc = ReferenceProcess(coarse, prior)
            k_at = coarse.index_of(0.25)
            kern = proc.kernel(k_at, k_at + 1)
            approx = np.eye(3) + proc.rate(k_at) * coarse.dt
            errs.append(np.abs(kern - approx).max())
        for a, b in zip(errs, errs[1:]):
            assert 3.5 <= a / b <= 4.5


class TestProductProcess:
    def test_kernel_is_kron_of_components(self, rng):
        sched = geometric_schedule(20, 0.4)
        p1 = ReferenceProcess(sched, Prior(rng.dirichlet(np.ones(2) * 4)))
        p2 = ReferenceProcess(sched, Prior(rng.dirichlet(np.ones(3) * 4)))
        prod = ProductProcess([p1, p2])
        np.testing.assert_allclose(
            prod.kernel(2, 9), np.kron(p1.kernel(2, 9), p2.kernel(2, 9)), atol=1e-15
        )
        np.testing.assert_allclose(prod.stationary(), np.kron(p1.stationary(), p2.stationary()))

    def test_requires_shared_grid(self, rng):
        p1 = ReferenceProcess(geometric_schedule(20, 0.4), Prior.uniform(2))
        p2 = ReferenceProcess(geometric_schedule(10, 0.4), Prior.uniform(2))
        with pytest.raises(InvalidParameterError):
            ProductProcess([p1, p2])

    def test_rate_is_kronecker_sum(self, rng):
        sched = geometric_schedule(64, 0.3)
        p1 = ReferenceProcess(sched, Prior.uniform(2))
        p2 = ReferenceProcess(sched, Prior(rng.dirichlet(np.ones(2) * 4)))
        prod = ProductProcess([p1, p2])
        k = 7
        expected = np.kron(p1.rate(k), np.eye(2)) + np.kron(np.eye(2), p2.rate(k))
        np.testing.assert_allclose(prod.rate(k), expected, atol=1e-12)
