import numpy as np
import pytest

from sbridge import (
    DegenerateBridgeError,
    InvalidParameterError,
    JumpPath,
    NoiseSchedule,
    Prior,
    ReferenceProcess,
    geometric_schedule,
    pinned_kernel,
    pinned_rate,
    sample_bridge_path,
)
from sbridge.bridge import (
    backward_pinned_kernels_all,
    pinned_kernel_matrix,
    pinned_kernels_all,
    sample_bridge_states,
)


class TestPinnedKernel:
    def test_terminal_time_forces_endpoint(self, small_process):
        sched, prior = small_process.schedule, small_process.prior
        k = pinned_kernel(sched, prior, 0.5, 1.0, z=2)
        expected = np.zeros((4, 4))
        expected[:, 2] = 1.0
        np.testing.assert_allclose(k.entries, expected, atol=1e-12)

    def test_rows_stochastic(self, small_process):
        for z in range(4):
            for (i, j) in ((0, 1), (10, 30), (0, 50)):
                k = pinned_kernel_matrix(small_process, i, j, z)
                np.testing.assert_allclose(k.sum(axis=1), 1.0, atol=1e-12)
                assert np.all(k >= 0)

    def test_small_noise_self_transition(self):
        sched = geometric_schedule(100, 0.999)  # retention ratio near 1
        prior = Prior.uniform(3)
        proc = ReferenceProcess(sched, prior)
        k = pinned_kernel_matrix(proc, 0, 1, z=0)
        assert k[0, 0] > 0.999

    def test_chapman_kolmogorov_of_pinned_chain(self, rng):
        abar = np.concatenate([[1.0], np.sort(rng.uniform(0.2, 0.99, 20))[::-1]])
        sched = NoiseSchedule.from_alpha_bar(abar)
        prior = Prior(rng.dirichlet(np.ones(3) * 5.0))
        proc = ReferenceProcess(sched, prior)
        for z in range(3):
            for (i, j, k) in ((0, 5, 11), (2, 9, 20), (0, 10, 20)):
                lhs = pinned_kernel_matrix(proc, i, j, z) @ pinned_kernel_matrix(proc, j, k, z)
                np.testing.assert_allclose(lhs, pinned_kernel_matrix(proc, i, k, z), atol=1e-12)

    def test_h_transform_identity(self, small_process):
        # P(x,y;z) * P_{t:tau}(x,z) == P(x,y) * P_{t:tau}(y,z) elementwise
        proc = small_process
        n = proc.n_steps
        i, j = 10, 25
        pins = pinned_kernels_all(proc, i, j)
        for z in range(proc.d):
            lhs = pins[z] * proc.kernel(i, n)[:, z][:, None]
            rhs = proc.kernel(i, j) * proc.kernel(j, n)[:, z][None, :]
            np.testing.assert_allclose(lhs, rhs, atol=1e-13)

    def test_mixture_identity(self, small_process):
        # mixing pinned kernels by the chain's own endpoint law returns the kernel
        proc = small_process
        n = proc.n_steps
        i, j = 5, 20
        pins = pinned_kernels_all(proc, i, j)
        weights = proc.kernel(i, n)  # (x, z)
        mixed = np.einsum("xz,zxy->xy", weights, pins)
        np.testing.assert_allclose(mixed, proc.kernel(i, j), atol=1e-12)

    def test_degenerate_bridge_raises(self):
        abar = np.ones(6)  # no noise at all: off-diagonal endpoints unreachable
        sched = NoiseSchedule.from_alpha_bar(abar)
        proc = ReferenceProcess(sched, Prior.uniform(2))
        with pytest.raises(DegenerateBridgeError):
            pinned_kernel_matrix(proc, 0, 3, z=1)


class TestPinnedRate:
    def test_rows_sum_to_zero(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            sched = geometric_schedule(40, float(r.uniform(0.2, 0.6)))
            prior = Prior(r.dirichlet(np.ones(4) * 5.0))
            s = float(r.integers(1, 39)) * sched.dt
            z = int(r.integers(0, 4))
            a = pinned_rate(sched, prior, s, z).entries
            np.testing.assert_allclose(a.sum(axis=1), 0.0, atol=1e-10)
            assert np.all(a[~np.eye(4, dtype=bool)] >= 0)

    def test_entries_finite(self, small_process):
        for z in range(4):
            a = pinned_rate(small_process.schedule, small_process.prior, 0.5, z)
            assert np.all(np.isfinite(a.entries))

    def test_generator_kernel_consistency(self, rng):
        from sbridge.bridge import pinned_rate_matrix

        fine = geometric_schedule(512, 0.3)
        prior = Prior(rng.dirichlet(np.ones(3) * 5.0))
        errs = []
        for factor in (8, 4, 2):
            coarse = fine.subsample(factor)
            proc = ReferenceProcess(coarse, prior)
            k_at = coarse.index_of(0.25)
            kern = pinned_kernel_matrix(proc, k_at, k_at + 1, z=1)
            approx = np.eye(3) + pinned_rate_matrix(proc, k_at, z=1) * coarse.dt
            errs.append(np.abs(kern - approx).max())
        for a, b in zip(errs, errs[1:]):
            assert 3.0 <= a / b <= 5.0


class TestBackwardPinned:
    def test_rows_stochastic(self, small_process):
        b = backward_pinned_kernels_all(small_process, 10, 11)
        np.testing.assert_allclose(b.sum(axis=2), 1.0, atol=1e-12)

    def test_bayes_identity(self, small_process):
        # P(X_i = x | X_j = y, X_0 = x0) * P_{0:j}(x0, y) == P_{0:i}(x0, x) P_{i:j}(x, y)
        proc = small_process
        i, j = 7, 19
        b = backward_pinned_kernels_all(proc, i, j)
        for x0 in range(proc.d):
            lhs = b[x0] * proc.kernel(0, j)[x0][:, None]
            rhs = proc.kernel(0, i)[x0][None, :] * proc.kernel(i, j).T
            np.testing.assert_allclose(lhs, rhs, atol=1e-13)


class TestSampling:
    def test_endpoint_always_hit(self, small_process):
        states = sample_bridge_states(small_process, 1, 3, 10_000, np.random.default_rng(0))
        assert (states[:, -1] == 3).all()
        assert (states[:, 0] == 1).all()

    def test_no_noise_limit_constant_path(self):
        sched = geometric_schedule(50, 1.0 - 1e-9)
        proc = ReferenceProcess(sched, Prior.uniform(3))
        states = sample_bridge_states(proc, 2, 2, 200, np.random.default_rng(1))
        assert (states == 2).all()

    def test_midpoint_marginal_matches_analytic(self, small_process):
        n_paths = 100_000
        x0, z, mid = 1, 3, 25
        states = sample_bridge_states(small_process, x0, z, n_paths, np.random.default_rng(42))
        analytic = pinned_kernel_matrix(small_process, 0, mid, z)[x0]
        emp = np.bincount(states[:, mid], minlength=4) / n_paths
        sigma = np.sqrt(analytic * (1 - analytic) / n_paths)
        assert np.all(np.abs(emp - analytic) <= 3.0 * sigma)

    def test_jump_path_structure(self, small_process):
        path = sample_bridge_path(
            small_process.schedule, small_process.prior, 0, 2, np.random.default_rng(5)
        )
        assert path.start == 0
        assert path.end == 2
        assert np.all(np.diff(path.times) > 0)
        assert np.all(path.states[1:] != path.states[:-1])

    def test_jump_path_csv(self, tmp_path):
        path = JumpPath(times=np.array([0.25, 0.5]), states=np.array([0, 1, 0]))
        out = tmp_path / "path.csv"
        path.to_csv(out, labels=["a", "b"])
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "t,state_label"
        assert lines[1].endswith(",a")
        assert len(lines) == 4

    def test_jump_path_validation(self):
        with pytest.raises(InvalidParameterError):
            JumpPath(times=np.array([0.2, 0.2]), states=np.array([0, 1, 2]))
        with pytest.raises(InvalidParameterError):
            JumpPath(times=np.array([0.2]), states=np.array([0, 0]))
