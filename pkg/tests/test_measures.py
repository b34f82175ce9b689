import numpy as np
import pytest

from sbridge import (
    Coupling,
    InfiniteDivergenceError,
    InvalidParameterError,
    MarkovChainMeasure,
    Prior,
    ReciprocalMeasure,
    ReferenceProcess,
    geometric_schedule,
    kl_couplings,
    kl_markov_paths,
    kl_reciprocal_to_markov,
    markov_projection,
    markov_projection_reverse,
    reciprocal_joint,
    reciprocal_projection,
)
from conftest import random_coupling


def reference_chain(process, init):
    kernels = tuple(process.kernel(k, k + 1) for k in range(process.n_steps))
    return MarkovChainMeasure(init=init, kernels=kernels)


class TestCoupling:
    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            Coupling(np.array([[0.5, 0.1], [0.1, 0.1]]))
        with pytest.raises(InvalidParameterError):
            Coupling(np.array([[0.7, -0.1], [0.2, 0.2]]))

    def test_csv_roundtrip(self, tmp_path, rng):
        c = random_coupling(rng, 3)
        path = tmp_path / "c.csv"
        c.to_csv(path, labels=["a", "b", "c"])
        back = Coupling.from_csv(path)
        np.testing.assert_array_equal(back.entries, c.entries)

    def test_independent(self):
        c = Coupling.independent([0.3, 0.7], [0.5, 0.5])
        np.testing.assert_allclose(c.entries, [[0.15, 0.15], [0.35, 0.35]])


class TestReciprocalJoint:
    def test_time_zero_returns_coupling(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        np.testing.assert_allclose(reciprocal_joint(rec, 0.0), pi.entries, atol=1e-14)

    def test_terminal_time_is_diagonal(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        j = reciprocal_joint(rec, 1.0)
        np.testing.assert_allclose(j, np.diag(pi.entries.sum(axis=0)), atol=1e-14)

    def test_terminal_marginal_preserved_at_all_times(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        xi = pi.entries.sum(axis=0)
        for k in (0, 3, 17, 50):
            np.testing.assert_allclose(rec.joint_with_terminal(k).sum(axis=0), xi, atol=1e-12)

    def test_mass_one(self, small_process, rng):
        rec = ReciprocalMeasure(coupling=random_coupling(rng, 4), process=small_process)
        for k in (1, 25, 49):
            j = rec.joint_with_terminal(k)
            assert j.min() >= 0
            assert j.sum() == pytest.approx(1.0, abs=1e-12)


class TestMarkovProjection:
    def test_preserves_time_marginals(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        m = markov_projection(rec)
        marg = m.marginals()
        for k in range(small_process.n_steps + 1):
            tv = 0.5 * np.abs(marg[k] - rec.time_marginal(k)).sum()
            assert tv < 1e-10

    def test_reference_coupling_is_fixed_point(self, small_process):
        pi = Coupling(small_process.endpoint_coupling())
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        m = markov_projection(rec)
        for k in range(small_process.n_steps):
            np.testing.assert_allclose(m.kernels[k], small_process.kernel(k, k + 1), atol=1e-12)

    def test_point_mass_coupling_gives_single_bridge(self, small_process):
        # the projection of a delta-delta mixture is the x -> x bridge: its
        # interior marginals are the pinned-kernel marginals, and it reduces
        # to the constant chain only in the no-noise limit
        from sbridge.bridge import pinned_kernel_matrix

        pi = np.zeros((4, 4))
        pi[2, 2] = 1.0
        rec = ReciprocalMeasure(coupling=Coupling(pi), process=small_process)
        m = markov_projection(rec)
        marg = m.marginals()
        assert marg[0][2] == pytest.approx(1.0, abs=1e-12)
        assert marg[-1][2] == pytest.approx(1.0, abs=1e-12)
        for k in (5, 25, 45):
            np.testing.assert_allclose(marg[k], pinned_kernel_matrix(small_process, 0, k, 2)[2], atol=1e-12)
        np.testing.assert_allclose(m.endpoint_coupling().entries, pi, atol=1e-12)

    def test_point_mass_coupling_no_noise_limit_is_constant(self):
        proc = ReferenceProcess(geometric_schedule(20, 1.0 - 1e-10), Prior.uniform(3))
        pi = np.zeros((3, 3))
        pi[1, 1] = 1.0
        m = markov_projection(ReciprocalMeasure(coupling=Coupling(pi), process=proc))
        assert np.all(m.marginals()[:, 1] > 1.0 - 1e-6)

    def test_init_is_row_marginal(self, small_process, rng):
        pi = random_coupling(rng, 4)
        m = markov_projection(ReciprocalMeasure(coupling=pi, process=small_process))
        np.testing.assert_allclose(m.init, pi.entries.sum(axis=1), atol=0)


class TestMarkovProjectionReverse:
    def test_same_endpoint_coupling_as_forward(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        fwd = markov_projection(rec).endpoint_coupling()
        bwd = markov_projection_reverse(rec).endpoint_coupling()
        assert np.abs(fwd.entries - bwd.entries).max() < 1e-8

    def test_unrolled_kernels_match_forward(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        fwd = markov_projection(rec)
        unrolled = markov_projection_reverse(rec).to_forward()
        for k in range(small_process.n_steps):
            np.testing.assert_allclose(unrolled.kernels[k], fwd.kernels[k], atol=1e-8)

    def test_reference_coupling_gives_bayes_reversal(self, small_process):
        pi = Coupling(small_process.endpoint_coupling())
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        rev = markov_projection_reverse(rec)
        # Bayes reversal of the reference chain started from its own time-zero law
        mu0 = pi.entries.sum(axis=1)
        for k in range(small_process.n_steps):
            mu_k = mu0 @ small_process.kernel(0, k)
            mu_k1 = mu0 @ small_process.kernel(0, k + 1)
            bayes = (mu_k[None, :] * small_process.kernel(k, k + 1).T) / mu_k1[:, None]
            np.testing.assert_allclose(rev.kernels[k], bayes, atol=1e-12)

    def test_delta_initial_pins_backward_chain(self, small_process):
        pi = np.zeros((4, 4))
        pi[1] = small_process.endpoint_kernel()[1] / small_process.endpoint_kernel()[1].sum()
        rec = ReciprocalMeasure(coupling=Coupling(pi), process=small_process)
        rev = markov_projection_reverse(rec)
        marg = rev.marginals()
        assert marg[0][1] == pytest.approx(1.0, abs=1e-12)


class TestReciprocalProjection:
    def test_reference_chain_coupling(self, small_process):
        init = small_process.stationary()
        m = reference_chain(small_process, init)
        rec = reciprocal_projection(m, small_process)
        expected = init[:, None] * small_process.endpoint_kernel()
        np.testing.assert_allclose(rec.coupling.entries, expected, atol=1e-12)

    def test_marginals_match_chain(self, small_process, rng):
        pi = random_coupling(rng, 4)
        m = markov_projection(ReciprocalMeasure(coupling=pi, process=small_process))
        rec = reciprocal_projection(m, small_process)
        row, col = rec.coupling.marginals()
        np.testing.assert_allclose(row, m.init, atol=1e-12)
        np.testing.assert_allclose(col, m.marginals()[-1], atol=1e-12)


class TestKlCouplings:
    def test_identity_is_zero(self, rng):
        c = random_coupling(rng, 3)
        assert kl_couplings(c, c) == 0.0

    def test_hand_value(self):
        a = Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]))
        b = Coupling(np.full((2, 2), 0.25))
        assert kl_couplings(a, b) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_infinite_divergence_flagged(self):
        a = Coupling(np.array([[0.5, 0.5], [0.0, 0.0]]))
        b = Coupling(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(InfiniteDivergenceError):
            kl_couplings(a, b)


class TestKlMarkovPaths:
    def test_identity_is_zero(self, small_process, rng):
        m = markov_projection(
            ReciprocalMeasure(coupling=random_coupling(rng, 4), process=small_process)
        )
        assert kl_markov_paths(m, m) == 0.0

    def test_data_processing_vs_couplings(self, rng):
        # path divergence dominates the divergence of the endpoint couplings
        proc = ReferenceProcess(geometric_schedule(20, 0.4), Prior.uniform(3))
        for seed in range(10):
            r = np.random.default_rng(seed)
            a = markov_projection(ReciprocalMeasure(coupling=random_coupling(r, 3), process=proc))
            b = markov_projection(ReciprocalMeasure(coupling=random_coupling(r, 3), process=proc))
            lhs = kl_markov_paths(a, b)
            rhs = kl_couplings(a.endpoint_coupling(), b.endpoint_coupling())
            assert lhs >= rhs - 1e-10

    def test_pythagorean_identity(self, rng):
        # D(mixture || plain Markov) = D(mixture || projection) + D(projection || plain Markov)
        proc = ReferenceProcess(geometric_schedule(50, 0.3), Prior(rng.dirichlet(np.ones(3) * 5)))
        pi = random_coupling(rng, 3)
        rec = ReciprocalMeasure(coupling=pi, process=proc)
        proj = markov_projection(rec)
        plain = reference_chain(proc, pi.entries.sum(axis=1))
        lhs = kl_reciprocal_to_markov(rec, plain)
        rhs = kl_reciprocal_to_markov(rec, proj) + kl_markov_paths(proj, plain)
        assert lhs == pytest.approx(rhs, abs=1e-8)

    def test_projection_optimality(self, small_process, rng):
        pi = random_coupling(rng, 4)
        rec = ReciprocalMeasure(coupling=pi, process=small_process)
        proj = markov_projection(rec)
        best = kl_reciprocal_to_markov(rec, proj)
        init = pi.entries.sum(axis=1)
        for seed in range(25):
            r = np.random.default_rng(seed)
            kernels = tuple(r.dirichlet(np.ones(4), size=4) for _ in range(small_process.n_steps))
            competitor = MarkovChainMeasure(init=init, kernels=kernels)
            assert kl_reciprocal_to_markov(rec, competitor) >= best - 1e-10


class TestExport:
    def test_chain_export_manifest(self, tmp_path, small_process, rng):
        import json

        m = markov_projection(
            ReciprocalMeasure(coupling=random_coupling(rng, 4), process=small_process)
        )
        out = tmp_path / "chain"
        m.export(out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_steps"] == small_process.n_steps
        assert len(manifest["kernels"]) == small_process.n_steps
        first = (out / manifest["kernels"][0]).read_text().strip().split("\n")
        assert len(first) == 5
