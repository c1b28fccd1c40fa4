import numpy as np
import pytest
from numpy.testing import assert_allclose

from gossipsum.errors import TopologyError
from gossipsum.topology import (MixingMatrix, build_full_mesh, build_metropolis_hastings,
                                build_ring, make_schedule, random_connected_adjacency,
                                schedule_lookup, spectral_gap, validate)


def ring_adjacency(n):
    adj = np.zeros((n, n), dtype=int)
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = 1
    return adj


def star_adjacency(n):
    adj = np.zeros((n, n), dtype=int)
    adj[0, 1:] = 1
    adj[1:, 0] = 1
    return adj


def ring_rho_oracle(n):
    # Eigenvalues of the circulant (1/3, 1/3, 0, ..., 0, 1/3) in closed form.
    k = np.arange(n)
    lams = 1.0 / 3.0 + (2.0 / 3.0) * np.cos(2.0 * np.pi * k / n)
    inner = np.sort(np.abs(lams))  # drop lambda_1 = 1
    return 1.0 - inner[-2] ** 2 if n > 1 else 1.0


def star_rho_oracle(n):
    # Hub plus n-1 leaves: eigenvalues {1, h/(h+1) x(h-1), 0} with h = n-1.
    h = n - 1
    return 1.0 - (h / (h + 1.0)) ** 2


class TestFullMesh:
    def test_entries_and_rho_n3(self):
        m = build_full_mesh(3)
        assert_allclose(m.w, np.full((3, 3), 1.0 / 3.0), rtol=0, atol=0)
        assert m.rho == 1.0

    def test_single_worker(self):
        m = build_full_mesh(1)
        assert m.w.shape == (1, 1) and m.w[0, 0] == 1.0
        assert m.rho == 1.0

    def test_uniform_rows_n4(self):
        m = build_full_mesh(4)
        assert np.all(m.w == 0.25)
        assert_allclose(m.w.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_zero_workers(self):
        with pytest.raises(ValueError):
            build_full_mesh(0)

    @pytest.mark.parametrize("n", [2, 3, 8, 16])
    def test_rho_exactly_one(self, n):
        assert build_full_mesh(n).rho == 1.0


class TestMetropolisHastings:
    def test_ring4_weights(self):
        m = build_metropolis_hastings(ring_adjacency(4))
        for i in range(4):
            assert_allclose(m.w[i, i], 1.0 / 3.0, atol=1e-15)
            assert_allclose(m.w[i, (i + 1) % 4], 1.0 / 3.0, atol=0)
        assert m.w[0, 2] == 0.0

    def test_star_weights(self):
        m = build_metropolis_hastings(star_adjacency(4))
        assert m.w[0, 1] == 0.25          # min(1/4, 1/2)
        assert m.w[1, 1] == 0.75
        assert m.w[0, 0] == 0.25
        assert validate(m.w).passed

    def test_ring4_rho(self):
        m = build_metropolis_hastings(ring_adjacency(4))
        assert abs(m.rho - 8.0 / 9.0) < 1e-10

    def test_disconnected_rejected(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1] = adj[1, 0] = 1
        adj[2, 3] = adj[3, 2] = 1
        with pytest.raises(TopologyError):
            build_metropolis_hastings(adj)

    def test_asymmetric_rejected(self):
        adj = ring_adjacency(4)
        adj[0, 1] = 0
        with pytest.raises(ValueError):
            build_metropolis_hastings(adj)

    def test_self_loop_rejected(self):
        adj = ring_adjacency(4)
        adj[2, 2] = 1
        with pytest.raises(ValueError):
            build_metropolis_hastings(adj)

    def test_non_binary_rejected(self):
        adj = ring_adjacency(4).astype(float)
        adj[0, 1] = adj[1, 0] = 0.5
        with pytest.raises(ValueError):
            build_metropolis_hastings(adj)

    def test_exact_symmetry_on_irregular_graph(self):
        rng = np.random.default_rng(3)
        adj = random_connected_adjacency(9, rng, extra_edge_prob=0.3)
        m = build_metropolis_hastings(adj)
        assert np.array_equal(m.w, m.w.T)


class TestRing:
    def test_matches_mh_on_cycle(self):
        assert np.array_equal(build_ring(4).w, build_metropolis_hastings(ring_adjacency(4)).w)

    def test_ring5_rows(self):
        m = build_ring(5)
        for i in range(5):
            row = m.w[i]
            assert np.count_nonzero(row) == 3
            assert_allclose(row[row > 0], 1.0 / 3.0, atol=1e-15)

    def test_ring3_is_full_mesh(self):
        assert_allclose(build_ring(3).w, build_full_mesh(3).w, atol=1e-12)

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_too_small(self, n):
        with pytest.raises(ValueError):
            build_ring(n)


class TestSpectralGap:
    def test_full_mesh_eight(self):
        assert spectral_gap(build_full_mesh(8).w) == 1.0

    def test_identity_is_disconnected(self):
        assert spectral_gap(np.eye(5)) == 0.0

    def test_ring4_against_circulant_oracle(self):
        got = spectral_gap(build_ring(4).w)
        assert abs(got - 8.0 / 9.0) < 1e-10
        assert abs(got - ring_rho_oracle(4)) < 1e-10

    @pytest.mark.parametrize("n", [5, 8, 16])
    def test_rings_against_circulant_oracle(self, n):
        assert abs(build_ring(n).rho - ring_rho_oracle(n)) < 1e-10

    @pytest.mark.parametrize("n", [4, 8])
    def test_stars_against_closed_form(self, n):
        m = build_metropolis_hastings(star_adjacency(n))
        assert abs(m.rho - star_rho_oracle(n)) < 1e-10

    def test_asymmetric_rejected(self):
        w = np.array([[0.5, 0.5], [0.4, 0.6]])
        with pytest.raises(ValueError):
            spectral_gap(w)

    @pytest.mark.parametrize("n", [4, 8, 16])
    def test_rho_drops_from_mesh_to_ring(self, n):
        assert build_full_mesh(n).rho > build_ring(n).rho > 0.0


class TestValidate:
    def test_constructed_matrices_pass(self):
        assert validate(build_ring(4).w).passed
        assert validate(build_full_mesh(7).w).passed

    def test_row_sum_violation_measured(self):
        w = build_full_mesh(4).w.copy()
        w[0, 0] += 0.01
        report = validate(w)
        assert not report.passed
        assert not report.row_sums_ok
        assert_allclose(report.row_sum_violation, 0.01, atol=1e-12)

    def test_asymmetric_perturbation_fails_symmetry(self):
        w = build_full_mesh(4).w.copy()
        w[0, 1] += 1e-6
        w[0, 0] -= 1e-6
        report = validate(w)
        assert not report.symmetric_ok
        assert report.row_sums_ok

    def test_negative_entry_flagged(self):
        w = np.array([[1.2, -0.2], [-0.2, 1.2]])
        report = validate(w)
        assert not report.entries_ok
        assert report.symmetric_ok


class TestMixingProperties:
    """Mean preservation and contraction for every construction."""

    def matrices(self, n):
        rng = np.random.default_rng(100 + n)
        return [
            build_full_mesh(n),
            build_ring(n),
            build_metropolis_hastings(star_adjacency(n)),
            build_metropolis_hastings(random_connected_adjacency(n, rng)),
        ]

    @pytest.mark.parametrize("n", [4, 8, 16])
    def test_mean_preserved(self, n):
        rng = np.random.default_rng(n)
        for m in self.matrices(n):
            x = rng.normal(size=(6, n))
            assert_allclose((x @ m.w).mean(axis=1), x.mean(axis=1), atol=1e-12)

    @pytest.mark.parametrize("n", [4, 8, 16])
    def test_contraction_bounded_by_gap(self, n):
        rng = np.random.default_rng(50 + n)
        for m in self.matrices(n):
            for _ in range(25):
                x = rng.normal(size=(5, n))
                dev = x - x.mean(axis=1, keepdims=True)
                before = np.sum(dev * dev)
                mixed = dev @ m.w
                after = np.sum(mixed * mixed)
                assert after <= (1.0 - m.rho) * before + 1e-9


class TestSchedule:
    def test_lookup_on_boundaries(self):
        mesh, ring = build_full_mesh(4), build_ring(4)
        sched = make_schedule([(50, mesh), (100, ring)])
        assert schedule_lookup(sched, 49) is mesh
        assert schedule_lookup(sched, 50) is ring
        assert schedule_lookup(sched, 0) is mesh
        assert schedule_lookup(sched, 99) is ring

    def test_single_entry(self):
        mesh = build_full_mesh(3)
        sched = make_schedule([(10, mesh)])
        for epoch in (0, 5, 9):
            assert sched.lookup(epoch) is mesh

    def test_out_of_range(self):
        sched = make_schedule([(10, build_full_mesh(3))])
        with pytest.raises(ValueError):
            sched.lookup(10)
        with pytest.raises(ValueError):
            sched.lookup(-1)

    def test_gap_rejected(self):
        mesh = build_full_mesh(3)
        with pytest.raises(ValueError):
            make_schedule([(10, mesh), (10, mesh)])

    def test_mismatched_n_rejected(self):
        with pytest.raises(ValueError):
            make_schedule([(5, build_full_mesh(3)), (10, build_full_mesh(4))])


class TestRandomConnected:
    @pytest.mark.parametrize("seed", range(5))
    def test_always_buildable(self, seed):
        rng = np.random.default_rng(seed)
        adj = random_connected_adjacency(10, rng)
        m = build_metropolis_hastings(adj)   # connectivity checked inside
        assert m.rho > 0.0


def test_mixing_matrix_is_immutable():
    m = build_full_mesh(3)
    with pytest.raises(ValueError):
        m.w[0, 0] = 2.0
