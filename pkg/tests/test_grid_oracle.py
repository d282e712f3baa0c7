import numpy as np
import pytest

from roagrow.grid import GridDomain
from roagrow.oracle import (RoaMask, gap_growth_check, load_mask_pgm, mask_measure,
                            save_mask_csv, save_mask_pgm, sym_diff_measure, true_roa)


class TestGridDomain:
    def test_default_domain_and_resolution(self, grid):
        assert grid.n_cells == 10_000
        c = grid.centers()
        assert c.shape == (10_000, 2)
        assert c[:, 0].min() > -np.pi / 2 and c[:, 0].max() < np.pi / 2
        assert c[:, 1].min() > -2 * np.pi and c[:, 1].max() < 2 * np.pi

    def test_theta_varies_fastest(self, grid):
        c = grid.centers()
        assert c[1, 0] > c[0, 0]          # theta advances
        assert c[1, 1] == c[0, 1]         # omega fixed within a row

    def test_boundary_ring_count(self, grid):
        assert grid.boundary_mask().sum() == 4 * 100 - 4

    def test_origin_cell_is_nearest(self, grid):
        c = grid.centers()
        idx = grid.origin_index()
        d = np.hypot(c[:, 0], c[:, 1])
        assert d[idx] == d.min()

    def test_jitter_stays_in_cell(self, grid):
        rng = np.random.default_rng(0)
        idx = rng.integers(0, grid.n_cells, 500)
        pts = grid.jitter_within(idx, rng)
        c = grid.centers()[idx]
        assert np.all(np.abs(pts[:, 0] - c[:, 0]) <= grid.cell_width_theta / 2)
        assert np.all(np.abs(pts[:, 1] - c[:, 1]) <= grid.cell_width_omega / 2)

    def test_safety_box_scales_extent(self, grid):
        (tlo, thi), (wlo, whi) = grid.safety_box(10.0)
        assert tlo == pytest.approx(-10 * np.pi / 2)
        assert whi == pytest.approx(10 * 2 * np.pi)


class TestTrueRoa:
    def test_global_contraction_is_full(self, grid):
        mask = true_roa(lambda x: 0.5 * x, grid, k_max=200)
        assert mask.fraction == 1.0

    def test_expansion_is_empty_outside_ball(self, grid):
        mask = true_roa(lambda x: 2.0 * x, grid, k_max=200)
        assert mask.fraction < 0.01

    def test_open_loop_pendulum_fraction_tiny(self, params, grid):
        from roagrow.dynamics import step_euler

        mask = true_roa(lambda x: step_euler(x, 0.0, params), grid, k_max=2000)
        assert mask.fraction < 0.01

    def test_initial_lqr_policy_fraction(self, f_initial, grid):
        mask = true_roa(f_initial, grid, k_max=2000)
        assert 0.02 < mask.fraction < 1.0

    def test_monotone_in_k_max(self, f_initial, grid):
        small = true_roa(f_initial, grid, k_max=300)
        big = true_roa(f_initial, grid, k_max=600)
        assert not np.any(small.values & ~big.values)

    def test_fraction_converged_at_default_budget(self, f_initial, grid, cfg):
        base = true_roa(f_initial, grid, k_max=cfg.oracle_kmax)
        more = true_roa(f_initial, grid, k_max=cfg.oracle_kmax + 2000)
        assert abs(base.fraction - more.fraction) < 0.01


class TestMeasures:
    def test_sym_diff_self_is_zero(self, grid):
        rng = np.random.default_rng(1)
        m = RoaMask(rng.random(grid.n_cells) < 0.3, 100, 100)
        assert sym_diff_measure(m, m) == 0.0

    def test_sym_diff_complement_is_one(self, grid):
        m = RoaMask(np.ones(grid.n_cells, dtype=bool), 100, 100)
        n = RoaMask(np.zeros(grid.n_cells, dtype=bool), 100, 100)
        assert sym_diff_measure(m, n) == 1.0

    def test_grid_mismatch_rejected(self):
        a = RoaMask(np.zeros(100, dtype=bool), 10, 10)
        b = RoaMask(np.zeros(25, dtype=bool), 5, 5)
        with pytest.raises(ValueError):
            sym_diff_measure(a, b)

    def test_mask_measure_counts_cells(self):
        values = np.zeros(100, dtype=bool)
        values[:25] = True
        assert mask_measure(RoaMask(values, 10, 10)) == 0.25

    def test_nearby_policies_have_nearby_roas(self, cfg, lqr, params, grid):
        # continuity diagnostic: one crop-radius of threshold change moves the
        # RoA by a bounded amount (logged, loose gate)
        from dataclasses import replace
        from roagrow.dynamics import closed_loop

        pol = cfg.initial_policy(lqr[0])
        bumped = replace(pol, psi=replace(pol.psi, a=pol.psi.a + pol.crop_radius))
        m1 = true_roa(closed_loop(pol, params), grid, k_max=1500)
        m2 = true_roa(closed_loop(bumped, params), grid, k_max=1500)
        d = sym_diff_measure(m1, m2)
        print(f"sym-diff after one crop radius: {d:.4f}")
        assert 0.0 <= d <= 0.5


class TestGapGrowth:
    def test_annulus_matches_prediction(self):
        g100 = GridDomain(-1.1, 1.1, -1.1, 1.1, 100, 100)
        res = gap_growth_check(1.0, [1.05], g100)
        counted, predicted, rel = res[1.05]
        assert predicted == pytest.approx(np.pi * 0.05)
        assert rel < 0.10

    def test_error_roughly_halves_at_double_resolution(self):
        g100 = GridDomain(-1.1, 1.1, -1.1, 1.1, 100, 100)
        g200 = GridDomain(-1.1, 1.1, -1.1, 1.1, 200, 200)
        rel100 = gap_growth_check(1.0, [1.05], g100)[1.05][2]
        rel200 = gap_growth_check(1.0, [1.05], g200)[1.05][2]
        assert rel200 < 0.7 * rel100

    def test_alpha_one_gives_zero_gap(self):
        g = GridDomain(-1.1, 1.1, -1.1, 1.1, 100, 100)
        counted, predicted, _ = gap_growth_check(1.0, [1.0], g)[1.0]
        assert counted == 0.0 and predicted == 0.0

    def test_boundary_touching_rejected(self):
        g = GridDomain(-1.0, 1.0, -1.0, 1.0, 100, 100)
        with pytest.raises(ValueError):
            gap_growth_check(1.0, [1.05], g)


class TestMaskSerialization:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        mask = RoaMask(rng.random(10_000) < 0.4, 100, 100)
        path = tmp_path / "m.pgm"
        save_mask_pgm(mask, path)
        loaded = load_mask_pgm(path)
        assert np.array_equal(loaded.values, mask.values)

    def test_pgm_bytes_deterministic(self, tmp_path):
        mask = RoaMask(np.arange(10_000) % 3 == 0, 100, 100)
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        save_mask_pgm(mask, p1)
        save_mask_pgm(mask, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_csv_shape(self, tmp_path):
        mask = RoaMask(np.zeros(10_000, dtype=bool), 100, 100)
        path = tmp_path / "m.csv"
        save_mask_csv(mask, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 100
        assert all(len(ln.split(",")) == 100 for ln in lines)

    def test_boundary_cells_of_disk(self):
        g = GridDomain(-1, 1, -1, 1, 50, 50)
        c = g.centers()
        mask = RoaMask(np.hypot(c[:, 0], c[:, 1]) < 0.5, 50, 50)
        ring = mask.boundary_cells()
        assert 0 < ring.sum() < mask.values.sum()
        assert np.all(mask.values[ring])
