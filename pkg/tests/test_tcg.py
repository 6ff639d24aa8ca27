import numpy as np
import pytest

import oracles
from videoimprint import (ConfigError, CountingGrid, DomainError, l1_normalize,
                          load_counting_grid, log_softmax, save_counting_grid,
                          tcg_e_step, tcg_fit, tcg_free_energy, tcg_init,
                          tcg_m_step)


def _random_instance(rng, ex=6, ey=6, wx=2, wy=2, sx=2, sy=2, z=3, t=2):
    pi = l1_normalize(rng.random((ex, ey, z)) + 0.1, axis=-1)
    grid = CountingGrid(pi=pi, window=(wx, wy), tessellation=(sx, sy))
    counts = l1_normalize(rng.random((t, sx, sy, z)) + 0.05, axis=-1)
    return grid, counts


class TestEStep:
    def test_uniform_grid_gives_uniform_q(self):
        rng = np.random.default_rng(0)
        z = 4
        grid = CountingGrid(pi=np.full((5, 5, z), 1.0 / z), window=(2, 2),
                            tessellation=(2, 2))
        counts = l1_normalize(rng.random((3, 2, 2, z)), axis=-1)
        q = tcg_e_step(grid, counts)
        assert np.abs(q - 1.0 / 25).max() < 1e-12

    def test_degenerate_geometry_window_is_whole_grid(self):
        # E == W with a single tessellation cell: every placement sums the
        # entire torus, so all placements score identically
        rng = np.random.default_rng(1)
        z = 3
        pi = l1_normalize(rng.random((4, 4, z)) + 0.2, axis=-1)
        grid = CountingGrid(pi=pi, window=(4, 4), tessellation=(1, 1))
        counts = l1_normalize(rng.random((2, 1, 1, z)), axis=-1)
        q = tcg_e_step(grid, counts)
        assert np.abs(q - 1.0 / 16).max() < 1e-12

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        grid, counts = _random_instance(rng)
        scores = oracles.tcg_log_scores(grid.pi, counts, grid.window, grid.tessellation)
        expected = log_softmax(scores.reshape(2, -1), axis=-1).reshape(scores.shape)
        q = tcg_e_step(grid, counts)
        assert np.abs(np.log(q) - expected).max() < 1e-8

    def test_rejects_unnormalized_counts(self):
        rng = np.random.default_rng(3)
        grid, counts = _random_instance(rng)
        with pytest.raises(DomainError):
            tcg_e_step(grid, counts * 2.0)

    def test_q_rows_normalized(self):
        rng = np.random.default_rng(4)
        grid, counts = _random_instance(rng, t=5)
        q = tcg_e_step(grid, counts)
        assert np.abs(q.sum(axis=(1, 2)) - 1.0).max() < 1e-6


class TestMStep:
    def test_point_mass_updates_only_inside_window(self):
        rng = np.random.default_rng(5)
        z = 3
        ex = ey = 6
        grid = CountingGrid(pi=np.full((ex, ey, z), 1.0 / z), window=(2, 2),
                            tessellation=(2, 2))
        counts = l1_normalize(rng.random((1, 2, 2, z)) + 0.1, axis=-1)
        q = np.zeros((1, ex, ey))
        q[0, 1, 2] = 1.0
        new = tcg_m_step(grid, counts, q)
        covered = np.zeros((ex, ey), dtype=bool)
        covered[1:3, 2:4] = True
        outside = new.pi[~covered]
        assert np.abs(outside - 1.0 / z).max() < 1e-12
        assert np.abs(new.pi[covered] - 1.0 / z).max() > 1e-3

    def test_uniform_counts_uniform_grid_fixed_point(self):
        rng = np.random.default_rng(6)
        z = 4
        grid = CountingGrid(pi=np.full((5, 5, z), 1.0 / z), window=(2, 2),
                            tessellation=(1, 1))
        counts = np.full((3, 1, 1, z), 1.0 / z)
        q = tcg_e_step(grid, counts)
        new = tcg_m_step(grid, counts, q)
        assert np.abs(new.pi - 1.0 / z).max() < 1e-12

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(7)
        grid, counts = _random_instance(rng)
        q = tcg_e_step(grid, counts)
        expected = oracles.tcg_m_step(grid.pi, counts, q, grid.window, grid.tessellation)
        new = tcg_m_step(grid, counts, q)
        rel = np.abs(new.pi - expected) / np.abs(expected)
        assert rel.max() < 1e-8

    def test_output_normalized_and_floored(self):
        rng = np.random.default_rng(8)
        grid, counts = _random_instance(rng, t=4)
        q = tcg_e_step(grid, counts)
        new = tcg_m_step(grid, counts, q)
        assert np.abs(new.pi.sum(-1) - 1.0).max() < 1e-6
        assert new.pi.min() >= 1e-10

    def test_rejects_unnormalized_q(self):
        rng = np.random.default_rng(9)
        grid, counts = _random_instance(rng)
        q = np.full((2, 6, 6), 1.0)
        with pytest.raises(DomainError):
            tcg_m_step(grid, counts, q)


class TestFit:
    def test_repeated_frame_shares_argmax_across_frames(self):
        rng = np.random.default_rng(10)
        z = 6
        cell = l1_normalize(rng.random((2, 2, z)) + 0.02, axis=-1)
        counts = np.tile(cell, (5, 1, 1, 1))
        for seed in (1, 2, 3):
            grid, q = tcg_fit(counts, (8, 8), (4, 4), seed=seed)
            argmaxes = {int(np.argmax(q[t])) for t in range(5)}
            assert len(argmaxes) == 1

    def test_two_shot_types_separate(self):
        rng = np.random.default_rng(11)
        z = 8
        shot_a = np.zeros(z)
        shot_a[:4] = rng.random(4) + 0.5
        shot_b = np.zeros(z)
        shot_b[4:] = rng.random(4) + 0.5
        cells = []
        for t in range(8):
            base = shot_a if t % 2 == 0 else shot_b
            noisy = np.maximum(base + rng.normal(0, 0.02, (2, 2, z)), 0)
            cells.append(l1_normalize(noisy, axis=-1))
        counts = np.stack(cells)
        grid, q = tcg_fit(counts, (12, 12), (4, 4), seed=3)
        arg_a = {int(np.argmax(q[t])) for t in range(0, 8, 2)}
        arg_b = {int(np.argmax(q[t])) for t in range(1, 8, 2)}
        assert arg_a.isdisjoint(arg_b)

    def test_zero_iters_returns_init_and_its_e_step(self):
        rng = np.random.default_rng(12)
        _, counts = _random_instance(rng, t=3)
        init = tcg_init(3, (6, 6), (2, 2), (2, 2), seed=9)
        grid, q = tcg_fit(counts, (6, 6), (2, 2), max_iters=0, seed=9)
        assert np.array_equal(grid.pi, init.pi)
        assert np.allclose(q, tcg_e_step(init, counts))

    def test_free_energy_monotone_over_sweeps(self):
        rng = np.random.default_rng(13)
        grid, counts = _random_instance(rng, ex=8, ey=8, wx=4, wy=4, sx=2, sy=2,
                                        z=5, t=6)
        f_prev = tcg_free_energy(grid, counts)
        for _ in range(10):
            q = tcg_e_step(grid, counts)
            grid = tcg_m_step(grid, counts, q)
            f = tcg_free_energy(grid, counts)
            assert f <= f_prev + 1e-6
            f_prev = f

    def test_toroidal_shift_equivariance(self):
        rng = np.random.default_rng(14)
        grid, counts = _random_instance(rng, t=3)
        q = tcg_e_step(grid, counts)
        dx, dy = 2, 3
        shifted = CountingGrid(pi=np.roll(grid.pi, (dx, dy), axis=(0, 1)),
                               window=grid.window, tessellation=grid.tessellation)
        q_shifted = tcg_e_step(shifted, counts)
        assert np.abs(q_shifted - np.roll(q, (dx, dy), axis=(1, 2))).max() < 1e-10

    def test_bad_geometry(self):
        with pytest.raises(ConfigError):
            CountingGrid(pi=np.full((4, 4, 2), 0.5), window=(3, 3),
                         tessellation=(2, 2))
        with pytest.raises(ConfigError):
            CountingGrid(pi=np.full((4, 4, 2), 0.5), window=(6, 4),
                         tessellation=(2, 2))

    def test_seed_determinism(self):
        rng = np.random.default_rng(15)
        _, counts = _random_instance(rng, t=4)
        g1, q1 = tcg_fit(counts, (6, 6), (2, 2), seed=5)
        g2, q2 = tcg_fit(counts, (6, 6), (2, 2), seed=5)
        assert np.array_equal(g1.pi, g2.pi)
        assert np.array_equal(q1, q2)


class TestImprintFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        grid, counts = _random_instance(rng, t=3)
        q = tcg_e_step(grid, counts)
        path = tmp_path / "video.tcgi"
        save_counting_grid(path, grid, q)
        loaded, q_loaded = load_counting_grid(path)
        assert loaded.window == grid.window
        assert loaded.tessellation == grid.tessellation
        assert np.abs(loaded.pi - grid.pi).max() < 1e-6
        assert np.abs(q_loaded - q).max() < 1e-6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tcgi"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(Exception, match="bad magic"):
            load_counting_grid(path)

    def test_size_mismatch(self, tmp_path):
        rng = np.random.default_rng(17)
        grid, counts = _random_instance(rng)
        q = tcg_e_step(grid, counts)
        path = tmp_path / "short.tcgi"
        save_counting_grid(path, grid, q)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(Exception, match="payload size"):
            load_counting_grid(path)
