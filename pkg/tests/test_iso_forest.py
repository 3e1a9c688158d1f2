"""
File: test_iso_forest.py
Author: Equipe Data Analytics
Date: 2026-09-28
Version: 1.0
Description: Testes da Isolation Forest: c(n), determinismo, pontos plantados e
             marcação por contaminação.
"""

import math

import numpy as np
import pandas as pd
import pytest

from analysis.eval_suite import kendall_tau
from models.iso_forest import (
    DegenerateInputError, ForestConfig, _build_tree, _build_tree_1d, anomaly_score, average_path_length,
    contamination_seed, fit, fit_score_flag, flag, flag_count, harmonic_number, score,
)


class TestPathLength:
    def test_small_values(self):
        assert average_path_length(1) == 0.0
        assert average_path_length(2) == pytest.approx(1.0)
        assert average_path_length(3) == pytest.approx(2 * 1.5 - 4 / 3)

    def test_harmonic_switches_to_log(self):
        assert harmonic_number(10) == pytest.approx(sum(1 / j for j in range(1, 11)))
        assert harmonic_number(1000) == pytest.approx(math.log(1000) + 0.5772156649015329)

    def test_score_at_average_depth_is_half(self):
        assert anomaly_score(average_path_length(256), 256) == pytest.approx(0.5)


class TestFit:
    def test_deterministic_for_seed_and_threads(self):
        points = np.random.default_rng(0).normal(size=(300, 2))
        cfg = ForestConfig(n_trees=50, seed=3)
        a = score(fit(points, cfg, threads=1), points)
        b = score(fit(points, cfg, threads=4), points)
        np.testing.assert_array_equal(a, b)
        assert np.all((a > 0.0) & (a < 1.0))

    def test_planted_outlier_ranks_first(self):
        rng = np.random.default_rng(5)
        values = np.concatenate([rng.normal(0.0, 1.0, 999), [10.0]])
        iso = score(fit(values, ForestConfig(n_trees=200, seed=1)), values)
        assert int(np.argmax(iso)) == 999
        assert iso[999] > 0.6

    def test_planted_outlier_across_seeds(self):
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            values = np.concatenate([rng.normal(0.0, 1.0, 255), [8.0]])
            iso = score(fit(values, ForestConfig(n_trees=100, seed=seed)), values)
            wins += int(np.argmax(iso) == 255)
        assert wins >= 95

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInputError):
            fit([1.0])
        with pytest.raises(DegenerateInputError):
            fit([2.0, 2.0, 2.0])
        with pytest.raises(DegenerateInputError):
            fit([1.0, np.nan, 3.0])

    def test_one_dimensional_builder_matches_general(self):
        values = np.random.default_rng(11).standard_t(3, size=(700, 1))
        for seed in range(5):
            a = _build_tree(values, np.random.default_rng(seed), 256, 8)
            b = _build_tree_1d(values, np.random.default_rng(seed), 256, 8)
            for name in ('feature', 'threshold', 'left', 'right', 'size', 'correction'):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name), err_msg=name)

    def test_one_dimensional_builder_with_replacement(self):
        values = np.arange(20, dtype=float).reshape(-1, 1)
        a = _build_tree(values, np.random.default_rng(3), 64, 6)
        b = _build_tree_1d(values, np.random.default_rng(3), 64, 6)
        np.testing.assert_array_equal(a.threshold, b.threshold)
        assert a.size[0] == b.size[0] == 64

    def test_refit_rankings_stabilize_with_more_trees(self):
        values = np.random.default_rng(2).lognormal(0.0, 0.5, 600)

        def refit_tau(n_trees):
            a = score(fit(values, ForestConfig(n_trees=n_trees, seed=contamination_seed(7, 0))), values)
            b = score(fit(values, ForestConfig(n_trees=n_trees, seed=contamination_seed(7, 1))), values)
            return kendall_tau(a, b)

        few, many = refit_tau(50), refit_tau(2000)
        assert many > few
        assert many >= 0.85

    def test_depth_limit(self):
        assert ForestConfig(subsample=256).depth_limit == 8
        assert ForestConfig(subsample=256, max_depth=3).depth_limit == 3


class TestFlag:
    def test_exact_count(self):
        scores = np.linspace(0.0, 1.0, 1000)
        for c in (0.05, 0.10, 0.15, 0.20):
            flags = flag(scores, c)
            assert flags.sum() == flag_count(1000, c) == round(c * 1000)
            assert scores[flags].min() >= scores[~flags].max()

    def test_round_half_up(self):
        assert flag_count(10, 0.05) == 1
        assert flag_count(30, 0.05) == 2

    def test_ties_broken_by_scene_id(self):
        flags = flag([0.5, 0.5, 0.5, 0.1], 0.5, ['c', 'a', 'b', 'd'])
        assert flags.tolist() == [False, True, True, False]

    def test_nested_across_contamination(self):
        scores = np.random.default_rng(8).uniform(size=500)
        previous = np.zeros(500, dtype=bool)
        for c in (0.05, 0.10, 0.15, 0.20):
            current = flag(scores, c)
            assert np.all(current[previous])
            previous = current

    def test_invalid_contamination(self):
        with pytest.raises(ValueError):
            flag([0.1, 0.2], 0.0)
        with pytest.raises(ValueError):
            flag([0.1, 0.2], 0.6)

    def test_contamination_seeds_differ(self):
        seeds = {contamination_seed(7, i) for i in range(4)}
        assert len(seeds) == 4
        assert contamination_seed(7, 2) == contamination_seed(7, 2)


class TestFitScoreFlag:
    def test_table_is_sorted_and_flags_extreme(self):
        rng = np.random.default_rng(4)
        ids = [f"s{i:03d}" for i in range(200)]
        values = rng.normal(1.0, 0.1, 200)
        values[17] = 5.0
        series = pd.Series(values, index=ids)
        table = fit_score_flag(series.sample(frac=1.0, random_state=1), ForestConfig(n_trees=200, seed=2),
                               contamination=0.05)
        assert list(table.columns) == ['scene_id', 'iso_score', 'flagged']
        assert table['scene_id'].tolist() == ids
        assert table['flagged'].sum() == 10
        assert bool(table.loc[17, 'flagged'])
