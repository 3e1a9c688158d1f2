"""
File: test_residual_agg.py
Author: Equipe Data Analytics
Date: 2026-09-28
Version: 1.0
Description: Testes do resíduo ponderado e dos agregadores de cena.
"""

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from analysis.residual_agg import (
    ALL_AGGREGATORS, Aggregator, AggregatorKind, EmptyResidualsError, ResidualWeights, aggregate,
    residuals, score_predictions, scores_for,
)
from models.predictor import PredictionResult, predict_cv_all
from scenes.scene_model import N_SLOTS


def _prediction(pred_rows, true_rows, present_slots=(0,)):
    horizon = len(pred_rows)
    predicted = np.zeros((horizon, N_SLOTS, 3))
    actual = np.zeros((horizon, N_SLOTS, 3))
    present = np.zeros(N_SLOTS, dtype=bool)
    present[list(present_slots)] = True
    for k, (p, t) in enumerate(zip(pred_rows, true_rows)):
        predicted[k, 0] = p
        actual[k, 0] = t
    return PredictionResult('r', predicted, actual, present)


class TestResiduals:
    def test_weighted_example(self):
        # ‖(3, 4)‖ = 5 e |Δv| = 2 com α_vel = 0.5
        e = residuals(_prediction([[3.0, 4.0, 12.0]], [[0.0, 0.0, 10.0]]))
        assert e.shape == (1, 1)
        assert e[0, 0] == pytest.approx(6.0)

    def test_absent_agents_excluded(self):
        pred = _prediction([[0.0, 0.0, 0.0]] * 4, [[1.0, 0.0, 0.0]] * 4, present_slots=(0, 3))
        assert residuals(pred).shape == (4, 2)

    def test_nonnegative(self, synth_corpus):
        scenes, _ = synth_corpus
        for pred in predict_cv_all(scenes[:20]):
            assert np.all(residuals(pred) >= 0.0)

    def test_weights_cannot_both_be_zero(self):
        with pytest.raises(ValidationError):
            ResidualWeights(alpha_pos=0.0, alpha_vel=0.0)
        w = ResidualWeights(alpha_pos=0.0, alpha_vel=1.0)
        e = residuals(_prediction([[3.0, 4.0, 12.0]], [[0.0, 0.0, 10.0]]), w)
        assert e[0, 0] == pytest.approx(2.0)


class TestAggregate:
    @pytest.mark.parametrize('name, expected', [
        ('max', 4.0), ('mean', 2.5), ('q95', 3.85),
    ])
    def test_small_set(self, name, expected):
        assert aggregate([1.0, 2.0, 3.0, 4.0], name).residual_score == pytest.approx(expected)

    def test_topk(self):
        assert aggregate([1.0, 2.0, 3.0, 4.0], Aggregator(AggregatorKind.TOPK, k=2)).residual_score == \
            pytest.approx(3.5)
        # menos de k valores: média de todos
        assert aggregate([1.0, 3.0], Aggregator(AggregatorKind.TOPK, k=5)).residual_score == pytest.approx(2.0)

    def test_singleton(self):
        for agg in ALL_AGGREGATORS:
            assert aggregate([7.0], agg).residual_score == pytest.approx(7.0)

    def test_empty(self):
        with pytest.raises(EmptyResidualsError):
            aggregate([], 'max', scene_id='vazia')

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            Aggregator.parse('median')
        with pytest.raises(ValueError):
            Aggregator(AggregatorKind.TOPK, k=0)

    def test_ordering_on_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(10000):
            e = rng.exponential(size=rng.integers(1, 200))
            mean = aggregate(e, 'mean').residual_score
            top5 = aggregate(e, 'topk').residual_score
            q95 = aggregate(e, 'q95').residual_score
            mx = aggregate(e, 'max').residual_score
            assert mean <= top5 <= mx
            assert mean <= q95 <= mx

    def test_monotone_and_scale_equivariant(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            e = rng.exponential(size=50)
            bumped = e.copy()
            bumped[rng.integers(50)] += rng.uniform(0.1, 2.0)
            for agg in ALL_AGGREGATORS:
                base = aggregate(e, agg).residual_score
                assert aggregate(bumped, agg).residual_score >= base
                assert aggregate(3.0 * e, agg).residual_score == pytest.approx(3.0 * base)

    def test_order_of_values_is_irrelevant(self):
        e = np.random.default_rng(2).exponential(size=30)
        for agg in ALL_AGGREGATORS:
            assert aggregate(e, agg).residual_score == aggregate(e[::-1], agg).residual_score


class TestScoreTable:
    def test_one_row_per_scene_and_aggregator(self, synth_corpus):
        scenes, _ = synth_corpus
        preds = predict_cv_all(scenes[:10])
        table = score_predictions(preds, ['max', 'mean'])
        assert list(table.columns) == ['scene_id', 'aggregator', 'residual_score']
        assert len(table) == 20
        assert set(table['aggregator']) == {'max', 'mean'}

    def test_subset_matches_full_run(self, synth_corpus):
        scenes, _ = synth_corpus
        preds = predict_cv_all(scenes[:15])
        alone = scores_for(score_predictions(preds, ['max']), 'max')
        together = scores_for(score_predictions(preds, ['max', 'mean', 'q95'], threads=3), 'max')
        pd.testing.assert_series_equal(alone, together)
