"""
File: test_eval_suite.py
Author: Equipe Data Analytics
Date: 2026-09-29
Version: 1.0
Description: Testes da avaliação dupla: Kendall/Jaccard contra oráculos,
             varreduras de estabilidade e alinhamento, regra de seleção,
             baselines, partição de sobreposição, CCDF e métricas com rótulos.
"""

import math
from itertools import combinations

import numpy as np
import pandas as pd
import pytest

from analysis.eval_suite import (
    AlignmentRow, NoneQualifyError, SceneSetMismatchError, StabilityRow, alignment_sweep, baselines,
    ccdf, contrast_table, detection_metrics, flag_sweep, jaccard, kendall_tau, overlap_by_label,
    overlap_report, select_config, stability_means, stability_sweep,
)
from analysis.eval_suite import LengthMismatchError as EvalLengthMismatchError
from analysis.safety_proxies import ZeroVarianceError
from models.iso_forest import ForestConfig
from scenes.synth_traffic import AnomalyKind, GroundTruthLabel

# ρ médio por medida (harsh, lateral, gap, TTC, std de velocidade) e τ por agregador
REFERENCE_RHO = {
    'max': [0.312, 0.139, -0.162, -0.235, 0.298],
    'mean': [0.088, 0.156, -0.120, -0.085, 0.194],
    'q95': [0.290, 0.128, -0.137, -0.108, 0.304],
    'topk': [0.256, 0.136, -0.156, -0.211, 0.281],
}
REFERENCE_TAU = {'mean': 0.98, 'q95': 0.97, 'topk': 0.98, 'max': 0.99}
PROXIES = ['harsh_closing_ratio', 'lateral_excursion', 'min_long_gap', 'min_ttc', 'rel_speed_std']


def _tau_oracle(a, b):
    concordant = discordant = ties_a = ties_b = 0
    n = len(a)
    for i, j in combinations(range(n), 2):
        da, db = a[i] - a[j], b[i] - b[j]
        if da == 0:
            ties_a += 1
        if db == 0:
            ties_b += 1
        if da * db > 0:
            concordant += 1
        elif da * db < 0:
            discordant += 1
    n0 = n * (n - 1) / 2
    return (concordant - discordant) / math.sqrt((n0 - ties_a) * (n0 - ties_b))


def _stability(tau_by_agg):
    rows = []
    for agg, tau in tau_by_agg.items():
        for c1, c2 in ((0.10, 0.15), (0.10, 0.20), (0.15, 0.20)):
            rows.append(StabilityRow(agg, c1, c2, tau, 1.0, 1.0))
    return rows


def _alignment(rho_by_agg):
    return [AlignmentRow(agg, proxy, rho) for agg, values in rho_by_agg.items()
            for proxy, rho in zip(PROXIES, values)]


def _table(ids, iso, flagged=None):
    flagged = np.zeros(len(ids), dtype=bool) if flagged is None else flagged
    return pd.DataFrame({'scene_id': ids, 'iso_score': iso, 'flagged': flagged})


class TestKendall:
    def test_examples(self):
        assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6)

    def test_matches_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 500:
            n = int(rng.integers(3, 25))
            a = rng.integers(0, 6, size=n).astype(float)
            b = rng.integers(0, 6, size=n).astype(float)
            if np.all(a == a[0]) or np.all(b == b[0]):
                continue
            assert kendall_tau(a, b) == pytest.approx(_tau_oracle(a, b), abs=1e-9)
            checked += 1

    def test_errors(self):
        with pytest.raises(EvalLengthMismatchError):
            kendall_tau([1, 2, 3], [1, 2])
        with pytest.raises(ZeroVarianceError):
            kendall_tau([1, 1, 1], [1, 2, 3])


class TestJaccard:
    def test_examples(self):
        assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5
        assert jaccard({'a'}, {'a'}) == 1.0
        assert jaccard(set(), set()) == 1.0

    def test_matches_count_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = set(rng.integers(0, 50, size=20).tolist())
            b = set(rng.integers(0, 50, size=20).tolist())
            both = sum(1 for x in a if x in b)
            assert jaccard(a, b) == pytest.approx(both / (len(a) + len(b) - both))


class TestStabilitySweep:
    def _scores(self, n=200):
        rng = np.random.default_rng(3)
        ids = [f"s{i:04d}" for i in range(n)]
        return {
            'max': pd.Series(rng.exponential(size=n), index=ids),
            'mean': pd.Series(rng.exponential(size=n), index=ids),
        }

    def test_shared_fit_is_perfectly_stable(self):
        rows = stability_sweep(self._scores(), cfg=ForestConfig(n_trees=50, seed=1), refit=False)
        assert len(rows) == 2 * 3
        for row in rows:
            assert row.kendall_tau == 1.0
            assert row.jaccard_at_k == 1.0
        nesting = {(r.c1, r.c2): r.jaccard for r in rows if r.aggregator == 'max'}
        assert nesting[(0.10, 0.15)] == pytest.approx(20 / 30)
        assert nesting[(0.10, 0.20)] == pytest.approx(20 / 40)
        assert nesting[(0.15, 0.20)] == pytest.approx(30 / 40)

    def test_refit_is_deterministic(self):
        cfg = ForestConfig(n_trees=50, seed=2)
        a = stability_sweep(self._scores(), cfg=cfg, threads=1)
        b = stability_sweep(self._scores(), cfg=cfg, threads=4)
        assert a == b
        assert all(-1.0 <= r.kendall_tau <= 1.0 and 0.0 <= r.jaccard <= 1.0 for r in a)

    def test_means_row(self):
        means = stability_means(_stability({'max': 0.99}))
        assert len(means) == 1
        assert means[0].pair == 'mean'
        assert means[0].kendall_tau == pytest.approx(0.99)

    def test_needs_two_levels(self):
        with pytest.raises(ValueError):
            stability_sweep(self._scores(), contaminations=[0.15])


class TestAlignment:
    def test_negated_ttc_gives_minus_one(self):
        rng = np.random.default_rng(4)
        ids = [f"s{i}" for i in range(60)]
        ttc = rng.uniform(0.5, 20.0, size=60)
        proxies = pd.DataFrame({'scene_id': ids, 'min_ttc': ttc})
        tables = {('max', c): _table(ids, -ttc) for c in (0.10, 0.15, 0.20)}
        rows = alignment_sweep(tables, proxies, ['min_ttc'])
        assert rows == [AlignmentRow('max', 'min_ttc', pytest.approx(-1.0), True)]

    def test_permuted_proxy_is_uncorrelated(self):
        rng = np.random.default_rng(5)
        ids = [f"s{i}" for i in range(1000)]
        score = rng.normal(size=1000)
        proxies = pd.DataFrame({'scene_id': ids, 'min_ttc': rng.permutation(score)})
        rows = alignment_sweep({('max', 0.15): _table(ids, score)}, proxies, ['min_ttc'])
        assert abs(rows[0].spearman_rho) < 0.1

    def test_constant_proxy_is_undefined(self):
        ids = ['a', 'b', 'c']
        proxies = pd.DataFrame({'scene_id': ids, 'min_ttc': [math.inf] * 3})
        rows = alignment_sweep({('max', 0.15): _table(ids, [0.1, 0.2, 0.3])}, proxies, ['min_ttc'])
        assert not rows[0].defined
        assert math.isnan(rows[0].spearman_rho)

    def test_scene_set_mismatch(self):
        proxies = pd.DataFrame({'scene_id': ['a', 'b'], 'min_ttc': [1.0, 2.0]})
        with pytest.raises(SceneSetMismatchError):
            alignment_sweep({('max', 0.15): _table(['a', 'c'], [0.1, 0.2])}, proxies, ['min_ttc'])


class TestSelectConfig:
    def test_reference_values_select_max(self):
        selection = select_config(_stability(REFERENCE_TAU), _alignment(REFERENCE_RHO))
        assert selection.aggregator == 'max'
        assert selection.contamination == 0.15
        assert selection.qualified
        assert selection.mean_abs_rho == pytest.approx(np.mean(np.abs(REFERENCE_RHO['max'])))

    def test_single_aggregator(self):
        selection = select_config(_stability({'q95': 0.97}), _alignment({'q95': REFERENCE_RHO['q95']}))
        assert selection.aggregator == 'q95'

    def test_tie_breaks_lexicographically(self):
        rho = {'topk': [0.2] * 5, 'mean': [0.2] * 5}
        selection = select_config(_stability({'topk': 0.99, 'mean': 0.99}), _alignment(rho))
        assert selection.aggregator == 'mean'

    def test_stability_gate(self):
        tau = dict(REFERENCE_TAU, max=0.90)
        assert select_config(_stability(tau), _alignment(REFERENCE_RHO)).aggregator == 'topk'

    def test_none_qualify(self):
        tau = {agg: 0.5 for agg in REFERENCE_TAU}
        fallback = select_config(_stability(tau), _alignment(REFERENCE_RHO))
        assert fallback.aggregator == 'max'
        assert not fallback.qualified
        with pytest.raises(NoneQualifyError):
            select_config(_stability(tau), _alignment(REFERENCE_RHO), strict=True)

    def test_pure_function(self):
        args = (_stability(REFERENCE_TAU), _alignment(REFERENCE_RHO))
        assert select_config(*args) == select_config(*args)


def _proxy_frame(n=100, seed=6):
    rng = np.random.default_rng(seed)
    ttc = rng.uniform(2.0, 30.0, size=n)
    ttc[::7] = math.inf
    return pd.DataFrame({
        'scene_id': [f"s{i:03d}" for i in range(n)],
        'min_ttc': ttc,
        'min_dist': rng.uniform(5.0, 40.0, size=n),
        'max_dv': rng.uniform(0.0, 5.0, size=n),
        'max_acc': rng.uniform(0.0, 3.0, size=n),
    })


class TestBaselines:
    def test_ttc_threshold(self):
        proxies = _proxy_frame()
        proxies.loc[0, 'min_ttc'] = 1.4
        proxies.loc[1, 'min_ttc'] = 1.6
        result = baselines(proxies, set(), cfg=ForestConfig(n_trees=50))
        assert 's000' in result.ttc_flags
        assert 's001' not in result.ttc_flags
        assert len(result.if_flags) == 15

    def test_partition_identity(self):
        proxies = _proxy_frame()
        ours = set(proxies['scene_id'].sample(20, random_state=1))
        result = baselines(proxies, ours, cfg=ForestConfig(n_trees=50))
        assert result.overlap.partition_holds
        assert result.overlap.ours_total == 20
        assert 'unique_ids' not in result.overlap.to_dict()

    def test_overlap_report_by_hand(self):
        report = overlap_report({'a', 'b', 'c', 'd'}, {'b', 'd', 'x'}, {'c', 'd', 'y'})
        assert (report.unique_ours, report.ours_ttc_only, report.ours_if_only, report.ours_both) == (1, 1, 1, 1)
        assert report.unique_ids == ['a']
        assert report.partition_holds


class TestCcdfAndContrast:
    def test_ccdf_shape(self):
        table = ccdf([0.5, 0.1, 0.3, 0.3, 0.9])
        assert table['prob'].iloc[0] == 1.0
        assert table['score'].tolist() == [0.1, 0.3, 0.5, 0.9]
        assert table['prob'].tolist() == [1.0, 0.8, 0.4, 0.2]
        assert np.all(np.diff(table['prob']) <= 0)

    def test_ccdf_empty(self):
        assert ccdf([]).empty

    def test_contrast_caps_infinite_ttc(self):
        proxies = pd.DataFrame({
            'scene_id': ['a', 'b', 'c'],
            'min_ttc': [1.0, math.inf, math.inf],
            'min_dist': [2.0, 10.0, 20.0],
            'max_dv': [4.0, 1.0, 1.0],
            'max_acc': [6.0, 0.5, 0.7],
        })
        table = contrast_table(proxies, {'a'}).set_index('metric')
        assert table.loc['min_ttc', 'anomalous_mean'] == 1.0
        assert table.loc['min_ttc', 'normal_mean'] == 100.0
        assert table.loc['min_dist', 'normal_std'] == pytest.approx(5.0)
        assert table.loc['max_acc', 'anomalous_std'] == 0.0


def _labels():
    kinds = [AnomalyKind.SUDDEN_BRAKE, AnomalyKind.LATERAL_DRIFT] + [AnomalyKind.NONE] * 8
    out = []
    for i, kind in enumerate(kinds):
        anomalous = kind is not AnomalyKind.NONE
        out.append(GroundTruthLabel(f"s{i}", anomalous, kind, 30 if anomalous else -1))
    return out


class TestWithLabels:
    def test_detection_metrics(self):
        metrics = detection_metrics({'s0', 's5'}, _labels())
        assert metrics['precision'] == 0.5
        assert metrics['recall'] == 0.5
        assert metrics['lift'] == pytest.approx(2.5)
        assert metrics['recall_by_kind'] == {'SuddenBrake': 1.0, 'LateralDrift': 0.0}

    def test_overlap_by_label(self):
        report = overlap_report({'s0', 's1', 's2'}, {'s0'}, set())
        table = overlap_by_label(report, {'s0'}, _labels()).set_index(['partition', 'kind'])
        assert table.loc[('unique_ours', 'LateralDrift'), 'count'] == 1
        assert table.loc[('unique_ours', 'None'), 'fraction'] == 0.5
        assert table.loc[('ttc_threshold', 'SuddenBrake'), 'count'] == 1


def test_flag_sweep_keys():
    scores = {'max': pd.Series(np.random.default_rng(9).exponential(size=50), index=[f"s{i}" for i in range(50)])}
    tables = flag_sweep(scores, cfg=ForestConfig(n_trees=20))
    assert sorted(tables) == [('max', 0.10), ('max', 0.15), ('max', 0.20)]
    assert [int(t['flagged'].sum()) for _, t in sorted(tables.items())] == [5, 8, 10]
