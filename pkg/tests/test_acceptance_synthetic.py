"""
File: test_acceptance_synthetic.py
Author: Equipe Data Analytics
Date: 2026-09-30
Version: 1.0
Description: Aceitação ponta a ponta sobre 2.000 cenas sintéticas (10% anômalas):
             detecção, estabilidade, padrão de sinais do alinhamento, contraste
             anômalas vs normais e sobreposição com os baselines.
"""

import pytest

from analysis.eval_suite import stability_sweep
from models.iso_forest import ForestConfig
from pipeline.manifest import BASELINES_FILE, EVAL_FILE, SCORES_FILE
from pipeline.run_pipeline import PipelineConfig, run_pipeline, scores_by_aggregator
from scenes.synth_traffic import SynthConfig
from utils.json_utils import load_json, read_table_csv

pytestmark = pytest.mark.slow

SUBTLE_KINDS = ('LateralDrift', 'FollowInstability')


@pytest.fixture(scope='module')
def acceptance_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp('acceptance')
    cfg = PipelineConfig(synth=SynthConfig(n_scenes=2000, anomaly_fraction=0.1), predictor='cv', seed=7)
    run_pipeline(cfg, run_dir)
    return run_dir, load_json(run_dir / EVAL_FILE), load_json(run_dir / BASELINES_FILE)


def test_detection_on_injected_anomalies(acceptance_run):
    _, evaluation, _ = acceptance_run
    metrics = evaluation['detection']['max@0.15']
    assert metrics['n_anomalies'] == 200
    assert metrics['recall'] >= 0.70
    assert metrics['lift'] >= 4.0


def test_rankings_are_stable(acceptance_run):
    _, evaluation, _ = acceptance_run
    means = [r for r in evaluation['stability'] if r['pair'] == 'mean']
    assert len(means) == 4
    for row in means:
        assert row['kendall_tau'] >= 0.95, row
        assert row['jaccard_at_k'] >= 0.90, row
    selection = evaluation['selection']
    assert selection['qualified']
    assert selection['mean_tau'] >= 0.95


def test_shared_fit_is_exactly_stable(acceptance_run):
    run_dir, _, _ = acceptance_run
    scores = scores_by_aggregator(read_table_csv(run_dir / SCORES_FILE), ['max'])
    rows = stability_sweep(scores, cfg=ForestConfig(n_trees=200, seed=1), refit=False)
    assert all(r.kendall_tau == 1.0 for r in rows)


def test_alignment_sign_pattern(acceptance_run):
    _, evaluation, _ = acceptance_run
    rho = {r['proxy']: r['spearman_rho'] for r in evaluation['alignment'] if r['aggregator'] == 'max'}
    assert rho['harsh_closing_ratio'] > 0
    assert rho['lateral_excursion'] > 0
    assert rho['rel_speed_std'] > 0
    assert rho['min_long_gap'] < 0
    assert rho['min_ttc'] < 0


def test_flagged_scenes_are_riskier(acceptance_run):
    _, evaluation, _ = acceptance_run
    contrast = {r['metric']: r for r in evaluation['contrast']}
    assert contrast['min_ttc']['anomalous_mean'] < contrast['min_ttc']['normal_mean']
    assert contrast['max_acc']['anomalous_mean'] > contrast['max_acc']['normal_mean']


def test_overlap_with_baselines(acceptance_run):
    _, _, baselines = acceptance_run
    overlap = baselines['overlap']
    assert overlap['unique_ours'] > 0
    assert overlap['unique_ours'] + overlap['ours_ttc_only'] + overlap['ours_if_only'] + overlap['ours_both'] \
        == overlap['ours_total']

    by_label = baselines['overlap_by_label']

    def subtle_fraction(partition):
        return sum(r['fraction'] for r in by_label if r['partition'] == partition and r['kind'] in SUBTLE_KINDS)

    assert subtle_fraction('unique_ours') > subtle_fraction('ttc_threshold')
