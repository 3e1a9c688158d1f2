"""
File: test_pipeline.py
Author: Equipe Data Analytics
Date: 2026-09-30
Version: 1.0
Description: Testes da orquestração: execução sintética reprodutível, falha de
             etapa preservando saídas anteriores, relatório validado e códigos
             de saída da CLI.
"""

import json

import pytest

from models.iso_forest import ForestConfig
from pipeline.manifest import (
    EVAL_FILE, FAILURE, MANIFEST_FILE, REPORT_FILE, SUCCESS, SUMMARY_FILE, RunManifest, flag_file_name,
    validator_for,
)
from pipeline.report import IncompleteRunError, emit_report
from pipeline.run_pipeline import (
    PipelineConfig, PipelinePaths, StageFailure, load_flag_tables, run_pipeline,
)
from scenes.synth_traffic import SynthConfig
from utils.json_utils import load_json, read_table_csv
import scenewatch

STAGES = ['synth', 'predict', 'score', 'iforest', 'proxies', 'evaluate', 'cluster', 'baselines', 'report']


def small_config(**updates) -> PipelineConfig:
    base = PipelineConfig(
        synth=SynthConfig(n_scenes=200, anomaly_fraction=0.1),
        forest=ForestConfig(n_trees=100),
        seed=7,
    )
    return base.model_copy(update=updates)


@pytest.fixture(scope='module')
def finished_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp('run')
    manifest = run_pipeline(small_config(), run_dir)
    return run_dir, manifest


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv('SCENEWATCH_LOG_DIR', str(tmp_path / 'logs'))


class TestRunPipeline:
    def test_all_stages_succeed(self, finished_run):
        run_dir, manifest = finished_run
        assert [s.name for s in manifest.stages] == STAGES
        assert manifest.completed
        for name in ('scenes.jsonl', 'labels.jsonl', 'preds.jsonl', 'scores.csv', 'proxies.csv',
                     'eval.json', 'clusters.json', 'baselines.json', REPORT_FILE, SUMMARY_FILE, MANIFEST_FILE):
            assert (run_dir / name).exists(), name
        assert len(load_flag_tables(run_dir / 'flags')) == 4 * 3

    def test_reproducible_digest(self, finished_run, tmp_path):
        _, first = finished_run
        second = run_pipeline(small_config(), tmp_path / 'again')
        assert second.run_digest == first.run_digest
        assert second.output_digests() == first.output_digests()

    def test_manifest_round_trip(self, finished_run):
        run_dir, manifest = finished_run
        loaded = RunManifest.load(run_dir)
        assert loaded.run_digest == manifest.run_digest
        assert loaded.stage('iforest').status == SUCCESS

    def test_report_validates_and_summarizes(self, finished_run):
        run_dir, _ = finished_run
        report = load_json(run_dir / REPORT_FILE)
        assert validator_for('report').validate_document(report) == []
        assert report['overlap']['unique_ours'] + report['overlap']['ours_ttc_only'] + \
            report['overlap']['ours_if_only'] + report['overlap']['ours_both'] == report['overlap']['ours_total']
        assert 'detection' in report

        summary = (run_dir / SUMMARY_FILE).read_text(encoding='utf-8')
        means_table = summary.split('## Estabilidade do ranking entre contaminações')[1].split('Pares de níveis')[0]
        rows = [line for line in means_table.splitlines() if line.startswith('| ') and 'Agregador' not in line]
        assert len(rows) == 4

    def test_evaluation_selects_flagged_configuration(self, finished_run):
        run_dir, _ = finished_run
        evaluation = load_json(run_dir / EVAL_FILE)
        assert evaluation['selection']['contamination'] == 0.15
        assert evaluation['selection']['aggregator'] in ('max', 'q95', 'mean', 'topk')
        assert len([r for r in evaluation['stability'] if r['pair'] != 'mean']) == 4 * 3

    def test_aggregator_subset_keeps_shared_outputs(self, tmp_path):
        alone = tmp_path / 'alone'
        both = tmp_path / 'both'
        run_pipeline(small_config(aggregators=['max']), alone)
        run_pipeline(small_config(aggregators=['max', 'mean']), both)
        for c in (0.10, 0.15, 0.20):
            name = flag_file_name('max', c)
            assert (alone / 'flags' / name).read_bytes() == (both / 'flags' / name).read_bytes()

    def test_missing_scenes_fails_in_ingest(self, tmp_path):
        cfg = small_config(source='scenes', paths=PipelinePaths(scenes=str(tmp_path / 'nope.jsonl')))
        with pytest.raises(StageFailure) as exc:
            run_pipeline(cfg, tmp_path / 'run')
        assert exc.value.stage == 'ingest'
        manifest = RunManifest.load(tmp_path / 'run')
        assert manifest.stages[-1].status == FAILURE
        with pytest.raises(IncompleteRunError):
            emit_report(tmp_path / 'run')

    def test_failure_keeps_earlier_outputs(self, tmp_path, monkeypatch):
        from pipeline import run_pipeline as module

        def broken(*args, **kwargs):
            raise RuntimeError('quebrado')

        monkeypatch.setattr(module, 'compute_proxy_table', broken)
        with pytest.raises(StageFailure) as exc:
            run_pipeline(small_config(aggregators=['max']), tmp_path / 'run')
        assert exc.value.stage == 'proxies'
        manifest = RunManifest.load(tmp_path / 'run')
        assert [s.status for s in manifest.stages] == [SUCCESS] * 4 + [FAILURE]
        assert (tmp_path / 'run' / 'scores.csv').exists()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(aggregators=['median'])
        with pytest.raises(ValueError):
            PipelineConfig(contaminations=[0.7])
        with pytest.raises(ValueError):
            PipelineConfig(source='ngsim')


class TestOutputSchemas:
    def test_labeled_report_matches_schema(self, finished_run):
        run_dir, _ = finished_run
        report = load_json(run_dir / REPORT_FILE)
        assert isinstance(report['overlap_by_label'], list)
        assert {row['partition'] for row in report['overlap_by_label']} == {'unique_ours', 'ttc_threshold'}
        assert validator_for('report').validate_document(report) == []

    @pytest.mark.parametrize('name, path', [
        ('scores', 'scores.csv'),
        ('proxies', 'proxies.csv'),
        ('flags', 'flags/' + flag_file_name('max', 0.15)),
    ])
    def test_run_tables_match_schema(self, finished_run, name, path):
        run_dir, _ = finished_run
        table = read_table_csv(run_dir / path)
        assert validator_for(name).validate_dataframe(table) == []

    def test_report_schema_rejects_wrong_sections(self, finished_run):
        run_dir, _ = finished_run
        report = load_json(run_dir / REPORT_FILE)
        validator = validator_for('report')

        as_dict = dict(report, overlap_by_label={'unique_ours': 3})
        assert any('overlap_by_label' in e for e in validator.validate_document(as_dict))

        missing_key = dict(report, overlap_by_label=[{'partition': 'unique_ours', 'kind': 'none'}])
        assert any('overlap_by_label' in e for e in validator.validate_document(missing_key))

        no_stability = {k: v for k, v in report.items() if k != 'stability'}
        assert any('stability' in e for e in validator.validate_document(no_stability))

    def test_table_schema_rejects_missing_column(self, finished_run):
        run_dir, _ = finished_run
        table = read_table_csv(run_dir / 'proxies.csv').drop(columns=['min_ttc'])
        assert any('min_ttc' in e for e in validator_for('proxies').validate_dataframe(table))


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


class TestCli:
    def test_synth_score_chain(self, tmp_path, capsys):
        scenes, labels = tmp_path / 'scenes.jsonl', tmp_path / 'labels.jsonl'
        assert scenewatch.main(['synth', '--n', '40', '--out', str(scenes), '--labels', str(labels)]) == 0
        metrics = _last_json(capsys)
        assert metrics['status'] == 'SUCESSO'
        assert metrics['scenes'] == 40

        preds = tmp_path / 'preds.jsonl'
        assert scenewatch.main(['predict', '--scenes', str(scenes), '--out', str(preds)]) == 0
        scores = tmp_path / 'scores.csv'
        assert scenewatch.main(['score', '--preds', str(preds), '--agg', 'max', 'mean', '--out', str(scores)]) == 0
        flags = tmp_path / 'flags.csv'
        assert scenewatch.main(['iforest', '--scores', str(scores), '--agg', 'max', '--contamination', '0.1',
                                '--out', str(flags)]) == 0
        assert _last_json(capsys)['flagged'] == 4

    def test_stdout_holds_only_metrics(self, tmp_path, capsys):
        scenes, labels = tmp_path / 'scenes.jsonl', tmp_path / 'labels.jsonl'
        assert scenewatch.main(['synth', '--n', '10', '--out', str(scenes), '--labels', str(labels)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])['command'] == 'synth'

        code = scenewatch.main(['run', '--config', str(tmp_path / 'missing.json'), '--out-dir', str(tmp_path)])
        assert code == 1
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])['status'] == 'FALHA'

    def test_full_run_and_report(self, tmp_path, capsys):
        config = tmp_path / 'cfg.json'
        config.write_text(json.dumps(small_config().model_dump(mode='json')), encoding='utf-8')
        out_dir = tmp_path / 'run'
        assert scenewatch.main(['run', '--config', str(config), '--n', '120', '--out-dir', str(out_dir)]) == 0
        assert _last_json(capsys)['run_digest']
        assert scenewatch.main(['report', '--run-dir', str(out_dir)]) == 0

    def test_usage_error_exit_code(self, tmp_path, capsys):
        code = scenewatch.main(['run', '--config', str(tmp_path / 'missing.json'), '--out-dir', str(tmp_path)])
        assert code == 1
        assert _last_json(capsys)['status'] == 'FALHA'

    def test_missing_argument_exits_with_one(self):
        with pytest.raises(SystemExit) as exc:
            scenewatch.main(['score'])
        assert exc.value.code == 1

    def test_stage_failure_exit_code(self, tmp_path, capsys):
        config = tmp_path / 'cfg.json'
        cfg = small_config(source='scenes', paths=PipelinePaths(scenes=str(tmp_path / 'nope.jsonl')))
        config.write_text(json.dumps(cfg.model_dump(mode='json')), encoding='utf-8')
        code = scenewatch.main(['run', '--config', str(config), '--out-dir', str(tmp_path / 'run')])
        assert code == 2
        metrics = _last_json(capsys)
        assert metrics['stage'] == 'ingest'

    def test_report_on_empty_dir(self, tmp_path, capsys):
        assert scenewatch.main(['report', '--run-dir', str(tmp_path)]) == 2
