"""
File: report.py
Author: Equipe Data Analytics
Date: 2026-09-24
Version: 1.0
Description: Consolida as saídas de uma execução em report.json (validado pelo
             schema) e summary.md com as tabelas de estabilidade, alinhamento,
             contraste anômalo vs normal, centros de cluster e sobreposição.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pipeline.manifest import (
    BASELINES_FILE, CLUSTERS_FILE, EVAL_FILE, REPORT_FILE, SUMMARY_FILE, SUCCESS, RunManifest, validator_for,
)
from utils.json_utils import InvalidJsonError, load_json, write_json
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

CLUSTER_HEADERS = ['Max Δx', 'Mean Δx', 'Std Δx', 'Max v', 'Mean v', 'Std v']
CONTRAST_LABELS = {
    'min_ttc': 'Min TTC (s)',
    'min_dist': 'Min Dist (m)',
    'max_dv': 'Max Δv (m/s)',
    'max_acc': 'Max Acc (m/s²)',
}
PROXY_LABELS = {
    'harsh_closing_ratio': 'Harsh closing ratio',
    'lateral_excursion': 'Lateral excursion (m)',
    'min_long_gap': 'Min longitudinal gap (m)',
    'min_ttc': 'Min TTC (s)',
    'rel_speed_std': 'Relative speed std (m/s)',
}


class IncompleteRunError(Exception):
    """Execução sem todas as saídas necessárias ao relatório."""


def _load_required(run_dir: Path, name: str) -> Dict[str, Any]:
    path = run_dir / name
    if not path.exists():
        raise IncompleteRunError(f"Execução incompleta em '{run_dir}': falta {name}")
    return load_json(path)


def _fmt(value: Any, digits: int = 3) -> str:
    if value is None:
        return 'n/d'
    if isinstance(value, str):
        return value
    return f"{value:.{digits}f}"


def _table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> List[str]:
    lines = ['| ' + ' | '.join(headers) + ' |', '|' + '|'.join(['---'] * len(headers)) + '|']
    lines += ['| ' + ' | '.join(str(c) for c in row) + ' |' for row in rows]
    return lines + ['']


def build_report(evaluation: Dict[str, Any], clusters: Dict[str, Any], baselines: Dict[str, Any],
                 manifest: RunManifest) -> Dict[str, Any]:
    report = {
        'tool_version': manifest.tool_version,
        'run_digest': manifest.run_digest,
        'config': manifest.config,
        'selection': evaluation['selection'],
        'stability': evaluation['stability'],
        'alignment': evaluation['alignment'],
        'contrast': evaluation['contrast'],
        'ccdf': evaluation['ccdf'],
        'parameters': evaluation.get('parameters', {}),
        'overlap': baselines['overlap'],
        'baselines': {
            'ttc_threshold': baselines['ttc_threshold'],
            'ttc_cap': baselines['ttc_cap'],
            'contamination': baselines['contamination'],
            'ttc_total': len(baselines['ttc_flags']),
            'if_total': len(baselines['if_flags']),
        },
        'clusters': {key: clusters.get(key) for key in (
            'k', 'source', 'silhouette_by_k', 'centers_raw', 'centers_minmax', 'cluster_sizes',
            'inertia', 'warning', 'exemplars', 'dominant_axes', 'label_agreement',
        ) if key in clusters},
    }
    if 'detection' in evaluation:
        report['detection'] = evaluation['detection']
    if 'overlap_by_label' in baselines:
        report['overlap_by_label'] = baselines['overlap_by_label']
    return report


def render_summary(report: Dict[str, Any]) -> str:
    config = report['config']
    selection = report['selection']
    lines = [
        '# Relatório scenewatch',
        '',
        f"- Fonte: `{config.get('source')}` | Preditor: `{config.get('predictor')}` | Seed: `{config.get('seed')}`",
        f"- run_digest: `{report['run_digest']}`",
        '',
        '## Estabilidade do ranking entre contaminações',
        '',
    ]

    means = [r for r in report['stability'] if r['pair'] == 'mean']
    lines += _table(
        ['Agregador', 'Kendall τ', 'Jaccard', 'Jaccard@K'],
        [[r['aggregator'], _fmt(r['kendall_tau']), _fmt(r['jaccard']), _fmt(r['jaccard_at_k'])] for r in means],
    )
    pairs = [r for r in report['stability'] if r['pair'] != 'mean']
    lines += ['Pares de níveis:', '']
    lines += _table(
        ['Agregador', 'Par', 'Kendall τ', 'Jaccard', 'Jaccard@K'],
        [[r['aggregator'], r['pair'], _fmt(r['kendall_tau']), _fmt(r['jaccard']), _fmt(r['jaccard_at_k'])]
         for r in pairs],
    )

    lines += ['## Alinhamento com medidas de segurança (Spearman ρ médio)', '']
    aggregators = list(dict.fromkeys(r['aggregator'] for r in report['alignment']))
    by_key = {(r['aggregator'], r['proxy']): r for r in report['alignment']}
    proxies = list(dict.fromkeys(r['proxy'] for r in report['alignment']))
    lines += _table(
        ['Medida'] + aggregators,
        [[PROXY_LABELS.get(p, p)] + [_fmt(by_key[(a, p)]['spearman_rho']) for a in aggregators] for p in proxies],
    )

    lines += [
        '## Configuração selecionada',
        '',
        f"- Agregador: `{selection['aggregator']}` | Contaminação: `{selection['contamination']:.2f}` | "
        f"τ médio: {_fmt(selection['mean_tau'])} | |ρ| médio: {_fmt(selection['mean_abs_rho'])}"
        + ('' if selection['qualified'] else ' (nenhum agregador atingiu o limiar de τ; fallback)'),
        '',
        '## Cenas anômalas vs normais',
        '',
    ]
    lines += _table(
        ['Métrica', 'Anômalas', 'Normais'],
        [[CONTRAST_LABELS.get(r['metric'], r['metric']),
          f"{_fmt(r['anomalous_mean'], 2)} ± {_fmt(r['anomalous_std'], 2)}",
          f"{_fmt(r['normal_mean'], 2)} ± {_fmt(r['normal_std'], 2)}"] for r in report['contrast']],
    )

    clusters = report['clusters']
    lines += [f"## Centros dos clusters (min-max), k={clusters.get('k')}", '']
    lines += _table(
        ['Cluster'] + CLUSTER_HEADERS,
        [[f"Cluster {i}"] + [_fmt(v) for v in center] for i, center in enumerate(clusters.get('centers_minmax', []))],
    )
    if clusters.get('warning'):
        lines += [f"> Aviso: {clusters['warning']}", '']

    overlap = report['overlap']
    lines += ['## Sobreposição com os baselines', '']
    lines += _table(
        ['Partição', 'Cenas'],
        [
            ['Nossas (total)', overlap['ours_total']],
            ['Só nossas', overlap['unique_ours']],
            ['Nossas ∩ limiar de TTC apenas', overlap['ours_ttc_only']],
            ['Nossas ∩ IF de features apenas', overlap['ours_if_only']],
            ['Nossas ∩ ambos', overlap['ours_both']],
            ['Limiar de TTC (total)', overlap['ttc_total']],
            ['IF de features (total)', overlap['if_total']],
        ],
    )

    if 'detection' in report:
        lines += ['## Detecção contra rótulos sintéticos', '']
        lines += _table(
            ['Configuração', 'Precisão', 'Recall', 'Lift'],
            [[key, _fmt(m['precision']), _fmt(m['recall']), _fmt(m['lift'], 2)]
             for key, m in report['detection'].items()],
        )
    return '\n'.join(lines)


def emit_report(run_dir: Path, manifest: Optional[RunManifest] = None) -> Tuple[Path, Path]:
    """
    Gera report.json e summary.md a partir das saídas de uma execução.

    Raises:
        IncompleteRunError: saídas ausentes ou etapa anterior com falha
        InvalidJsonError: report.json fora do schema
    """
    run_dir = Path(run_dir)
    if manifest is None:
        try:
            manifest = RunManifest.load(run_dir)
        except InvalidJsonError as e:
            raise IncompleteRunError(f"Execução sem manifesto em '{run_dir}'") from e
    failed = [s.name for s in manifest.stages if s.status != SUCCESS]
    if failed:
        raise IncompleteRunError(f"Execução com etapas em falha: {failed}")

    evaluation = _load_required(run_dir, EVAL_FILE)
    clusters = _load_required(run_dir, CLUSTERS_FILE)
    baselines = _load_required(run_dir, BASELINES_FILE)

    report = build_report(evaluation, clusters, baselines, manifest)
    errors = validator_for('report').validate_document(report)
    if errors:
        raise InvalidJsonError(f"report.json fora do schema: {'; '.join(errors)}")

    report_path = write_json(run_dir / REPORT_FILE, report)
    summary_path = run_dir / SUMMARY_FILE
    summary_path.write_text(render_summary(report) + '\n', encoding='utf-8')
    logger.info(f"Relatório gerado: {report_path} e {summary_path}")
    return report_path, summary_path
