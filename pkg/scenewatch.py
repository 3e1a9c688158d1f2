#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
scenewatch - detecção de cenas de direção críticas sem rótulos

Autor: Equipe Data Analytics
Data: 2026-09-26
Versão: 1.0.0

Subcomandos: ingest, synth, train, predict, score, iforest, proxies, evaluate,
cluster, run (ponta a ponta) e report. Ao final cada comando imprime uma linha
JSON com as métricas da execução.

Códigos de saída: 0 sucesso, 1 erro de uso ou de configuração, 2 falha de etapa.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional, Type

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

ROOT_PATH = Path(__file__).resolve().parent
if str(ROOT_PATH) not in sys.path:
    sys.path.insert(0, str(ROOT_PATH))

load_dotenv(dotenv_path=ROOT_PATH / '.env')

from analysis.eval_suite import flagged_ids
from analysis.residual_agg import AggregatorKind, score_predictions
from analysis.safety_proxies import compute_proxy_table
from models.iso_forest import fit_score_flag
from models.predictor import (
    PredictorConfig, fit_norm_and_train, load_model, load_predictions,
    predict_cv_all, predict_transformer, save_model, save_predictions,
)
from pipeline.manifest import TOOL_VERSION, validator_for
from pipeline.report import IncompleteRunError, emit_report
from pipeline.run_pipeline import (
    PipelineConfig, StageFailure, cluster_document, evaluation_document, load_flag_tables, run_pipeline,
)
from scenes.ngsim_ingest import ingest
from scenes.scene_model import load_scenes, save_scenes
from scenes.synth_traffic import generate, load_labels, save_labels
from utils.json_utils import InvalidJsonError, load_config, read_table_csv, write_json, write_table_csv
from utils.logging_utils import Log, LogLevel

logger = Log.get_logger('scenewatch')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2

DEFAULT_PIPELINE_CONFIG = ROOT_PATH / 'configs' / 'pipeline_default.json'


class UsageError(Exception):
    """Argumentos ou configuração inválidos."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser que sai com código 1 em erro de uso."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: erro: {message}\n")


def _default_threads() -> int:
    try:
        return max(1, int(os.getenv('SCENEWATCH_THREADS', '1')))
    except ValueError:
        return 1


def _load_model_config(path: Optional[str], model: Type[BaseModel], default: Optional[Path] = None) -> Any:
    source = Path(path) if path else default
    if source is None or not source.exists():
        if path:
            raise UsageError(f"Arquivo de configuração não encontrado: '{path}'")
        return model()
    try:
        return load_config(source, model)
    except InvalidJsonError as e:
        raise UsageError(str(e)) from e


def pipeline_config(args: argparse.Namespace, **overrides: Any) -> PipelineConfig:
    """
    Configuração efetiva: arquivo (--config ou configs/pipeline_default.json)
    sobreposto pelas flags globais e pelos argumentos do subcomando.
    """
    cfg = _load_model_config(args.config, PipelineConfig, DEFAULT_PIPELINE_CONFIG)
    data = cfg.model_dump()
    if args.seed is not None:
        data['seed'] = args.seed
    data['threads'] = args.threads
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, field = key.partition('__')
        if field:
            data[section][field] = value
        else:
            data[key] = value
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise UsageError(f"Configuração inválida: {e}") from e


# Subcomandos

def cmd_ingest(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args, ingest__unit=args.unit, ingest__stride=args.stride)
    scenes, report = ingest(args.csv, cfg.ingest, cfg.threads)
    save_scenes(args.out, scenes)
    write_json(args.report, report.to_dict())
    return {'scenes': len(scenes), 'out': args.out, 'report': report.to_dict()}


def cmd_synth(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args, synth__n_scenes=args.n, synth__anomaly_fraction=args.anomaly_frac)
    synth_cfg = cfg.synth.model_copy(update={'seed': cfg.stage_seed('synth')})
    scenes, labels = generate(synth_cfg, cfg.threads)
    save_scenes(args.out, scenes)
    save_labels(args.labels, labels)
    return {'scenes': len(scenes), 'anomalies': sum(1 for lb in labels if lb.is_anomaly), 'out': args.out}


def cmd_train(args: argparse.Namespace) -> Dict[str, Any]:
    # --config aqui é um PredictorConfig (ex.: configs/predictor_default.json)
    pred_cfg = _load_model_config(args.config, PredictorConfig)
    cfg = PipelineConfig(seed=args.seed if args.seed is not None else PipelineConfig().seed, threads=args.threads)
    pred_cfg = pred_cfg.model_copy(update={'seed': cfg.stage_seed('predictor')})
    split_spec = cfg.split.model_copy(update={'seed': cfg.stage_seed('split')})

    scenes = load_scenes(args.scenes)
    model, log = fit_norm_and_train(scenes, split_spec, pred_cfg)
    save_model(args.out, model)
    log.save_csv(args.log)
    return {'scenes': len(scenes), 'epochs': len(log.train_loss), 'best_epoch': log.best_epoch,
            'best_val': log.best_val, 'out': args.out}


def cmd_predict(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args)
    scenes = load_scenes(args.scenes)
    if args.model:
        preds = predict_transformer(load_model(args.model), scenes)
    else:
        logger.info('Sem --model: usando o preditor de velocidade constante')
        preds = predict_cv_all(scenes, cfg.threads)
    save_predictions(args.out, preds)
    return {'predictions': len(preds), 'predictor': 'transformer' if args.model else 'cv', 'out': args.out}


def cmd_score(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args, aggregators=args.agg, top_k=args.k)
    preds = load_predictions(args.preds)
    table = score_predictions(preds, cfg.aggregator_objects(), cfg.residual_weights, cfg.threads)
    write_table_csv(table, args.out, validator_for('scores'))
    return {'scenes': len(preds), 'aggregators': cfg.aggregators, 'out': args.out}


def cmd_iforest(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args)
    scores = read_table_csv(args.scores)
    agg = AggregatorKind(args.agg).value
    column = scores.loc[scores['aggregator'] == agg, ['scene_id', 'residual_score']]
    if column.empty:
        raise UsageError(f"Agregador '{agg}' ausente em {args.scores}")
    forest_cfg = cfg.forest.model_copy(update={'seed': cfg.stage_seed('iforest')})
    table = fit_score_flag(column, forest_cfg, args.contamination, cfg.threads)
    write_table_csv(table, args.out, validator_for('flags'))
    return {'scenes': len(table), 'flagged': int(table['flagged'].sum()), 'out': args.out}


def cmd_proxies(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args)
    scenes = load_scenes(args.scenes)
    table = compute_proxy_table(scenes, cfg.proxies, cfg.threads)
    write_table_csv(table, args.out, validator_for('proxies'))
    return {'scenes': len(table), 'out': args.out}


def cmd_evaluate(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args)
    tables = load_flag_tables(Path(args.scores_dir))
    if not tables:
        raise UsageError(f"Nenhum arquivo flags_<agregador>_c<nível>.csv em {args.scores_dir}")
    scores = read_table_csv(args.scores)
    proxies = read_table_csv(args.proxies)
    labels = load_labels(args.labels) if args.labels else None

    aggregators = sorted({agg for agg, _ in tables})
    cfg = cfg.model_copy(update={
        'aggregators': aggregators,
        'contaminations': sorted({c for _, c in tables}),
    })
    document = evaluation_document(tables, proxies, scores, cfg, labels)
    write_json(args.out, document)
    return {'selection': document['selection'], 'out': args.out}


def cmd_cluster(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = pipeline_config(args)
    preds = load_predictions(args.preds)
    flags = read_table_csv(args.flags)
    flags['flagged'] = flags['flagged'].astype(bool)
    labels = load_labels(args.labels) if args.labels else None
    document = cluster_document(preds, flagged_ids(flags), cfg, labels)
    write_json(args.out, document)
    return {'k': document['k'], 'warning': document.get('warning'), 'out': args.out}


def cmd_run(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        'source': args.source,
        'predictor': args.predictor,
        'synth__n_scenes': args.n,
    }
    if args.no_refit:
        overrides['refit'] = False
    cfg = pipeline_config(args, **overrides)
    run_dir = Path(args.out_dir or cfg.paths.output_dir)
    manifest = run_pipeline(cfg, run_dir)
    return {
        'run_dir': str(run_dir),
        'run_digest': manifest.run_digest,
        'stages': {s.name: s.seconds for s in manifest.stages},
    }


def cmd_report(args: argparse.Namespace) -> Dict[str, Any]:
    report_path, summary_path = emit_report(Path(args.run_dir))
    return {'report': str(report_path), 'summary': str(summary_path)}


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Semente raiz (sobrepõe a configuração)')
    common.add_argument('--threads', type=int, default=_default_threads(),
                        help='Número de workers (padrão: SCENEWATCH_THREADS ou 1)')
    common.add_argument('--config', type=str, default=None, help='Arquivo JSON de configuração')
    common.add_argument('--log-level', type=str, default=None, help='DEBUG, INFO, WARNING ou ERROR')

    parser = CliParser(prog='scenewatch', description='Detecção de cenas de direção críticas sem rótulos')
    parser.add_argument('--version', action='version', version=f"scenewatch {TOOL_VERSION}")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    def add(name: str, fn: Callable[[argparse.Namespace], Dict[str, Any]], help_text: str) -> CliParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add('ingest', cmd_ingest, 'Converte um CSV NGSIM em cenas')
    p.add_argument('--csv', required=True)
    p.add_argument('--unit', choices=['feet', 'meters'], default=None)
    p.add_argument('--stride', type=int, default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--report', required=True)

    p = add('synth', cmd_synth, 'Gera cenas sintéticas com anomalias rotuladas')
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--anomaly-frac', type=float, default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--labels', required=True)

    p = add('train', cmd_train, 'Treina o preditor Transformer')
    p.add_argument('--scenes', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--log', required=True)

    p = add('predict', cmd_predict, 'Predição das trajetórias futuras')
    p.add_argument('--scenes', required=True)
    p.add_argument('--model', default=None, help='Modelo treinado; sem ele usa velocidade constante')
    p.add_argument('--out', required=True)

    p = add('score', cmd_score, 'Agrega resíduos em scores de cena')
    p.add_argument('--preds', required=True)
    p.add_argument('--agg', nargs='+', choices=[k.value for k in AggregatorKind], default=None)
    p.add_argument('--k', type=int, default=None)
    p.add_argument('--out', required=True)

    p = add('iforest', cmd_iforest, 'Isolation Forest sobre os scores de um agregador')
    p.add_argument('--scores', required=True)
    p.add_argument('--agg', choices=[k.value for k in AggregatorKind], default=AggregatorKind.MAX.value)
    p.add_argument('--contamination', type=float, default=0.15)
    p.add_argument('--out', required=True)

    p = add('proxies', cmd_proxies, 'Medidas substitutas de segurança por cena')
    p.add_argument('--scenes', required=True)
    p.add_argument('--out', required=True)

    p = add('evaluate', cmd_evaluate, 'Avaliação de estabilidade e alinhamento')
    p.add_argument('--scores-dir', required=True, help='Diretório com flags_<agregador>_c<nível>.csv')
    p.add_argument('--scores', required=True, help='scores.csv (para a CCDF)')
    p.add_argument('--proxies', required=True)
    p.add_argument('--labels', default=None)
    p.add_argument('--out', required=True)

    p = add('cluster', cmd_cluster, 'Agrupa as cenas marcadas por padrão de erro')
    p.add_argument('--preds', required=True)
    p.add_argument('--flags', required=True)
    p.add_argument('--labels', default=None)
    p.add_argument('--out', required=True)

    p = add('run', cmd_run, 'Pipeline ponta a ponta')
    p.add_argument('--source', choices=['synth', 'ngsim', 'scenes'], default=None)
    p.add_argument('--predictor', choices=['cv', 'transformer'], default=None)
    p.add_argument('--n', type=int, default=None, help='Número de cenas sintéticas')
    p.add_argument('--no-refit', action='store_true', help='Um único ajuste para todas as contaminações')
    p.add_argument('--out-dir', default=None)

    p = add('report', cmd_report, 'Gera report.json e summary.md de uma execução')
    p.add_argument('--run-dir', required=True)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = LogLevel.from_name(args.log_level) if args.log_level else None
    log_path = Log.configure_for_command(args.command, level)
    Log.set_context('command', args.command)

    logger.info(f"=== INICIANDO: scenewatch {args.command} ===")
    logger.info(f"Argumentos: {vars(args)}")
    logger.info(f"Arquivo de log: {log_path}")

    started = time.perf_counter()
    metrics: Dict[str, Any] = {'command': args.command, 'tool_version': TOOL_VERSION}
    try:
        if args.threads < 1:
            raise UsageError('--threads deve ser >= 1')
        metrics.update(args.func(args))
        metrics['status'] = 'SUCESSO'
        code = EXIT_OK
        logger.info(f"✅ === SUCESSO: scenewatch {args.command} ===")

    except (UsageError, InvalidJsonError) as e:
        logger.error(f"Erro de uso/configuração: {e}")
        metrics.update({'status': 'FALHA', 'error': str(e)})
        code = EXIT_USAGE

    except StageFailure as e:
        logger.error(f"🚨 === FALHA na etapa '{e.stage}': {e.cause} ===")
        metrics.update({'status': 'FALHA', 'stage': e.stage, 'error': str(e.cause)})
        code = EXIT_STAGE

    except IncompleteRunError as e:
        logger.error(f"🚨 === FALHA: {e} ===")
        metrics.update({'status': 'FALHA', 'stage': 'report', 'error': str(e)})
        code = EXIT_STAGE

    except Exception as e:
        logger.exception(f"🚨 === FALHA: scenewatch {args.command}: {type(e).__name__}: {e} ===")
        metrics.update({'status': 'FALHA', 'stage': args.command, 'error': f"{type(e).__name__}: {e}"})
        code = EXIT_STAGE

    metrics['duracao_segundos'] = round(time.perf_counter() - started, 3)
    logger.info(f"🏁 Finalizado com código {code}")
    # stdout: somente a linha de métricas
    print(json.dumps(metrics, ensure_ascii=False, default=str))
    return code


if __name__ == '__main__':
    sys.exit(main())
