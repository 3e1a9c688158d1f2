"""
File: run_pipeline.py
Author: Equipe Data Analytics
Date: 2026-09-22
Version: 1.0
Description: Orquestração ponta a ponta do scenewatch: cenas (sintéticas ou
             NGSIM) → predição → resíduos → Isolation Forest por (agregador,
             contaminação) → medidas de segurança → avaliação dupla →
             agrupamento → baselines → relatório. Cada etapa grava suas saídas
             no diretório da execução e seus digests no manifest.json.
"""

import re
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Set, Tuple

import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from analysis.eval_suite import (
    DEFAULT_CONTAMINATIONS, DEFAULT_TAU_MIN, TTC_CAP, TTC_THRESHOLD, FlagTables, alignment_sweep,
    baselines, ccdf, contrast_table, detection_metrics, flag_sweep, flagged_ids, overlap_by_label,
    select_config, stability_from_flags, stability_means,
)
from analysis.residual_agg import Aggregator, AggregatorKind, ResidualWeights, score_predictions, scores_for
from analysis.safety_proxies import ProxyConfig, compute_proxy_table
from analysis.scene_clustering import (
    dominant_axes, exemplars, feature_table, label_agreement, select_k_and_report,
)
from models.iso_forest import ForestConfig
from models.predictor import (
    PredictionResult, PredictorConfig, fit_norm_and_train, load_model,
    predict_cv_all, predict_transformer, save_model, save_predictions,
)
from pipeline.manifest import (
    BASELINES_FILE, CLUSTERS_FILE, EVAL_FILE, FAILURE, FLAGS_DIR, LABELS_FILE, MODEL_FILE, PREDS_FILE,
    PROXIES_FILE, SCENES_FILE, SCORES_FILE, SUCCESS, TRAIN_LOG_FILE, RunManifest, StageRecord, file_digest,
    flag_file_name, validator_for,
)
from pipeline.report import emit_report
from scenes.ngsim_ingest import IngestConfig, ingest
from scenes.scene_model import SceneTensor, SplitSpec, load_scenes, save_scenes
from scenes.synth_traffic import GroundTruthLabel, SynthConfig, generate, load_labels, save_labels
from utils.hash_utils import derive_seed
from utils.json_utils import read_table_csv, write_json, write_table_csv
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

FLAG_FILE_PATTERN = re.compile(r'^flags_(?P<agg>[a-z0-9]+)_c(?P<level>\d+\.\d+)\.csv$')


class StageFailure(Exception):
    """Falha de uma etapa do pipeline; as saídas das etapas anteriores permanecem."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Etapa '{stage}' falhou: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class PipelinePaths(BaseModel):
    scenes: Optional[str] = None
    ngsim_csv: Optional[str] = None
    labels: Optional[str] = None
    model: Optional[str] = None
    output_dir: str = 'runs/latest'


class BaselineConfig(BaseModel):
    ttc_threshold: float = Field(default=TTC_THRESHOLD, gt=0.0)
    ttc_cap: float = Field(default=TTC_CAP, gt=0.0)
    contamination: float = Field(default=0.15, gt=0.0, le=0.5)


class ClusterConfig(BaseModel):
    k_min: int = Field(default=2, ge=2)
    k_max: int = Field(default=8, ge=2)
    n_exemplars: int = Field(default=3, ge=1)

    @model_validator(mode='after')
    def validate_range(self) -> 'ClusterConfig':
        if self.k_max < self.k_min:
            raise ValueError('k_max deve ser >= k_min')
        return self


class PipelineConfig(BaseModel):
    """Configuração completa de uma execução; a semente raiz alimenta todas as etapas."""
    source: Literal['synth', 'ngsim', 'scenes'] = 'synth'
    paths: PipelinePaths = PipelinePaths()
    synth: SynthConfig = SynthConfig()
    ingest: IngestConfig = IngestConfig()
    predictor: Literal['cv', 'transformer'] = 'cv'
    predictor_config: PredictorConfig = PredictorConfig()
    split: SplitSpec = SplitSpec()
    residual_weights: ResidualWeights = ResidualWeights()
    aggregators: List[str] = Field(default_factory=lambda: [k.value for k in AggregatorKind])
    top_k: int = Field(default=5, ge=1)
    contaminations: List[float] = Field(default_factory=lambda: list(DEFAULT_CONTAMINATIONS))
    forest: ForestConfig = ForestConfig(n_trees=5000)
    refit: bool = True
    tau_min: float = Field(default=DEFAULT_TAU_MIN, ge=-1.0, le=1.0)
    selected_contamination: float = Field(default=0.15, gt=0.0, le=0.5)
    proxies: ProxyConfig = ProxyConfig()
    baseline: BaselineConfig = BaselineConfig()
    clustering: ClusterConfig = ClusterConfig()
    seed: int = 7
    threads: int = Field(default=1, ge=1)

    @field_validator('aggregators')
    @classmethod
    def validate_aggregators(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError('Lista de agregadores vazia')
        names = [AggregatorKind(name.lower()).value for name in v]
        if len(set(names)) != len(names):
            raise ValueError(f"Agregadores repetidos: {v}")
        return names

    @field_validator('contaminations')
    @classmethod
    def validate_contaminations(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError('Lista de contaminações vazia')
        for c in v:
            if not 0.0 < c <= 0.5:
                raise ValueError(f"Contaminação fora de (0, 0.5]: {c}")
        return sorted(set(v))

    @model_validator(mode='after')
    def validate_source(self) -> 'PipelineConfig':
        if self.source == 'ngsim' and not self.paths.ngsim_csv:
            raise ValueError("source='ngsim' exige paths.ngsim_csv")
        if self.source == 'scenes' and not self.paths.scenes:
            raise ValueError("source='scenes' exige paths.scenes")
        return self

    def stage_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def aggregator_objects(self) -> List[Aggregator]:
        return [Aggregator.parse(name, self.top_k) for name in self.aggregators]


def write_flag_tables(tables: FlagTables, flags_dir: Path) -> List[Path]:
    validator = validator_for('flags')
    return [
        write_table_csv(table, Path(flags_dir) / flag_file_name(agg, c), validator)
        for (agg, c), table in sorted(tables.items())
    ]


def load_flag_tables(flags_dir: Path) -> FlagTables:
    """Lê flags_<agregador>_c<nível>.csv de um diretório."""
    tables: FlagTables = {}
    for path in sorted(Path(flags_dir).glob('flags_*.csv')):
        match = FLAG_FILE_PATTERN.match(path.name)
        if not match:
            logger.warning(f"Arquivo de flags ignorado: {path.name}")
            continue
        table = read_table_csv(path)
        table['flagged'] = table['flagged'].astype(bool)
        tables[(match['agg'], float(match['level']))] = table
    return tables


def scores_by_aggregator(table: pd.DataFrame, aggregators: Sequence[str]) -> Dict[str, pd.Series]:
    return {agg: scores_for(table, agg) for agg in aggregators}


def evaluation_document(tables: FlagTables, proxies: pd.DataFrame, scores: pd.DataFrame,
                        cfg: PipelineConfig, labels: Optional[List[GroundTruthLabel]] = None) -> Dict[str, Any]:
    """Monta o conteúdo de eval.json a partir das flags, medidas e scores."""
    pairs = stability_from_flags(tables)
    means = stability_means(pairs)
    alignment = alignment_sweep(tables, proxies)
    selection = select_config(pairs, alignment, cfg.tau_min, cfg.selected_contamination)

    selected_key = (selection.aggregator, selection.contamination)
    if selected_key not in tables:
        raise KeyError(f"Configuração selecionada {selected_key} sem tabela de flags")
    selected_flags = flagged_ids(tables[selected_key])

    document: Dict[str, Any] = {
        'stability': [asdict(r) for r in pairs + means],
        'alignment': [asdict(r) for r in alignment],
        'selection': asdict(selection),
        'contrast': contrast_table(proxies, selected_flags, cfg.baseline.ttc_cap).to_dict(orient='records'),
        'ccdf': {
            agg: ccdf(scores_for(scores, agg).to_numpy()).to_dict(orient='records')
            for agg in cfg.aggregators
        },
        'parameters': {
            'tau_min': cfg.tau_min,
            'harsh_threshold': cfg.proxies.harsh_threshold,
            'ttc_cap': cfg.baseline.ttc_cap,
            'contaminations': cfg.contaminations,
            'refit': cfg.refit,
        },
    }
    if labels:
        document['detection'] = {
            f"{agg}@{c:.2f}": detection_metrics(flagged_ids(table), labels)
            for (agg, c), table in sorted(tables.items())
        }
    return document


def cluster_document(preds: Sequence[PredictionResult], flagged: Set[str], cfg: PipelineConfig,
                     labels: Optional[List[GroundTruthLabel]] = None,
                     source: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Conteúdo de clusters.json para as cenas marcadas."""
    features = feature_table(preds, flagged)
    k_range = range(cfg.clustering.k_min, cfg.clustering.k_max + 1)
    report = select_k_and_report(features, k_range, cfg.stage_seed('cluster'), cfg.threads)
    document = report.to_dict()
    if source:
        document['source'] = source
    document['exemplars'] = {str(k): v for k, v in exemplars(report, features, cfg.clustering.n_exemplars).items()}
    document['dominant_axes'] = dominant_axes(report)
    if labels:
        document['label_agreement'] = label_agreement(report.assignments, labels)
    return document


def baselines_document(proxies: pd.DataFrame, ours: Set[str], cfg: PipelineConfig,
                       labels: Optional[List[GroundTruthLabel]] = None) -> Dict[str, Any]:
    """Conteúdo de baselines.json: flags de cada baseline e a partição de sobreposição."""
    forest_cfg = cfg.forest.model_copy(update={'seed': cfg.stage_seed('baseline')})
    result = baselines(proxies, ours, cfg.baseline.contamination, cfg.baseline.ttc_threshold,
                       cfg.baseline.ttc_cap, forest_cfg)
    document: Dict[str, Any] = {
        'ttc_threshold': result.ttc_threshold,
        'ttc_cap': result.ttc_cap,
        'contamination': result.contamination,
        'ttc_flags': sorted(result.ttc_flags),
        'if_flags': sorted(result.if_flags),
        'overlap': result.overlap.to_dict(),
        'unique_ids': result.overlap.unique_ids,
    }
    if labels:
        document['overlap_by_label'] = overlap_by_label(
            result.overlap, result.ttc_flags, labels
        ).to_dict(orient='records')
    return document


class PipelineRunner:
    """
    Executa as etapas em ordem, persistindo cada saída e registrando digests.
    Uma falha na etapa k preserva as saídas das etapas anteriores.
    """

    def __init__(self, cfg: PipelineConfig, run_dir: Optional[Path] = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir or cfg.paths.output_dir)
        self.manifest = RunManifest(config=cfg.model_dump(mode='json'))
        self.scenes: List[SceneTensor] = []
        self.labels: List[GroundTruthLabel] = []
        self.preds: List[PredictionResult] = []
        self.scores: Optional[pd.DataFrame] = None
        self.tables: FlagTables = {}
        self.proxies: Optional[pd.DataFrame] = None
        self.evaluation: Dict[str, Any] = {}

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _run_stage(self, name: str, fn: Callable[[], List[Path]], inputs: Sequence[Path] = ()) -> None:
        started = time.perf_counter()
        record = StageRecord(name=name, status=FAILURE, seconds=0.0,
                             inputs={Path(p).name: file_digest(p) for p in inputs})
        try:
            with Log.stage(name, logger):
                outputs = fn()
        except Exception as e:
            record.seconds = round(time.perf_counter() - started, 3)
            record.error = f"{type(e).__name__}: {e}"
            self.manifest.stages.append(record)
            self.manifest.save(self.run_dir)
            raise StageFailure(name, e) from e

        record.status = SUCCESS
        record.seconds = round(time.perf_counter() - started, 3)
        record.outputs = {str(Path(p).relative_to(self.run_dir)): file_digest(p) for p in outputs}
        self.manifest.stages.append(record)
        self.manifest.save(self.run_dir)

    # Etapas

    def stage_scenes(self) -> List[Path]:
        cfg = self.cfg
        outputs = [self.path(SCENES_FILE)]
        if cfg.source == 'synth':
            synth_cfg = cfg.synth.model_copy(update={'seed': cfg.stage_seed('synth')})
            self.scenes, self.labels = generate(synth_cfg, cfg.threads)
            save_labels(self.path(LABELS_FILE), self.labels)
            outputs.append(self.path(LABELS_FILE))
        elif cfg.source == 'ngsim':
            self.scenes, report = ingest(cfg.paths.ngsim_csv, cfg.ingest, cfg.threads)
            write_json(self.path('ingest_report.json'), report.to_dict())
            outputs.append(self.path('ingest_report.json'))
        else:
            source = Path(cfg.paths.scenes)
            if not source.exists():
                raise FileNotFoundError(f"Arquivo de cenas não encontrado: '{source}' (verifique paths.scenes)")
            self.scenes = load_scenes(source)
            if cfg.paths.labels:
                self.labels = load_labels(cfg.paths.labels)
                save_labels(self.path(LABELS_FILE), self.labels)
                outputs.append(self.path(LABELS_FILE))
        save_scenes(self.path(SCENES_FILE), self.scenes)
        return outputs

    def stage_predict(self) -> List[Path]:
        cfg = self.cfg
        outputs = [self.path(PREDS_FILE)]
        if cfg.predictor == 'cv':
            self.preds = predict_cv_all(self.scenes, cfg.threads)
        else:
            if cfg.paths.model:
                model = load_model(cfg.paths.model)
            else:
                pred_cfg = cfg.predictor_config.model_copy(update={'seed': cfg.stage_seed('predictor')})
                split_spec = cfg.split.model_copy(update={'seed': cfg.stage_seed('split')})
                model, log = fit_norm_and_train(self.scenes, split_spec, pred_cfg)
                save_model(self.path(MODEL_FILE), model)
                log.save_csv(self.path(TRAIN_LOG_FILE))
                outputs += [self.path(MODEL_FILE), self.path(TRAIN_LOG_FILE)]
            self.preds = predict_transformer(model, self.scenes)
        save_predictions(self.path(PREDS_FILE), self.preds)
        return outputs

    def stage_score(self) -> List[Path]:
        cfg = self.cfg
        self.scores = score_predictions(self.preds, cfg.aggregator_objects(), cfg.residual_weights, cfg.threads)
        return [write_table_csv(self.scores, self.path(SCORES_FILE), validator_for('scores'))]

    def stage_iforest(self) -> List[Path]:
        cfg = self.cfg
        forest_cfg = cfg.forest.model_copy(update={'seed': cfg.stage_seed('iforest')})
        scores = scores_by_aggregator(self.scores, cfg.aggregators)
        self.tables = flag_sweep(scores, cfg.contaminations, forest_cfg, cfg.refit, cfg.threads)
        return write_flag_tables(self.tables, self.path(FLAGS_DIR))

    def stage_proxies(self) -> List[Path]:
        self.proxies = compute_proxy_table(self.scenes, self.cfg.proxies, self.cfg.threads)
        return [write_table_csv(self.proxies, self.path(PROXIES_FILE), validator_for('proxies'))]

    def stage_evaluate(self) -> List[Path]:
        self.evaluation = evaluation_document(self.tables, self.proxies, self.scores, self.cfg, self.labels)
        return [write_json(self.path(EVAL_FILE), self.evaluation)]

    def _selected(self) -> Tuple[str, float]:
        selection = self.evaluation['selection']
        return selection['aggregator'], float(selection['contamination'])

    def stage_cluster(self) -> List[Path]:
        agg, c = self._selected()
        document = cluster_document(self.preds, flagged_ids(self.tables[(agg, c)]), self.cfg, self.labels,
                                    source={'aggregator': agg, 'contamination': c})
        return [write_json(self.path(CLUSTERS_FILE), document)]

    def stage_baselines(self) -> List[Path]:
        ours = flagged_ids(self.tables[self._selected()])
        document = baselines_document(self.proxies, ours, self.cfg, self.labels)
        return [write_json(self.path(BASELINES_FILE), document)]

    def stage_report(self) -> List[Path]:
        return list(emit_report(self.run_dir, self.manifest))

    def run(self) -> RunManifest:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        cfg = self.cfg
        Log.set_context('run_dir', str(self.run_dir))
        logger.info(f"🚀 Execução em {self.run_dir} (fonte={cfg.source}, preditor={cfg.predictor}, seed={cfg.seed})")

        scene_stage = 'synth' if cfg.source == 'synth' else 'ingest'
        external = [Path(p) for p in (cfg.paths.ngsim_csv, cfg.paths.scenes, cfg.paths.labels) if p]
        self._run_stage(scene_stage, self.stage_scenes, external)
        self._run_stage('predict', self.stage_predict, [self.path(SCENES_FILE)])
        self._run_stage('score', self.stage_score, [self.path(PREDS_FILE)])
        self._run_stage('iforest', self.stage_iforest, [self.path(SCORES_FILE)])
        self._run_stage('proxies', self.stage_proxies, [self.path(SCENES_FILE)])
        self._run_stage('evaluate', self.stage_evaluate, [self.path(PROXIES_FILE), self.path(SCORES_FILE)])
        self._run_stage('cluster', self.stage_cluster, [self.path(PREDS_FILE), self.path(EVAL_FILE)])
        self._run_stage('baselines', self.stage_baselines, [self.path(PROXIES_FILE), self.path(EVAL_FILE)])
        self._run_stage('report', self.stage_report, [
            self.path(EVAL_FILE), self.path(CLUSTERS_FILE), self.path(BASELINES_FILE),
        ])
        logger.info(f"🏁 Execução concluída; run_digest={self.manifest.run_digest}")
        return self.manifest


def run_pipeline(cfg: PipelineConfig, run_dir: Optional[Path] = None) -> RunManifest:
    """
    Executa o pipeline completo.

    Raises:
        StageFailure: com o nome da etapa que falhou
    """
    return PipelineRunner(cfg, run_dir).run()
