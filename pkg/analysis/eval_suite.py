"""
File: eval_suite.py
Author: Equipe Data Analytics
Date: 2026-09-15
Version: 1.0
Description: Avaliação dupla sem rótulos: estabilidade do ranking entre níveis de
             contaminação (Kendall τ-b, Jaccard), alinhamento com as medidas de
             segurança (Spearman), seleção da configuração, baselines (limiar de
             TTC e Isolation Forest sobre features físicas), partição de
             sobreposição, CCDF e métricas de detecção quando há rótulos.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.stats import kendalltau, rankdata

from analysis.safety_proxies import SSM_COLUMNS, ZeroVarianceError, spearman
from models.iso_forest import ForestConfig, contamination_seed, fit_score_flag
from scenes.synth_traffic import AnomalyKind, GroundTruthLabel
from utils.hash_utils import derive_seed
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

DEFAULT_CONTAMINATIONS = (0.10, 0.15, 0.20)
DEFAULT_TAU_MIN = 0.95
DEFAULT_CONTAMINATION = 0.15
FALLBACK_AGGREGATOR = 'max'
TTC_THRESHOLD = 1.5
TTC_CAP = 100.0
BASELINE_FEATURES = ['min_ttc', 'min_dist', 'max_dv', 'max_acc']
CONTRAST_METRICS = ['min_ttc', 'min_dist', 'max_dv', 'max_acc']

FlagTables = Dict[Tuple[str, float], pd.DataFrame]


class EvalError(Exception):
    """Erro base da avaliação."""


class LengthMismatchError(EvalError):
    """Rankings de tamanhos diferentes."""


class SceneSetMismatchError(EvalError):
    """Conjuntos de cenas diferentes entre scores e medidas."""


class NoneQualifyError(EvalError):
    """Nenhum agregador atinge o limiar de estabilidade."""


@dataclass(frozen=True)
class StabilityRow:
    aggregator: str
    c1: float
    c2: float
    kendall_tau: float
    jaccard: float
    jaccard_at_k: float
    pair: str = ''

    def __post_init__(self):
        if not self.pair:
            object.__setattr__(self, 'pair', f"{self.c1:.2f}-{self.c2:.2f}")


@dataclass(frozen=True)
class AlignmentRow:
    aggregator: str
    proxy: str
    spearman_rho: float
    defined: bool = True


@dataclass(frozen=True)
class Selection:
    aggregator: str
    contamination: float
    qualified: bool
    mean_tau: float
    mean_abs_rho: float


@dataclass
class OverlapReport:
    ours_total: int = 0
    ttc_total: int = 0
    if_total: int = 0
    unique_ours: int = 0
    ours_ttc_only: int = 0
    ours_if_only: int = 0
    ours_both: int = 0
    unique_ids: List[str] = field(default_factory=list)

    @property
    def partition_holds(self) -> bool:
        return self.unique_ours + self.ours_ttc_only + self.ours_if_only + self.ours_both == self.ours_total

    def to_dict(self) -> Dict:
        out = asdict(self)
        out.pop('unique_ids')
        return out


@dataclass
class BaselineResult:
    ttc_flags: Set[str]
    if_flags: Set[str]
    overlap: OverlapReport
    ttc_threshold: float = TTC_THRESHOLD
    ttc_cap: float = TTC_CAP
    contamination: float = DEFAULT_CONTAMINATION


def kendall_tau(rank_a: Sequence[float], rank_b: Sequence[float]) -> float:
    """
    Kendall τ-b com correção de empates.

    Raises:
        LengthMismatchError: tamanhos diferentes ou menos de 2 elementos
        ZeroVarianceError: algum ranking inteiramente empatado
    """
    a = np.asarray(rank_a, dtype=float)
    b = np.asarray(rank_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatchError(f"Kendall com shapes {a.shape} e {b.shape}")
    if a.size < 2:
        raise LengthMismatchError("Kendall exige ao menos 2 elementos")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ZeroVarianceError("Kendall indefinido: ranking constante")
    ranks_a = rankdata(a)
    if np.array_equal(ranks_a, rankdata(b)):
        return 1.0
    if np.array_equal(ranks_a, rankdata(-b)):
        return -1.0
    return float(kendalltau(a, b, variant='b')[0])


def jaccard(set_a: Iterable, set_b: Iterable) -> float:
    """|A∩B| / |A∪B|; dois conjuntos vazios valem 1.0."""
    a, b = set(set_a), set(set_b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def top_k_ids(table: pd.DataFrame, k: int) -> Set[str]:
    ordered = table.assign(_neg=-table['iso_score']).sort_values(['_neg', 'scene_id'], kind='mergesort')
    return set(ordered['scene_id'].head(k))


def jaccard_at_k(table_a: pd.DataFrame, table_b: pd.DataFrame, k: Optional[int] = None) -> float:
    """Jaccard entre os top-K de dois rankings; K padrão = menor número de flags."""
    if k is None:
        k = int(min(table_a['flagged'].sum(), table_b['flagged'].sum()))
    return jaccard(top_k_ids(table_a, k), top_k_ids(table_b, k))


def flagged_ids(table: pd.DataFrame) -> Set[str]:
    return set(table.loc[table['flagged'].astype(bool), 'scene_id'])


def flag_sweep(scores: Mapping[str, pd.Series], contaminations: Sequence[float] = DEFAULT_CONTAMINATIONS,
               cfg: Optional[ForestConfig] = None, refit: bool = True, threads: int = 1) -> FlagTables:
    """
    Ajusta o Isolation Forest por (agregador, contaminação). Com refit, cada
    nível usa semente derivada; sem refit, todos os níveis compartilham o mesmo
    ajuste e mudam apenas o corte.
    """
    cfg = cfg or ForestConfig()
    cells = [(agg, index, c) for agg in scores for index, c in enumerate(contaminations)]

    def run_cell(cell) -> pd.DataFrame:
        agg, index, c = cell
        seed = contamination_seed(cfg.seed, index) if refit else cfg.seed
        return fit_score_flag(scores[agg], cfg.model_copy(update={'seed': seed}), c)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        tables = list(executor.map(run_cell, cells))
    return {(agg, c): table for (agg, _, c), table in zip(cells, tables)}


def stability_from_flags(tables: FlagTables) -> List[StabilityRow]:
    """Uma linha por agregador e par não ordenado de níveis."""
    rows: List[StabilityRow] = []
    aggregators = list(dict.fromkeys(agg for agg, _ in tables))
    for agg in aggregators:
        levels = sorted(c for a, c in tables if a == agg)
        for c1, c2 in combinations(levels, 2):
            ta = tables[(agg, c1)].sort_values('scene_id', kind='mergesort')
            tb = tables[(agg, c2)].sort_values('scene_id', kind='mergesort')
            tau = kendall_tau(ta['iso_score'].to_numpy(), tb['iso_score'].to_numpy())
            rows.append(StabilityRow(
                aggregator=agg, c1=c1, c2=c2, kendall_tau=tau,
                jaccard=jaccard(flagged_ids(ta), flagged_ids(tb)),
                jaccard_at_k=jaccard_at_k(ta, tb),
            ))
    return rows


def stability_sweep(scores: Mapping[str, pd.Series], contaminations: Sequence[float] = DEFAULT_CONTAMINATIONS,
                    cfg: Optional[ForestConfig] = None, refit: bool = True, threads: int = 1) -> List[StabilityRow]:
    if len(contaminations) < 2:
        raise ValueError("stability_sweep exige ao menos 2 níveis de contaminação")
    return stability_from_flags(flag_sweep(scores, contaminations, cfg, refit, threads))


def stability_means(rows: Sequence[StabilityRow]) -> List[StabilityRow]:
    """Linha 'mean' por agregador, média dos pares."""
    out = []
    for agg in dict.fromkeys(r.aggregator for r in rows):
        mine = [r for r in rows if r.aggregator == agg]
        out.append(StabilityRow(
            aggregator=agg, c1=float('nan'), c2=float('nan'),
            kendall_tau=float(np.mean([r.kendall_tau for r in mine])),
            jaccard=float(np.mean([r.jaccard for r in mine])),
            jaccard_at_k=float(np.mean([r.jaccard_at_k for r in mine])),
            pair='mean',
        ))
    return out


def alignment_sweep(tables: FlagTables, proxies: pd.DataFrame,
                    proxy_columns: Sequence[str] = SSM_COLUMNS) -> List[AlignmentRow]:
    """
    Spearman entre iso_score e cada medida, médio sobre os níveis de
    contaminação. Séries constantes geram ρ NaN com defined=False.

    Raises:
        SceneSetMismatchError: cenas diferentes entre scores e medidas
    """
    proxy_index = proxies.set_index('scene_id')
    rows: List[AlignmentRow] = []
    for agg in dict.fromkeys(a for a, _ in tables):
        levels = sorted(c for a, c in tables if a == agg)
        per_proxy: Dict[str, List[float]] = {p: [] for p in proxy_columns}
        for c in levels:
            table = tables[(agg, c)]
            if set(table['scene_id']) != set(proxy_index.index):
                raise SceneSetMismatchError(
                    f"Cenas de {agg}@{c} não coincidem com a tabela de medidas"
                )
            aligned = proxy_index.loc[table['scene_id']]
            for proxy in proxy_columns:
                try:
                    per_proxy[proxy].append(spearman(table['iso_score'].to_numpy(), aligned[proxy].to_numpy()))
                except ZeroVarianceError:
                    per_proxy[proxy].append(float('nan'))
        for proxy, values in per_proxy.items():
            defined = bool(values) and not np.any(np.isnan(values))
            rho = float(np.mean(values)) if defined else float('nan')
            rows.append(AlignmentRow(agg, proxy, rho, defined))
    return rows


def select_config(stability: Sequence[StabilityRow], alignment: Sequence[AlignmentRow],
                  tau_min: float = DEFAULT_TAU_MIN,
                  contamination: float = DEFAULT_CONTAMINATION, strict: bool = False) -> Selection:
    """
    Entre os agregadores com τ médio >= tau_min, escolhe o de maior |ρ| médio
    sobre as medidas definidas; empate resolvido pela ordem lexicográfica.
    Sem candidato, usa 'max' (ou levanta NoneQualifyError se strict).
    """
    pair_rows = [r for r in stability if r.pair != 'mean']
    tau = {agg: float(np.mean([r.kendall_tau for r in pair_rows if r.aggregator == agg]))
           for agg in dict.fromkeys(r.aggregator for r in pair_rows)}
    rho: Dict[str, float] = {}
    for agg in dict.fromkeys(r.aggregator for r in alignment):
        values = [abs(r.spearman_rho) for r in alignment if r.aggregator == agg and r.defined]
        rho[agg] = float(np.mean(values)) if values else 0.0

    qualifying = sorted(agg for agg, t in tau.items() if t >= tau_min)
    if qualifying:
        best = min(qualifying, key=lambda agg: (-rho.get(agg, 0.0), agg))
        return Selection(best, contamination, True, tau[best], rho.get(best, 0.0))
    if strict:
        raise NoneQualifyError(f"Nenhum agregador atinge τ >= {tau_min}")

    logger.warning(f"Nenhum agregador atinge τ >= {tau_min}; usando '{FALLBACK_AGGREGATOR}'")
    return Selection(FALLBACK_AGGREGATOR, contamination, False,
                     tau.get(FALLBACK_AGGREGATOR, float('nan')), rho.get(FALLBACK_AGGREGATOR, 0.0))


def overlap_report(ours: Set[str], ttc_flags: Set[str], if_flags: Set[str]) -> OverlapReport:
    return OverlapReport(
        ours_total=len(ours),
        ttc_total=len(ttc_flags),
        if_total=len(if_flags),
        unique_ours=len(ours - ttc_flags - if_flags),
        ours_ttc_only=len((ours & ttc_flags) - if_flags),
        ours_if_only=len((ours & if_flags) - ttc_flags),
        ours_both=len(ours & ttc_flags & if_flags),
        unique_ids=sorted(ours - ttc_flags - if_flags),
    )


def baselines(proxies: pd.DataFrame, ours: Set[str], contamination: float = DEFAULT_CONTAMINATION,
              ttc_threshold: float = TTC_THRESHOLD, ttc_cap: float = TTC_CAP,
              cfg: Optional[ForestConfig] = None) -> BaselineResult:
    """
    Baseline de limiar (min_ttc < ttc_threshold) e Isolation Forest sobre as
    features físicas (TTC infinito limitado a ttc_cap), com a partição de
    sobreposição contra as nossas flags.
    """
    cfg = cfg or ForestConfig()
    ttc_flags = set(proxies.loc[proxies['min_ttc'] < ttc_threshold, 'scene_id'])

    features = proxies[['scene_id'] + BASELINE_FEATURES].copy()
    features['min_ttc'] = features['min_ttc'].clip(upper=ttc_cap)
    features['min_dist'] = features['min_dist'].clip(upper=ttc_cap)
    seed = derive_seed(cfg.seed, 'baseline:features')
    table = fit_score_flag(features, cfg.model_copy(update={'seed': seed}), contamination)
    if_flags = flagged_ids(table)

    overlap = overlap_report(set(ours), ttc_flags, if_flags)
    logger.info(
        f"Baselines: TTC<{ttc_threshold}s={len(ttc_flags)} IF={len(if_flags)} "
        f"nossas={overlap.ours_total} únicas={overlap.unique_ours}"
    )
    return BaselineResult(ttc_flags, if_flags, overlap, ttc_threshold, ttc_cap, contamination)


def ccdf(scores: Sequence[float]) -> pd.DataFrame:
    """
    CCDF empírica: scores únicos em ordem crescente com P(S >= score), mais
    colunas log10 (NaN para valores não positivos).
    """
    values = np.sort(np.asarray(scores, dtype=float))
    if values.size == 0:
        return pd.DataFrame(columns=['score', 'prob', 'log10_score', 'log10_prob'])
    unique, first = np.unique(values, return_index=True)
    prob = (values.size - first) / values.size
    with np.errstate(divide='ignore', invalid='ignore'):
        log_score = np.where(unique > 0, np.log10(np.where(unique > 0, unique, 1.0)), np.nan)
    return pd.DataFrame({'score': unique, 'prob': prob, 'log10_score': log_score, 'log10_prob': np.log10(prob)})


def contrast_table(proxies: pd.DataFrame, flags: Set[str], ttc_cap: float = TTC_CAP) -> pd.DataFrame:
    """Média ± desvio populacional de cada métrica física: cenas marcadas vs demais."""
    frame = proxies.copy()
    frame['min_ttc'] = frame['min_ttc'].clip(upper=ttc_cap)
    frame['min_dist'] = frame['min_dist'].clip(upper=ttc_cap)
    is_flagged = frame['scene_id'].isin(flags)
    rows = []
    for metric in CONTRAST_METRICS:
        anomalous = frame.loc[is_flagged, metric].to_numpy(dtype=float)
        normal = frame.loc[~is_flagged, metric].to_numpy(dtype=float)
        rows.append({
            'metric': metric,
            'anomalous_mean': float(anomalous.mean()) if anomalous.size else float('nan'),
            'anomalous_std': float(anomalous.std()) if anomalous.size else float('nan'),
            'normal_mean': float(normal.mean()) if normal.size else float('nan'),
            'normal_std': float(normal.std()) if normal.size else float('nan'),
        })
    return pd.DataFrame(rows)


def detection_metrics(flags: Set[str], labels: Sequence[GroundTruthLabel]) -> Dict:
    """Precisão, recall, lift sobre sorteio aleatório e recall por tipo de anomalia."""
    truth = {lab.scene_id for lab in labels if lab.is_anomaly}
    n = len(labels)
    hits = len(flags & truth)
    precision = hits / len(flags) if flags else 0.0
    recall = hits / len(truth) if truth else 0.0
    base_rate = len(truth) / n if n else 0.0
    per_kind = {}
    for kind in AnomalyKind:
        if kind is AnomalyKind.NONE:
            continue
        ids = {lab.scene_id for lab in labels if lab.kind is kind}
        if ids:
            per_kind[kind.value] = len(flags & ids) / len(ids)
    return {
        'n_scenes': n,
        'n_anomalies': len(truth),
        'n_flagged': len(flags),
        'precision': precision,
        'recall': recall,
        'lift': precision / base_rate if base_rate else 0.0,
        'recall_by_kind': per_kind,
    }


def overlap_by_label(overlap: OverlapReport, ttc_flags: Set[str],
                     labels: Sequence[GroundTruthLabel]) -> pd.DataFrame:
    """Contagem e fração por tipo de rótulo: cenas exclusivas nossas vs marcadas pelo limiar de TTC."""
    kind_of = {lab.scene_id: lab.kind.value for lab in labels}
    rows = []
    for partition, ids in (('unique_ours', set(overlap.unique_ids)), ('ttc_threshold', ttc_flags)):
        counts = pd.Series([kind_of.get(i, AnomalyKind.NONE.value) for i in ids], dtype=object).value_counts()
        for kind in AnomalyKind:
            count = int(counts.get(kind.value, 0))
            rows.append({
                'partition': partition,
                'kind': kind.value,
                'count': count,
                'fraction': count / len(ids) if ids else 0.0,
            })
    return pd.DataFrame(rows)
