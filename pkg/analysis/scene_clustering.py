"""
File: scene_clustering.py
Author: Equipe Data Analytics
Date: 2026-09-17
Version: 1.0
Description: Agrupamento das cenas marcadas por K-Means sobre o vetor 6D de
             estatísticas de erro de predição (lateral e de velocidade), com
             escolha de K pelo coeficiente de silhueta e centros em escala
             min-max.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist, squareform

from models.predictor import PredictionResult
from scenes.synth_traffic import GroundTruthLabel
from utils.hash_utils import generate_array_hash
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

FEATURE_COLUMNS = ['max_dx', 'mean_dx', 'std_dx', 'max_v', 'mean_v', 'std_v']
LATERAL_COLUMNS = FEATURE_COLUMNS[:3]
VELOCITY_COLUMNS = FEATURE_COLUMNS[3:]
DEFAULT_K_RANGE = tuple(range(2, 9))
N_RESTARTS = 10
MAX_ITER = 300
TOL = 1e-6
WEAK_SILHOUETTE = 0.25


class ClusteringError(Exception):
    """Erro base do agrupamento."""


class TooFewPointsError(ClusteringError):
    """Menos pontos que clusters."""


class SingleClusterError(ClusteringError):
    """Silhueta indefinida com um único cluster."""


@dataclass(frozen=True)
class ErrorFeatures:
    scene_id: str
    max_dx: float
    mean_dx: float
    std_dx: float
    max_v: float
    mean_v: float
    std_v: float


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    history: List[float] = field(default_factory=list)


@dataclass
class ClusterReport:
    k: int
    assignments: Dict[str, int]
    centers_raw: np.ndarray
    centers_minmax: np.ndarray
    silhouette_by_k: Dict[int, float]
    inertia: float
    cluster_sizes: List[int]
    warning: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            'k': self.k,
            'feature_columns': FEATURE_COLUMNS,
            'assignments': self.assignments,
            'centers_raw': self.centers_raw.tolist(),
            'centers_minmax': self.centers_minmax.tolist(),
            'silhouette_by_k': {str(k): s for k, s in self.silhouette_by_k.items()},
            'inertia': self.inertia,
            'cluster_sizes': self.cluster_sizes,
            'warning': self.warning,
        }


def extract_features(pred: PredictionResult) -> ErrorFeatures:
    """max/mean/std populacional de |x̂−x| e |v̂−v| agrupados sobre (passo, agente presente)."""
    diff = np.abs(pred.predicted[:, pred.present, :] - pred.actual[:, pred.present, :])
    lateral = diff[..., 0].ravel()
    velocity = diff[..., 2].ravel()
    return ErrorFeatures(
        scene_id=pred.scene_id,
        max_dx=float(lateral.max()), mean_dx=float(lateral.mean()), std_dx=float(lateral.std()),
        max_v=float(velocity.max()), mean_v=float(velocity.mean()), std_v=float(velocity.std()),
    )


def feature_table(preds: Iterable[PredictionResult], scene_ids: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """Tabela de features; com scene_ids, restringe às cenas informadas."""
    wanted = set(scene_ids) if scene_ids is not None else None
    rows = [asdict(extract_features(p)) for p in preds if wanted is None or p.scene_id in wanted]
    table = pd.DataFrame(rows, columns=['scene_id'] + FEATURE_COLUMNS)
    return table.sort_values('scene_id', kind='mergesort').reset_index(drop=True)


def minmax(points: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """Escala cada coluna para [0, 1]; colunas constantes viram 0."""
    points = np.asarray(points, dtype=float)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    constant = [int(i) for i in np.flatnonzero(span == 0)]
    scaled = np.where(span > 0, (points - lo) / np.where(span > 0, span, 1.0), 0.0)
    return scaled, constant


def _content_order(points: np.ndarray) -> np.ndarray:
    keys = np.array([generate_array_hash(np.ascontiguousarray(row)) for row in points])
    return np.argsort(keys, kind='stable')


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centers.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float) -> KMeansResult:
    centers = _plus_plus(points, k, rng)
    history: List[float] = []
    assignments = np.zeros(points.shape[0], dtype=int)
    for _ in range(max_iter):
        dist = cdist(points, centers, 'sqeuclidean')
        assignments = dist.argmin(axis=1)
        history.append(float(dist[np.arange(points.shape[0]), assignments].sum()))

        updated = centers.copy()
        for j in range(k):
            members = assignments == j
            if members.any():
                updated[j] = points[members].mean(axis=0)
        for j in range(k):
            if not (assignments == j).any():
                # reposiciona no ponto mais distante do próprio centro
                cost = cdist(points, updated, 'sqeuclidean')[np.arange(points.shape[0]), assignments]
                far = int(cost.argmax())
                updated[j] = points[far]
                assignments[far] = j

        shift = float(np.sqrt(((updated - centers) ** 2).sum(axis=1)).max())
        centers = updated
        if shift < tol:
            break

    dist = cdist(points, centers, 'sqeuclidean')
    assignments = dist.argmin(axis=1)
    inertia = float(dist[np.arange(points.shape[0]), assignments].sum())
    history.append(inertia)
    return KMeansResult(assignments, centers, inertia, history)


def _canonical(result: KMeansResult) -> KMeansResult:
    order = np.lexsort(result.centers.T[::-1])
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.size)
    return KMeansResult(relabel[result.assignments], result.centers[order], result.inertia, result.history)


def kmeans(points, k: int, seed: int = 0, n_init: int = N_RESTARTS, max_iter: int = MAX_ITER,
           tol: float = TOL, threads: int = 1) -> KMeansResult:
    """
    Lloyd com semeadura k-means++ e `n_init` reinícios; mantém a menor inércia.
    Os pontos são ordenados pelo hash do conteúdo antes da semeadura e os
    clusters renumerados pela ordem lexicográfica dos centros, de modo que o
    resultado não depende da ordem de entrada.

    Raises:
        TooFewPointsError: N < k ou k < 1
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    n = points.shape[0]
    if k < 1 or n < k:
        raise TooFewPointsError(f"kmeans com N={n} e k={k}")

    order = _content_order(points)
    ordered = points[order]
    children = np.random.SeedSequence(seed).spawn(n_init)

    def restart(child: np.random.SeedSequence) -> KMeansResult:
        return _lloyd(ordered, k, np.random.default_rng(child), max_iter, tol)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(restart, children))
    best = min(range(len(results)), key=lambda i: (results[i].inertia, i))
    chosen = _canonical(results[best])

    assignments = np.empty(n, dtype=int)
    assignments[order] = chosen.assignments
    return KMeansResult(assignments, chosen.centers, chosen.inertia, chosen.history)


def silhouette(points, assignments: Sequence[int]) -> float:
    """
    Silhueta média com distância euclidiana; pontos em clusters unitários valem 0.

    Raises:
        SingleClusterError: menos de 2 clusters
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    labels = np.asarray(assignments)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise SingleClusterError("Silhueta exige ao menos 2 clusters")

    dist = squareform(pdist(points))
    member = labels[:, None] == clusters[None, :]
    sizes = member.sum(axis=0)
    sums = dist @ member.astype(float)
    own = np.searchsorted(clusters, labels)
    idx = np.arange(labels.size)

    own_size = sizes[own]
    a = np.where(own_size > 1, sums[idx, own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes[None, :]
    mean_other[idx, own] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def select_k_and_report(features: pd.DataFrame, k_range: Sequence[int] = DEFAULT_K_RANGE,
                        seed: int = 0, threads: int = 1) -> ClusterReport:
    """
    K-Means para cada k no intervalo sobre as features em escala min-max;
    escolhe o k de maior silhueta (empate: menor k).

    Raises:
        TooFewPointsError: cenas insuficientes para 2 clusters
    """
    table = features.sort_values('scene_id', kind='mergesort').reset_index(drop=True)
    raw = table[FEATURE_COLUMNS].to_numpy(dtype=float)
    n = raw.shape[0]
    ks = [k for k in k_range if 2 <= k < n]
    if not ks:
        raise TooFewPointsError(f"{n} cenas não permitem escolher k em {list(k_range)}")

    scaled, constant = minmax(raw)
    warnings: List[str] = []
    skipped = [k for k in k_range if k not in ks]
    if skipped:
        # k >= n deixa clusters unitários: silhueta indefinida
        warnings.append(f"k ignorados fora de [2, {n - 1}]: {skipped}")
        logger.warning(f"k fora de [2, {n - 1}] ignorados para {n} cenas: {skipped}")
    if constant:
        names = [FEATURE_COLUMNS[i] for i in constant]
        warnings.append(f"features constantes: {names}")
        logger.warning(f"Features constantes no agrupamento: {names}")

    silhouettes: Dict[int, float] = {}
    fits: Dict[int, KMeansResult] = {}
    for k in ks:
        fits[k] = kmeans(scaled, k, seed, threads=threads)
        labels = fits[k].assignments
        silhouettes[k] = silhouette(scaled, labels) if np.unique(labels).size >= 2 else -1.0
        logger.debug(f"k={k}: silhueta={silhouettes[k]:.4f} inércia={fits[k].inertia:.4f}")

    best_k = ks[0]
    for k in ks[1:]:
        if silhouettes[k] > silhouettes[best_k]:
            best_k = k
    chosen = fits[best_k]
    if silhouettes[best_k] < WEAK_SILHOUETTE:
        warnings.append(f"silhueta baixa ({silhouettes[best_k]:.3f} < {WEAK_SILHOUETTE})")
        logger.warning(f"Estrutura de clusters fraca: silhueta {silhouettes[best_k]:.3f}")

    centers_raw = np.array([
        raw[chosen.assignments == j].mean(axis=0) if (chosen.assignments == j).any() else np.zeros(raw.shape[1])
        for j in range(best_k)
    ])
    sizes = [int((chosen.assignments == j).sum()) for j in range(best_k)]
    logger.info(f"Agrupamento: k={best_k} silhueta={silhouettes[best_k]:.3f} tamanhos={sizes}")

    return ClusterReport(
        k=best_k,
        assignments={sid: int(c) for sid, c in zip(table['scene_id'], chosen.assignments)},
        centers_raw=centers_raw,
        centers_minmax=np.clip(chosen.centers, 0.0, 1.0),
        silhouette_by_k=silhouettes,
        inertia=chosen.inertia,
        cluster_sizes=sizes,
        warning='; '.join(warnings) or None,
    )


def exemplars(report: ClusterReport, features: pd.DataFrame, n: int = 3) -> Dict[int, List[str]]:
    """Para cada cluster, as `n` cenas mais próximas do centro normalizado."""
    table = features.sort_values('scene_id', kind='mergesort').reset_index(drop=True)
    scaled, _ = minmax(table[FEATURE_COLUMNS].to_numpy(dtype=float))
    ids = table['scene_id'].to_numpy()
    labels = np.array([report.assignments[sid] for sid in ids])
    out: Dict[int, List[str]] = {}
    for j in range(report.k):
        members = np.flatnonzero(labels == j)
        dist = np.linalg.norm(scaled[members] - report.centers_minmax[j], axis=1)
        ranked = members[np.lexsort((ids[members], dist))]
        out[j] = [str(s) for s in ids[ranked[:n]]]
    return out


def label_agreement(assignments: Mapping[str, int], labels: Iterable[GroundTruthLabel]) -> float:
    """Fração de cenas cujo cluster corresponde ao rótulo sob a melhor associação cluster→rótulo."""
    kind_of = {lab.scene_id: lab.kind.value for lab in labels}
    ids = [sid for sid in assignments if sid in kind_of]
    if not ids:
        return 0.0
    clusters = sorted({assignments[sid] for sid in ids})
    kinds = sorted({kind_of[sid] for sid in ids})
    table = np.zeros((len(clusters), len(kinds)), dtype=int)
    for sid in ids:
        table[clusters.index(assignments[sid]), kinds.index(kind_of[sid])] += 1
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / len(ids)


def dominant_axes(report: ClusterReport) -> Dict[str, int]:
    """Cluster de maior centro médio nos eixos de velocidade e nos eixos laterais."""
    centers = report.centers_minmax
    return {
        'velocity': int(centers[:, 3:].mean(axis=1).argmax()),
        'lateral': int(centers[:, :3].mean(axis=1).argmax()),
    }
