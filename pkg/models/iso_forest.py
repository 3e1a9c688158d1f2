"""
File: iso_forest.py
Author: Equipe Data Analytics
Date: 2026-09-11
Version: 1.0
Description: Isolation Forest implementado do zero. Converte scores escalares de
             cena (ou vetores pequenos de features) em iso_scores em (0, 1) e em
             flags por contaminação, com corte por posto e desempate por scene_id.
"""

import math
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from utils.hash_utils import derive_seed
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

EULER_GAMMA = 0.5772156649015329
EXACT_HARMONIC_LIMIT = 50
FLAG_COLUMNS = ['scene_id', 'iso_score', 'flagged']


class ForestError(Exception):
    """Erro base do Isolation Forest."""


class DegenerateInputError(ForestError):
    """Entrada sem variação ou inválida para o ajuste."""


class ForestConfig(BaseModel):
    n_trees: int = Field(default=100, ge=1)
    subsample: int = Field(default=256, ge=2)
    max_depth: Optional[int] = Field(default=None, ge=1)
    contamination: float = Field(default=0.15, gt=0.0, le=0.5)
    seed: int = 7

    @property
    def depth_limit(self) -> int:
        return self.max_depth or int(math.ceil(math.log2(self.subsample)))


def harmonic_number(i: int) -> float:
    """H(i) exato até 50; ln(i) + γ acima."""
    if i <= 0:
        return 0.0
    if i <= EXACT_HARMONIC_LIMIT:
        return math.fsum(1.0 / j for j in range(1, i + 1))
    return math.log(i) + EULER_GAMMA


@lru_cache(maxsize=4096)
def average_path_length(n: int) -> float:
    """c(n): comprimento médio de busca sem sucesso em uma BST com n nós."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic_number(n - 1) - 2.0 * (n - 1) / n


def anomaly_score(mean_path: Union[float, np.ndarray], sample_size: int) -> Union[float, np.ndarray]:
    """s = 2^(−E[h]/c(ψ))."""
    return np.power(2.0, -np.asarray(mean_path, dtype=float) / average_path_length(sample_size))


@dataclass(frozen=True)
class IsolationTree:
    """
    Árvore em arrays paralelos; nós folha têm feature = -1. `size` é o número
    de amostras que chegaram ao nó durante a construção e `correction` o c(size)
    somado ao caminho quando a busca termina no nó.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    correction: np.ndarray

    def path_lengths(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        node = np.zeros(points.shape[0], dtype=int)
        depth = np.zeros(points.shape[0], dtype=float)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = points[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            depth[idx] += 1.0
            active = self.feature[node] >= 0
        return depth + self.correction[node]


@dataclass(frozen=True)
class IsolationForest:
    trees: tuple
    sample_size: int

    def mean_path_length(self, points: np.ndarray) -> np.ndarray:
        return np.mean([tree.path_lengths(points) for tree in self.trees], axis=0)


class _TreeArrays:
    """Acumula os nós durante a construção."""

    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.size: List[int] = []

    def new_node(self, count: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.size.append(count)
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, n_left: int, n_right: int) -> Tuple[int, int]:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = self.new_node(n_left)
        self.right[node] = self.new_node(n_right)
        return self.left[node], self.right[node]

    def freeze(self) -> IsolationTree:
        return IsolationTree(
            feature=np.asarray(self.feature, dtype=int),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=int),
            right=np.asarray(self.right, dtype=int),
            size=np.asarray(self.size, dtype=int),
            correction=np.array([average_path_length(s) for s in self.size]),
        )


def _tree_draws(rng: np.random.Generator, n: int, sample_size: int,
                depth_limit: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sorteios de uma árvore, feitos de uma vez: índices da subamostra e, para
    a k-ésima divisão em ordem de construção, um uniforme para a feature e
    outro para o ponto de corte.
    """
    idx = rng.choice(n, size=sample_size, replace=n < sample_size)
    max_splits = max(1, min(sample_size - 1, 2 ** min(depth_limit, 30) - 1))
    return idx, rng.random(max_splits), rng.random(max_splits)


def _split_point(lo: float, hi: float, u: float) -> float:
    split = lo + u * (hi - lo)
    if split <= lo:
        split = float(np.nextafter(lo, hi))
    return float(split)


def _build_tree(points: np.ndarray, rng: np.random.Generator, sample_size: int, depth_limit: int) -> IsolationTree:
    idx, u_feature, u_split = _tree_draws(rng, points.shape[0], sample_size, depth_limit)
    sample = points[idx]
    arrays = _TreeArrays()

    k = 0
    stack = [(arrays.new_node(sample.shape[0]), sample, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if rows.shape[0] <= 1 or depth >= depth_limit:
            continue
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if candidates.size == 0:
            continue
        f = int(candidates[int(u_feature[k] * candidates.size)])
        split = _split_point(float(lo[f]), float(hi[f]), u_split[k])
        k += 1
        mask = rows[:, f] < split
        left, right = arrays.split(node, f, split, int(mask.sum()), int((~mask).sum()))
        stack.append((right, rows[~mask], depth + 1))
        stack.append((left, rows[mask], depth + 1))

    return arrays.freeze()


def _build_tree_1d(points: np.ndarray, rng: np.random.Generator, sample_size: int,
                   depth_limit: int) -> IsolationTree:
    """
    Mesma árvore de `_build_tree` para d = 1, sobre a subamostra ordenada: cada
    nó é um intervalo [i, j) e o corte sai de uma busca binária.
    """
    idx, _, u_split = _tree_draws(rng, points.shape[0], sample_size, depth_limit)
    values = np.sort(points[idx, 0]).tolist()
    arrays = _TreeArrays()

    k = 0
    stack = [(arrays.new_node(len(values)), 0, len(values), 0)]
    while stack:
        node, i, j, depth = stack.pop()
        if j - i <= 1 or depth >= depth_limit:
            continue
        lo, hi = values[i], values[j - 1]
        if not hi > lo:
            continue
        split = _split_point(lo, hi, u_split[k])
        k += 1
        cut = bisect_left(values, split, i, j)
        left, right = arrays.split(node, 0, split, cut - i, j - cut)
        stack.append((right, cut, j, depth + 1))
        stack.append((left, i, cut, depth + 1))

    return arrays.freeze()


def _as_matrix(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def fit(points, cfg: Optional[ForestConfig] = None, threads: int = 1) -> IsolationForest:
    """
    Ajusta a floresta; cada árvore tem sua subamostra e seu gerador derivados da semente.

    Raises:
        DegenerateInputError: N < 2, valores não finitos ou todos os pontos idênticos
    """
    cfg = cfg or ForestConfig()
    matrix = _as_matrix(points)
    if matrix.ndim != 2 or matrix.shape[0] < 2 or matrix.shape[1] < 1:
        raise DegenerateInputError(f"Isolation Forest exige N >= 2 e d >= 1 (shape {matrix.shape})")
    if not np.isfinite(matrix).all():
        raise DegenerateInputError("Isolation Forest recebeu valores não finitos")
    if np.all(matrix == matrix[0]):
        raise DegenerateInputError("Todos os pontos são idênticos; nenhuma divisão possível")

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    depth_limit = cfg.depth_limit
    builder = _build_tree_1d if matrix.shape[1] == 1 else _build_tree

    def build(child: np.random.SeedSequence) -> IsolationTree:
        return builder(matrix, np.random.default_rng(child), cfg.subsample, depth_limit)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        trees = tuple(executor.map(build, children))

    logger.debug(f"Floresta ajustada: {cfg.n_trees} árvores, ψ={cfg.subsample}, N={matrix.shape[0]}")
    return IsolationForest(trees=trees, sample_size=cfg.subsample)


def score(forest: IsolationForest, points) -> np.ndarray:
    """iso_score em (0, 1) para cada ponto; maior é mais anômalo."""
    return anomaly_score(forest.mean_path_length(_as_matrix(points)), forest.sample_size)


def flag_count(n: int, contamination: float) -> int:
    """round(c·N) com arredondamento meio-para-cima."""
    return int(math.floor(contamination * n + 0.5))


def flag(scores: Sequence[float], contamination: float,
         scene_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """
    Marca exatamente round(c·N) maiores scores; empates resolvidos por scene_id
    (ou pela posição, sem ids).
    """
    if not 0.0 < contamination <= 0.5:
        raise ValueError(f"contamination fora de (0, 0.5]: {contamination}")
    values = np.asarray(scores, dtype=float)
    keys = np.asarray(scene_ids if scene_ids is not None else np.arange(values.size))
    order = np.lexsort((keys, -values))
    flags = np.zeros(values.size, dtype=bool)
    flags[order[:flag_count(values.size, contamination)]] = True
    return flags


def contamination_seed(seed: int, index: int) -> int:
    """Semente derivada para o reajuste no nível de contaminação `index`."""
    return derive_seed(seed, f"contamination:{index}")


def fit_score_flag(scores: Union[pd.Series, pd.DataFrame], cfg: ForestConfig,
                   contamination: Optional[float] = None, threads: int = 1) -> pd.DataFrame:
    """
    Ajusta sobre os scores de cena, pontua e marca.

    Args:
        scores: Series indexada por scene_id, ou DataFrame com scene_id e
            residual_score (ou colunas de features)
    Returns:
        DataFrame scene_id, iso_score, flagged ordenado por scene_id
    """
    if isinstance(scores, pd.Series):
        frame = scores.rename('residual_score').rename_axis('scene_id').reset_index()
    else:
        frame = scores
    frame = frame.sort_values('scene_id', kind='mergesort').reset_index(drop=True)
    feature_cols = [c for c in frame.columns if c not in ('scene_id', 'aggregator')]
    matrix = frame[feature_cols].to_numpy(dtype=float)

    contamination = cfg.contamination if contamination is None else contamination
    forest = fit(matrix, cfg, threads)
    iso = score(forest, matrix)
    ids = frame['scene_id'].astype(str).to_numpy()
    flags = flag(iso, contamination, ids)
    logger.info(f"Isolation Forest: {int(flags.sum())}/{len(ids)} cenas marcadas (c={contamination})")
    return pd.DataFrame({'scene_id': ids, 'iso_score': iso, 'flagged': flags}, columns=FLAG_COLUMNS)
