"""
File: residual_agg.py
Author: Equipe Data Analytics
Date: 2026-09-10
Version: 1.0
Description: Converte erros de predição em resíduos por (agente, passo) e agrega
             em uma intensidade de anomalia por cena (max, q95, mean, top-k).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from models.predictor import PredictionResult
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

DEFAULT_TOP_K = 5
SCORE_COLUMNS = ['scene_id', 'aggregator', 'residual_score']


class ResidualError(Exception):
    """Erro base da agregação de resíduos."""


class EmptyResidualsError(ResidualError):
    """Conjunto de resíduos vazio."""


class ResidualWeights(BaseModel):
    alpha_pos: float = Field(default=1.0, ge=0.0)
    alpha_vel: float = Field(default=0.5, ge=0.0)

    @model_validator(mode='after')
    def validate_not_zero(self) -> 'ResidualWeights':
        if self.alpha_pos == 0.0 and self.alpha_vel == 0.0:
            raise ValueError('alpha_pos e alpha_vel não podem ser ambos zero')
        return self


class AggregatorKind(str, Enum):
    MAX = 'max'
    Q95 = 'q95'
    MEAN = 'mean'
    TOPK = 'topk'


@dataclass(frozen=True)
class Aggregator:
    kind: AggregatorKind
    k: int = DEFAULT_TOP_K

    def __post_init__(self):
        object.__setattr__(self, 'kind', AggregatorKind(self.kind))
        if self.kind is AggregatorKind.TOPK and self.k < 1:
            raise ValueError(f"TopK exige k >= 1 (recebido {self.k})")

    @property
    def tag(self) -> str:
        return self.kind.value

    @classmethod
    def parse(cls, name: Union[str, 'Aggregator'], k: int = DEFAULT_TOP_K) -> 'Aggregator':
        if isinstance(name, Aggregator):
            return name
        try:
            return cls(AggregatorKind(str(name).lower()), k)
        except ValueError as e:
            raise ValueError(f"Agregador desconhecido: {name}") from e


ALL_AGGREGATORS = tuple(Aggregator(kind) for kind in AggregatorKind)


@dataclass(frozen=True)
class SceneScore:
    scene_id: str
    residual_score: float
    aggregator: str


def residuals(pred: PredictionResult, w: Optional[ResidualWeights] = None) -> np.ndarray:
    """
    e = α_pos·‖p̂−p‖₂ + α_vel·|v̂−v| para cada (passo, agente presente).

    Returns:
        array (T, n_presentes); agentes ausentes não aparecem
    """
    w = w or ResidualWeights()
    diff = pred.predicted[:, pred.present, :] - pred.actual[:, pred.present, :]
    position = np.hypot(diff[..., 0], diff[..., 1])
    return w.alpha_pos * position + w.alpha_vel * np.abs(diff[..., 2])


def aggregate(values: Union[np.ndarray, Sequence[float]], f: Union[Aggregator, str],
              scene_id: str = '') -> SceneScore:
    """
    Agrega o conjunto de resíduos de uma cena.

    Q95 usa interpolação linear entre estatísticas de ordem; TopK é a média
    dos k maiores (todos, se houver menos de k).

    Raises:
        EmptyResidualsError: conjunto vazio
    """
    f = Aggregator.parse(f)
    ordered = np.sort(np.asarray(values, dtype=float).ravel())
    if ordered.size == 0:
        raise EmptyResidualsError(f"Cena {scene_id or '?'} sem resíduos")

    if f.kind is AggregatorKind.MAX:
        value = ordered[-1]
    elif f.kind is AggregatorKind.MEAN:
        value = ordered.mean()
    elif f.kind is AggregatorKind.Q95:
        value = np.percentile(ordered, 95, method='linear')
    else:
        value = ordered[-min(f.k, ordered.size):].mean()
    return SceneScore(scene_id, float(value), f.tag)


def score_predictions(preds: Iterable[PredictionResult],
                      aggregators: Sequence[Union[Aggregator, str]] = ALL_AGGREGATORS,
                      weights: Optional[ResidualWeights] = None,
                      threads: int = 1) -> pd.DataFrame:
    """
    Tabela de scores: uma linha por (cena, agregador), colunas scene_id, aggregator, residual_score.
    """
    aggs = [Aggregator.parse(a) for a in aggregators]
    weights = weights or ResidualWeights()

    def _scene_rows(pred: PredictionResult) -> List[dict]:
        e = residuals(pred, weights)
        return [asdict(aggregate(e, agg, pred.scene_id)) for agg in aggs]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        nested = list(executor.map(_scene_rows, preds))

    rows = [row for scene_rows in nested for row in scene_rows]
    table = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    logger.info(f"{len(nested)} cenas pontuadas com {[a.tag for a in aggs]}")
    return table


def scores_for(table: pd.DataFrame, aggregator: Union[Aggregator, str]) -> pd.Series:
    """Série residual_score indexada por scene_id para um agregador."""
    tag = Aggregator.parse(aggregator).tag
    subset = table[table['aggregator'] == tag]
    return subset.set_index('scene_id')['residual_score'].astype(float)
