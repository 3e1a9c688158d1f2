"""
File: safety_proxies.py
Author: Equipe Data Analytics
Date: 2026-09-12
Version: 1.0
Description: Medidas substitutas de segurança (SSM) por cena: razão de
             aproximação brusca, excursão lateral, menor gap longitudinal,
             menor TTC e variabilidade da velocidade relativa, além das features
             físicas usadas pelos baselines (distância mínima, Δv máximo,
             aceleração máxima). Inclui a correlação de Spearman.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import rankdata

from scenes.scene_model import DT, RoleSlot, SceneTensor
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

# (líder, seguidor) na mesma faixa
SAME_LANE_PAIRS: Tuple[Tuple[RoleSlot, RoleSlot], ...] = (
    (RoleSlot.FRONT, RoleSlot.EGO),
    (RoleSlot.EGO, RoleSlot.REAR),
    (RoleSlot.FRONT_LEFT, RoleSlot.REAR_LEFT),
    (RoleSlot.FRONT_RIGHT, RoleSlot.REAR_RIGHT),
)

SSM_COLUMNS = ['harsh_closing_ratio', 'lateral_excursion', 'min_long_gap', 'min_ttc', 'rel_speed_std']
PHYSICAL_COLUMNS = ['min_dist', 'max_dv', 'max_acc']
PROXY_COLUMNS = ['scene_id', 'harsh_closing_ratio', 'lateral_excursion', 'min_long_gap',
                 'min_long_gap_center', 'min_ttc', 'rel_speed_std', 'min_dist', 'max_dv', 'max_acc']


class ProxyError(Exception):
    """Erro base das medidas de segurança."""


class LengthMismatchError(ProxyError):
    """Séries de tamanhos diferentes."""


class ZeroVarianceError(ProxyError):
    """Correlação indefinida: uma das séries é constante."""


class ProxyConfig(BaseModel):
    harsh_threshold: float = Field(default=3.0, gt=0.0)
    vehicle_length: float = Field(default=4.5, ge=0.0)
    dt: float = Field(default=DT, gt=0.0)
    lane_width: float = Field(default=3.7, gt=0.0)


@dataclass(frozen=True)
class ProxyRow:
    scene_id: str
    harsh_closing_ratio: float
    lateral_excursion: float
    min_long_gap: float
    min_long_gap_center: float
    min_ttc: float
    rel_speed_std: float
    min_dist: float
    max_dv: float
    max_acc: float


def ttc(gap, closing_speed):
    """
    Tempo até a colisão: gap / velocidade de aproximação; ∞ quando a
    aproximação é <= 0. Aceita escalares ou arrays.
    """
    gap = np.asarray(gap, dtype=float)
    closing = np.asarray(closing_speed, dtype=float)
    if np.any(gap < 0):
        raise ValueError("gap deve ser >= 0")
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.where(closing > 0, gap / np.where(closing > 0, closing, 1.0), np.inf)
    return float(out) if out.ndim == 0 else out


def _leader_pairs(scene: SceneTensor) -> List[Tuple[RoleSlot, RoleSlot]]:
    return [(lead, follow) for lead, follow in SAME_LANE_PAIRS if scene.present[lead] and scene.present[follow]]


def _pairwise_present(scene: SceneTensor) -> List[Tuple[int, int]]:
    idx = np.flatnonzero(scene.present)
    return [(int(i), int(j)) for n, i in enumerate(idx) for j in idx[n + 1:]]


def compute_proxies(scene: SceneTensor, cfg: Optional[ProxyConfig] = None) -> ProxyRow:
    """
    Calcula as medidas de uma cena. Pares de TTC/gap são líder-seguidor na
    mesma faixa; gap = distância entre centros − comprimento do veículo
    (mínimo 0). Sem pares, gaps e TTC ficam em ∞.
    """
    cfg = cfg or ProxyConfig()
    values = scene.values
    n_frames = values.shape[0]

    pairs = _leader_pairs(scene)
    min_ttc = min_gap = min_center = np.inf
    harsh = np.zeros(n_frames, dtype=bool)
    for lead, follow in pairs:
        center = values[:, lead, 1] - values[:, follow, 1]
        gap = np.clip(center - cfg.vehicle_length, 0.0, None)
        closing = values[:, follow, 2] - values[:, lead, 2]
        min_ttc = min(min_ttc, float(np.min(ttc(gap, closing))))
        min_gap = min(min_gap, float(gap.min()))
        min_center = min(min_center, float(np.abs(center).min()))
        harsh |= closing > cfg.harsh_threshold

    present_idx = np.flatnonzero(scene.present)
    lateral = np.abs(values[:, present_idx, 0] - values[0, present_idx, 0]).max()

    if scene.present[RoleSlot.FRONT]:
        rel_speed_std = float(np.std(values[:, RoleSlot.FRONT, 2] - values[:, RoleSlot.EGO, 2]))
    else:
        rel_speed_std = 0.0

    min_dist, max_dv = np.inf, 0.0
    for i, j in _pairwise_present(scene):
        dist = np.hypot(values[:, i, 0] - values[:, j, 0], values[:, i, 1] - values[:, j, 1])
        min_dist = min(min_dist, float(dist.min()))
        max_dv = max(max_dv, float(np.abs(values[:, i, 2] - values[:, j, 2]).max()))

    acc = np.gradient(values[:, present_idx, 2], cfg.dt, axis=0)
    max_acc = float(np.abs(acc).max())

    return ProxyRow(
        scene_id=scene.scene_id,
        harsh_closing_ratio=float(harsh.mean()) if pairs else 0.0,
        lateral_excursion=float(lateral),
        min_long_gap=float(min_gap),
        min_long_gap_center=float(min_center),
        min_ttc=float(min_ttc),
        rel_speed_std=rel_speed_std,
        min_dist=float(min_dist),
        max_dv=float(max_dv),
        max_acc=max_acc,
    )


def compute_proxy_table(scenes: Sequence[SceneTensor], cfg: Optional[ProxyConfig] = None,
                        threads: int = 1) -> pd.DataFrame:
    """ProxyTable: uma linha por cena, na ordem recebida."""
    cfg = cfg or ProxyConfig()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        rows = list(executor.map(lambda s: asdict(compute_proxies(s, cfg)), scenes))
    logger.info(f"Medidas de segurança calculadas para {len(rows)} cenas")
    return pd.DataFrame(rows, columns=PROXY_COLUMNS)


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Correlação de Pearson entre postos médios (empates recebem a média dos postos).

    Raises:
        LengthMismatchError: tamanhos diferentes ou menos de 2 pares
        ZeroVarianceError: alguma série constante
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatchError(f"Spearman com shapes {x.shape} e {y.shape}")
    if x.size < 2:
        raise LengthMismatchError("Spearman exige ao menos 2 pares")

    rx = rankdata(x, method='average')
    ry = rankdata(y, method='average')
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("Spearman indefinido: série constante")
    rho = float(np.dot(dx, dy)) / (np.sqrt(sxx) * np.sqrt(syy))
    return float(np.clip(rho, -1.0, 1.0))
