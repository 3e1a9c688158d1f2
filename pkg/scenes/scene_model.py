"""
File: scene_model.py
Author: Equipe Data Analytics
Date: 2026-09-03
Version: 1.0
Description: Tipos canônicos de cena (trilhas, papéis, tensor 50x7x3), transformação
             para o referencial do ego, normalização com estatísticas de treino,
             divisão treino/validação/teste agrupada por ego e armazenamento
             JSON-lines das cenas.
"""

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from utils.logging_utils import Log
from utils.json_utils import iter_jsonl, write_jsonl

logger = Log.get_logger(__name__)

N_STEPS = 50
N_SLOTS = 7
N_FEATURES = 3
DT = 0.1
FEATURES = ('x', 'y', 'v')


class SceneError(Exception):
    """Erro base do modelo de cena."""


class MissingEgoError(SceneError):
    """Trilha do ego ausente."""


class LengthMismatchError(SceneError):
    """Trilha com número de quadros diferente do esperado."""


class EmptyInputError(SceneError):
    """Nenhum dado presente para o cálculo solicitado."""


class InvalidSplitError(SceneError):
    """Frações de divisão inválidas."""


class RoleSlot(IntEnum):
    """Papéis fixos da vizinhança do ego (índice = posição no tensor)."""
    EGO = 0
    FRONT = 1
    REAR = 2
    FRONT_LEFT = 3
    FRONT_RIGHT = 4
    REAR_LEFT = 5
    REAR_RIGHT = 6

    @property
    def label(self) -> str:
        return ''.join(part.capitalize() for part in self.name.split('_'))


@dataclass(frozen=True)
class TrackPoint:
    frame_index: int
    x: float
    y: float
    v: float
    a: Optional[float] = None
    lane_id: Optional[int] = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index negativo: {self.frame_index}")
        if self.v < 0:
            raise ValueError(f"velocidade negativa: {self.v}")


@dataclass
class Track:
    """Trilha absoluta de um veículo, ordenada por quadro (arrays paralelos)."""
    vehicle_id: str
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: Optional[np.ndarray] = None
    lane_id: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(len(self.frame))

    @classmethod
    def from_points(cls, vehicle_id: str, points: Sequence[TrackPoint]) -> 'Track':
        has_acc = all(p.a is not None for p in points)
        has_lane = all(p.lane_id is not None for p in points)
        return cls(
            vehicle_id=str(vehicle_id),
            frame=np.array([p.frame_index for p in points], dtype=np.int64),
            x=np.array([p.x for p in points], dtype=float),
            y=np.array([p.y for p in points], dtype=float),
            v=np.array([p.v for p in points], dtype=float),
            a=np.array([p.a for p in points], dtype=float) if has_acc else None,
            lane_id=np.array([p.lane_id for p in points], dtype=np.int64) if has_lane else None,
        )

    def points(self) -> List[TrackPoint]:
        return [
            TrackPoint(
                frame_index=int(self.frame[i]),
                x=float(self.x[i]),
                y=float(self.y[i]),
                v=float(self.v[i]),
                a=None if self.a is None else float(self.a[i]),
                lane_id=None if self.lane_id is None else int(self.lane_id[i]),
            )
            for i in range(len(self))
        ]

    def window(self, frame0: int, length: int = N_STEPS) -> Optional['Track']:
        """Recorte [frame0, frame0 + length) se todos os quadros existirem; senão None."""
        lo = int(np.searchsorted(self.frame, frame0))
        hi = lo + length
        if hi > len(self) or self.frame[lo] != frame0 or self.frame[hi - 1] != frame0 + length - 1:
            return None
        return Track(
            vehicle_id=self.vehicle_id,
            frame=self.frame[lo:hi],
            x=self.x[lo:hi],
            y=self.y[lo:hi],
            v=self.v[lo:hi],
            a=None if self.a is None else self.a[lo:hi],
            lane_id=None if self.lane_id is None else self.lane_id[lo:hi],
        )

    def xyv(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.v], axis=-1).astype(float)


@dataclass(frozen=True)
class SceneTensor:
    """
    Cena ego-cêntrica: values (50, 7, 3) com (x, y, v) no referencial do ego,
    máscara de presença por papel e metadados. Papéis ausentes ficam zerados.
    """
    scene_id: str
    values: np.ndarray
    present: np.ndarray
    source_frame0: int
    ego_vehicle_id: str
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        present = np.array(self.present, dtype=bool)

        if values.shape != (N_STEPS, N_SLOTS, N_FEATURES):
            raise LengthMismatchError(
                f"Cena {self.scene_id}: shape {values.shape} != {(N_STEPS, N_SLOTS, N_FEATURES)}"
            )
        if present.shape != (N_SLOTS,):
            raise LengthMismatchError(f"Cena {self.scene_id}: máscara com shape {present.shape}")
        if not present[RoleSlot.EGO]:
            raise MissingEgoError(f"Cena {self.scene_id}: ego ausente")
        if not np.all(np.isfinite(values[:, present, :])):
            raise ValueError(f"Cena {self.scene_id}: valores não finitos em agentes presentes")

        values[:, ~present, :] = 0.0
        values.flags.writeable = False
        present.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'present', present)
        object.__setattr__(self, 'origin', (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    def slot(self, role: RoleSlot) -> Optional[np.ndarray]:
        """Série (50, 3) do papel, ou None se ausente."""
        return self.values[:, role, :] if self.present[role] else None

    def to_record(self) -> Dict:
        return {
            'scene_id': self.scene_id,
            'frame0': int(self.source_frame0),
            'ego_id': self.ego_vehicle_id,
            'present': [bool(p) for p in self.present],
            'origin': list(self.origin),
            'values': self.values.tolist(),
        }

    @classmethod
    def from_record(cls, record: Mapping) -> 'SceneTensor':
        return cls(
            scene_id=str(record['scene_id']),
            values=np.asarray(record['values'], dtype=float),
            present=np.asarray(record['present'], dtype=bool),
            source_frame0=int(record['frame0']),
            ego_vehicle_id=str(record['ego_id']),
            origin=tuple(record.get('origin', (0.0, 0.0))),
        )


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> Dict[str, List[float]]:
        return {'mean': [float(m) for m in self.mean], 'std': [float(s) for s in self.std]}

    @classmethod
    def from_dict(cls, data: Mapping) -> 'NormStats':
        return cls(mean=np.asarray(data['mean'], dtype=float), std=np.asarray(data['std'], dtype=float))


def _check_fractions(train: float, val: float, test: float) -> None:
    fractions = (train, val, test)
    if any(f < 0 for f in fractions):
        raise ValueError(f"Frações negativas: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"Frações devem somar 1.0 (soma={sum(fractions)!r})")


class SplitSpec(BaseModel):
    """Frações treino/validação/teste e semente do embaralhamento."""
    train_fraction: float = 0.7
    val_fraction: float = 0.2
    test_fraction: float = 0.1
    seed: int = 42

    @model_validator(mode='after')
    def validate_fractions(self) -> 'SplitSpec':
        _check_fractions(self.train_fraction, self.val_fraction, self.test_fraction)
        return self


def to_ego_frame(
    neighbors: Mapping[RoleSlot, Track],
    ego: Optional[Track],
    scene_id: Optional[str] = None,
) -> SceneTensor:
    """
    Monta o tensor da cena no referencial do ego (translação pura).

    A origem é a posição do ego no quadro 0; cada agente recebe seu deslocamento
    (x, y) em relação a essa origem; v não é transformado.

    Args:
        neighbors: Trilhas absolutas por papel (sem o ego), já recortadas em 50 quadros
        ego: Trilha absoluta do ego
        scene_id: Identificador; padrão '<ego_id>_<frame0>'

    Raises:
        MissingEgoError: ego ausente
        LengthMismatchError: alguma trilha com número de quadros != 50
    """
    if ego is None:
        raise MissingEgoError("Trilha do ego ausente")

    tracks: Dict[RoleSlot, Track] = {RoleSlot.EGO: ego}
    for role, track in neighbors.items():
        role = RoleSlot(role)
        if role == RoleSlot.EGO:
            continue
        if track is not None:
            tracks[role] = track

    for role, track in tracks.items():
        if len(track) != N_STEPS:
            raise LengthMismatchError(
                f"Trilha {track.vehicle_id} ({role.label}) com {len(track)} quadros; esperado {N_STEPS}"
            )

    origin = (float(ego.x[0]), float(ego.y[0]))
    values = np.zeros((N_STEPS, N_SLOTS, N_FEATURES), dtype=float)
    present = np.zeros(N_SLOTS, dtype=bool)
    for role, track in tracks.items():
        values[:, role, 0] = track.x - origin[0]
        values[:, role, 1] = track.y - origin[1]
        values[:, role, 2] = track.v
        present[role] = True

    frame0 = int(ego.frame[0])
    return SceneTensor(
        scene_id=scene_id or f"{ego.vehicle_id}_{frame0}",
        values=values,
        present=present,
        source_frame0=frame0,
        ego_vehicle_id=str(ego.vehicle_id),
        origin=origin,
    )


def from_ego_frame(scene: SceneTensor, origin: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Inverso de to_ego_frame: (50, 7, 3) em coordenadas absolutas (ausentes zerados)."""
    ox, oy = scene.origin if origin is None else origin
    out = np.array(scene.values, dtype=float)
    out[:, :, 0] += ox
    out[:, :, 1] += oy
    out[:, ~scene.present, :] = 0.0
    return out


def _present_entries(scenes: Iterable[SceneTensor]) -> np.ndarray:
    chunks = [s.values[:, s.present, :].reshape(-1, N_FEATURES) for s in scenes]
    if not chunks:
        return np.empty((0, N_FEATURES))
    return np.concatenate(chunks, axis=0)


def fit_norm(scenes: Iterable[SceneTensor]) -> NormStats:
    """
    Média e desvio padrão populacional por feature, apenas sobre entradas presentes.
    Feature constante recebe desvio 1.0.

    Raises:
        EmptyInputError: nenhuma entrada presente
    """
    entries = _present_entries(scenes)
    if entries.shape[0] == 0:
        raise EmptyInputError("fit_norm sem entradas presentes")

    mean = entries.mean(axis=0)
    std = np.sqrt(((entries - mean) ** 2).mean(axis=0))
    std = np.where(std > 1e-12, std, 1.0)
    logger.debug(f"NormStats: mean={mean.tolist()} std={std.tolist()} ({entries.shape[0]} entradas)")
    return NormStats(mean=mean, std=std)


def normalize(values: Union[SceneTensor, np.ndarray], stats: NormStats,
              present: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Padroniza (..., 7, 3) com as estatísticas; papéis ausentes permanecem 0.
    Aceita uma SceneTensor (usa sua máscara) ou um array com máscara opcional.
    """
    if isinstance(values, SceneTensor):
        present = values.present
        values = values.values
    out = (np.asarray(values, dtype=float) - stats.mean) / stats.std
    if present is not None:
        out = _apply_mask(out, present)
    return out


def denormalize(values: np.ndarray, stats: NormStats, present: Optional[np.ndarray] = None) -> np.ndarray:
    """Inverso de normalize; papéis ausentes permanecem 0 quando a máscara é informada."""
    out = np.asarray(values, dtype=float) * stats.std + stats.mean
    if present is not None:
        out = _apply_mask(out, present)
    return out


def _apply_mask(values: np.ndarray, present: np.ndarray) -> np.ndarray:
    present = np.asarray(present, dtype=bool)
    # máscara (7,) ou (N, 7) com values (..., 7, 3)
    if present.ndim == 1:
        return np.where(present[:, None], values, 0.0)
    return np.where(present[:, None, :, None], values, 0.0)


def split(scenes: Sequence[SceneTensor], spec: SplitSpec) -> Tuple[List[SceneTensor], List[SceneTensor], List[SceneTensor]]:
    """
    Divide as cenas em treino/validação/teste agrupando por ego_vehicle_id.

    Os grupos são embaralhados com a semente e atribuídos em ordem até cada
    partição atingir round(fração * N) cenas. A ordem original é preservada
    dentro de cada partição.

    Raises:
        InvalidSplitError: frações inválidas
    """
    try:
        _check_fractions(spec.train_fraction, spec.val_fraction, spec.test_fraction)
    except ValueError as e:
        raise InvalidSplitError(str(e)) from e

    groups: Dict[str, int] = {}
    for scene in scenes:
        groups[scene.ego_vehicle_id] = groups.get(scene.ego_vehicle_id, 0) + 1

    ego_ids = sorted(groups)
    rng = np.random.default_rng(spec.seed)
    order = [ego_ids[i] for i in rng.permutation(len(ego_ids))]

    n_total = len(scenes)
    n_train = int(round(spec.train_fraction * n_total))
    n_val = int(round(spec.val_fraction * n_total))

    assignment: Dict[str, int] = {}
    count = 0
    for ego_id in order:
        if count < n_train:
            assignment[ego_id] = 0
        elif count < n_train + n_val:
            assignment[ego_id] = 1
        else:
            assignment[ego_id] = 2
        count += groups[ego_id]

    parts: Tuple[List[SceneTensor], List[SceneTensor], List[SceneTensor]] = ([], [], [])
    for scene in scenes:
        parts[assignment[scene.ego_vehicle_id]].append(scene)

    logger.info(
        f"Divisão por ego: treino={len(parts[0])} validação={len(parts[1])} teste={len(parts[2])} "
        f"({len(ego_ids)} egos)"
    )
    return parts


def stack_scenes(scenes: Sequence[SceneTensor]) -> Tuple[np.ndarray, np.ndarray]:
    """Empilha as cenas em values (N, 50, 7, 3) e máscaras (N, 7)."""
    if not scenes:
        return np.zeros((0, N_STEPS, N_SLOTS, N_FEATURES)), np.zeros((0, N_SLOTS), dtype=bool)
    values = np.stack([s.values for s in scenes]).astype(float)
    present = np.stack([s.present for s in scenes]).astype(bool)
    return values, present


def save_scenes(path: Union[str, Path], scenes: Iterable[SceneTensor]) -> int:
    """Grava as cenas em JSON-lines; retorna a contagem."""
    count = write_jsonl(path, (s.to_record() for s in scenes))
    logger.info(f"{count} cenas gravadas em {path}")
    return count


def load_scenes(path: Union[str, Path]) -> List[SceneTensor]:
    """Lê cenas de JSON-lines, validando shape e máscara de cada registro."""
    scenes = [SceneTensor.from_record(record) for record in iter_jsonl(path)]
    logger.info(f"{len(scenes)} cenas lidas de {path}")
    return scenes
