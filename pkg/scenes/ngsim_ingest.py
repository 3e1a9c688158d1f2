"""
File: ngsim_ingest.py
Author: Equipe Data Analytics
Date: 2026-09-04
Version: 1.0
Description: Leitura de CSV de trajetórias no formato NGSIM, montagem de cenas
             ego-cêntricas de 5 s com até seis vizinhos por papel e filtros de
             qualidade (salto espacial, veículo parado, janela incompleta).
"""

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from scenes.scene_model import N_STEPS, RoleSlot, SceneTensor, Track, to_ego_frame
from utils.json_utils import load_json
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

ROOT_PATH = Path(__file__).resolve().parents[1]
DEFAULT_MAPPING_PATH = ROOT_PATH / 'configs' / 'mappings' / 'ngsim_column_mapping.json'

FEET_TO_METERS = 0.3048
REQUIRED_COLUMNS = ('vehicle_id', 'frame_id', 'local_x', 'local_y', 'v_vel')
OPTIONAL_COLUMNS = ('v_acc', 'lane_id', 'preceding_id', 'following_id')
LENGTH_COLUMNS = ('local_x', 'local_y', 'v_vel', 'v_acc')

TrackTable = Dict[str, Track]


class IngestError(Exception):
    """Erro base da ingestão NGSIM."""


class MalformedRowError(IngestError):
    """Linha do CSV com campos ausentes ou não numéricos."""

    def __init__(self, line: int, detail: str = ''):
        super().__init__(f"Linha {line} malformada{': ' + detail if detail else ''}")
        self.line = line


class NonMonotoneFramesError(IngestError):
    """Quadros repetidos para um mesmo veículo."""

    def __init__(self, vehicle: str, frame: int):
        super().__init__(f"Veículo {vehicle}: quadro {frame} repetido")
        self.vehicle = vehicle
        self.frame = frame


class IngestConfig(BaseModel):
    """Parâmetros de ingestão e dos filtros de qualidade."""
    unit: Literal['feet', 'meters'] = 'feet'
    window: int = N_STEPS
    stride: int = Field(default=50, ge=1)
    stationary_eps: float = Field(default=0.5, ge=0.0)
    jump_threshold: float = Field(default=10.0, gt=0.0)
    mapping_path: Optional[str] = None

    @field_validator('window')
    @classmethod
    def validate_window(cls, v: int) -> int:
        if v != N_STEPS:
            raise ValueError(f"A janela deve ter {N_STEPS} quadros")
        return v


@dataclass
class FilterReport:
    scenes_kept: int = 0
    dropped_jump: int = 0
    dropped_stationary: int = 0
    dropped_incomplete: int = 0

    @property
    def candidates(self) -> int:
        return self.scenes_kept + self.dropped_jump + self.dropped_stationary + self.dropped_incomplete

    def merge(self, other: 'FilterReport') -> 'FilterReport':
        return FilterReport(
            scenes_kept=self.scenes_kept + other.scenes_kept,
            dropped_jump=self.dropped_jump + other.dropped_jump,
            dropped_stationary=self.dropped_stationary + other.dropped_stationary,
            dropped_incomplete=self.dropped_incomplete + other.dropped_incomplete,
        )

    def to_dict(self) -> Dict[str, int]:
        payload = asdict(self)
        payload['candidates'] = self.candidates
        return payload


def vehicle_sort_key(vehicle_id: str) -> Tuple[int, Union[int, str]]:
    """Ordem numérica para ids inteiros, lexicográfica para os demais."""
    text = str(vehicle_id)
    return (0, int(text)) if text.lstrip('-').isdigit() else (1, text)


def load_column_mapping(mapping_path: Optional[Union[str, Path]] = None) -> Tuple[Dict[str, str], List[str]]:
    """Carrega o mapeamento de colunas NGSIM -> nomes canônicos."""
    data = load_json(mapping_path or DEFAULT_MAPPING_PATH)
    return dict(data.get('column_mapping', {})), list(data.get('drop_columns', []))


def _canonicalize(df: pd.DataFrame, mapping: Dict[str, str], drop: List[str]) -> pd.DataFrame:
    df = df.drop(columns=[c for c in drop if c in df.columns])
    lowered = {k.lower(): v for k, v in mapping.items()}
    renames = {}
    for col in df.columns:
        key = col.strip()
        if key in mapping:
            renames[col] = mapping[key]
        elif key.lower() in lowered:
            renames[col] = lowered[key.lower()]
        else:
            renames[col] = key.lower()
    return df.rename(columns=renames)


def parse_csv(path: Union[str, Path], unit: str = 'feet',
              mapping_path: Optional[Union[str, Path]] = None) -> TrackTable:
    """
    Lê um CSV NGSIM e agrupa as linhas por veículo, ordenadas por quadro.

    Args:
        path: Caminho do CSV (com cabeçalho)
        unit: 'feet' converte posição, velocidade e aceleração com 0.3048; 'meters' mantém
        mapping_path: Mapeamento de colunas (padrão em configs/mappings)

    Returns:
        Dicionário vehicle_id -> Track, em ordem de vehicle_id

    Raises:
        FileNotFoundError: arquivo inexistente
        MalformedRowError: linha com campos ausentes/não numéricos (número da linha no arquivo)
        NonMonotoneFramesError: quadro repetido para um veículo
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV não encontrado: {path}")
    if unit not in ('feet', 'meters'):
        raise ValueError(f"Unidade inválida: {unit}")

    mapping, drop = load_column_mapping(mapping_path)
    try:
        raw = pd.read_csv(path, dtype=str, skipinitialspace=True, on_bad_lines='error')
    except pd.errors.ParserError as e:
        match = re.search(r'line (\d+)', str(e))
        raise MalformedRowError(int(match.group(1)) if match else -1, str(e)) from e

    df = _canonicalize(raw, mapping, drop)
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedRowError(1, f"colunas obrigatórias ausentes no cabeçalho: {missing}")

    df['line'] = np.arange(len(df)) + 2
    df['vehicle_id'] = df['vehicle_id'].astype(str).str.strip()
    numeric_cols = [c for c in REQUIRED_COLUMNS[1:] + OPTIONAL_COLUMNS if c in df.columns]
    for col in numeric_cols:
        df[col] = pd.to_numeric(df[col], errors='coerce')

    required_numeric = list(REQUIRED_COLUMNS[1:])
    bad = df[df[required_numeric].isna().any(axis=1) | (df['vehicle_id'] == '') | (df['vehicle_id'] == 'nan')]
    if not bad.empty:
        row = bad.iloc[0]
        raise MalformedRowError(int(row['line']), 'campo obrigatório vazio ou não numérico')

    if unit == 'feet':
        for col in LENGTH_COLUMNS:
            if col in df.columns:
                df[col] = df[col] * FEET_TO_METERS

    df['frame_id'] = df['frame_id'].astype(np.int64)
    df['_vkey'] = df['vehicle_id'].map(vehicle_sort_key)
    df = df.sort_values(['_vkey', 'frame_id'], kind='mergesort')

    dup = df.duplicated(subset=['vehicle_id', 'frame_id'])
    if dup.any():
        row = df[dup].iloc[0]
        raise NonMonotoneFramesError(row['vehicle_id'], int(row['frame_id']))

    has_acc = 'v_acc' in df.columns and not df['v_acc'].isna().any()
    has_lane = 'lane_id' in df.columns and not df['lane_id'].isna().any()

    tracks: TrackTable = {}
    for vehicle_id, group in df.groupby('vehicle_id', sort=False):
        tracks[str(vehicle_id)] = Track(
            vehicle_id=str(vehicle_id),
            frame=group['frame_id'].to_numpy(dtype=np.int64),
            x=group['local_x'].to_numpy(dtype=float),
            y=group['local_y'].to_numpy(dtype=float),
            v=np.abs(group['v_vel'].to_numpy(dtype=float)),
            a=group['v_acc'].to_numpy(dtype=float) if has_acc else None,
            lane_id=group['lane_id'].to_numpy(dtype=np.int64) if has_lane else None,
        )

    logger.info(f"CSV {path.name}: {len(df)} linhas, {len(tracks)} veículos (unidade={unit})")
    return tracks


def _positions_fail(positions: np.ndarray, jump_threshold: float, stationary_eps: float) -> Optional[str]:
    """
    positions: (T, k, 2) dos agentes presentes. Retorna 'jump', 'stationary' ou None.
    Parado: deslocamento líquido entre o primeiro e o último quadro < stationary_eps.
    """
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=-1)
    if np.any(steps > jump_threshold):
        return 'jump'
    net = np.linalg.norm(positions[-1] - positions[0], axis=-1)
    if np.any(net < stationary_eps):
        return 'stationary'
    return None


def filter_scene(scene: SceneTensor, cfg: Optional[IngestConfig] = None) -> Optional[str]:
    """
    Reaplica os filtros de qualidade a uma cena emitida.

    Returns:
        'jump', 'stationary' ou None se a cena passa
    """
    cfg = cfg or IngestConfig()
    positions = scene.values[:, scene.present, :2]
    return _positions_fail(positions, cfg.jump_threshold, cfg.stationary_eps)


class _FrameIndex:
    """Índice quadro -> (vehicle_id, posição na trilha) para atribuição de papéis."""

    def __init__(self, tracks: TrackTable):
        self._by_frame: Dict[int, List[Tuple[str, int]]] = {}
        for vehicle_id, track in tracks.items():
            for i, frame in enumerate(track.frame.tolist()):
                self._by_frame.setdefault(frame, []).append((vehicle_id, i))

    def at(self, frame: int) -> List[Tuple[str, int]]:
        return self._by_frame.get(frame, [])


def _lane(track: Track, i: int) -> int:
    return int(track.lane_id[i]) if track.lane_id is not None else 0


def assign_roles(tracks: TrackTable, index: _FrameIndex, ego_id: str, mid_frame: int) -> Dict[RoleSlot, str]:
    """
    Atribui os papéis no quadro do meio da janela: mesma faixa -> Front/Rear,
    faixa -1 -> diagonais à esquerda, faixa +1 -> diagonais à direita. Vence o
    mais próximo longitudinalmente; empate vai para o menor vehicle_id.
    """
    ego = tracks[ego_id]
    ego_i = int(np.searchsorted(ego.frame, mid_frame))
    ego_lane = _lane(ego, ego_i)
    ego_y = float(ego.y[ego_i])

    best: Dict[RoleSlot, Tuple[float, Tuple, str]] = {}
    for vehicle_id, i in index.at(mid_frame):
        if vehicle_id == ego_id:
            continue
        track = tracks[vehicle_id]
        dy = float(track.y[i]) - ego_y
        lane_offset = _lane(track, i) - ego_lane
        ahead = dy >= 0
        if lane_offset == 0:
            role = RoleSlot.FRONT if ahead else RoleSlot.REAR
        elif lane_offset == -1:
            role = RoleSlot.FRONT_LEFT if ahead else RoleSlot.REAR_LEFT
        elif lane_offset == 1:
            role = RoleSlot.FRONT_RIGHT if ahead else RoleSlot.REAR_RIGHT
        else:
            continue
        candidate = (abs(dy), vehicle_sort_key(vehicle_id), vehicle_id)
        if role not in best or candidate[:2] < best[role][:2]:
            best[role] = candidate

    return {role: entry[2] for role, entry in best.items()}


def _scenes_for_ego(tracks: TrackTable, index: _FrameIndex, ego_id: str,
                    cfg: IngestConfig) -> Tuple[List[SceneTensor], FilterReport]:
    ego = tracks[ego_id]
    report = FilterReport()
    scenes: List[SceneTensor] = []
    if len(ego) == 0:
        return scenes, report

    first, last = int(ego.frame[0]), int(ego.frame[-1])
    for frame0 in range(first, last - cfg.window + 2, cfg.stride):
        ego_window = ego.window(frame0, cfg.window)
        if ego_window is None:
            report.dropped_incomplete += 1
            continue

        roles = assign_roles(tracks, index, ego_id, frame0 + cfg.window // 2)
        neighbors = {}
        for role, vehicle_id in roles.items():
            window = tracks[vehicle_id].window(frame0, cfg.window)
            if window is not None:
                neighbors[role] = window

        scene = to_ego_frame(neighbors, ego_window)
        reason = filter_scene(scene, cfg)
        if reason == 'jump':
            report.dropped_jump += 1
        elif reason == 'stationary':
            report.dropped_stationary += 1
        else:
            report.scenes_kept += 1
            scenes.append(scene)

    return scenes, report


def build_scenes(tracks: TrackTable, cfg: Optional[IngestConfig] = None,
                 threads: int = 1) -> Tuple[List[SceneTensor], FilterReport]:
    """
    Monta as cenas de todas as janelas alinhadas ao stride de cada ego.

    Janelas em que o ego não é observado em todos os quadros contam como
    incompletas; vizinhos observados só em parte da janela ficam mascarados.
    A ordem de saída segue (vehicle_id, frame0), independente de `threads`.

    Returns:
        (cenas, FilterReport)
    """
    cfg = cfg or IngestConfig()
    index = _FrameIndex(tracks)
    ego_ids = sorted(tracks, key=vehicle_sort_key)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(lambda vid: _scenes_for_ego(tracks, index, vid, cfg), ego_ids))

    scenes: List[SceneTensor] = []
    report = FilterReport()
    for ego_scenes, ego_report in results:
        scenes.extend(ego_scenes)
        report = report.merge(ego_report)

    logger.info(
        f"Cenas: {report.scenes_kept} mantidas de {report.candidates} candidatas "
        f"(salto={report.dropped_jump}, parado={report.dropped_stationary}, "
        f"incompleta={report.dropped_incomplete})"
    )
    return scenes, report


def ingest(csv_path: Union[str, Path], cfg: Optional[IngestConfig] = None,
           threads: int = 1) -> Tuple[List[SceneTensor], FilterReport]:
    """Leitura do CSV seguida da montagem das cenas."""
    cfg = cfg or IngestConfig()
    tracks = parse_csv(csv_path, unit=cfg.unit, mapping_path=cfg.mapping_path)
    return build_scenes(tracks, cfg, threads=threads)
