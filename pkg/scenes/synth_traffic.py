"""
File: synth_traffic.py
Author: Equipe Data Analytics
Date: 2026-09-05
Version: 1.0
Description: Gerador de cenas sintéticas rotuladas. O comportamento normal segue o
             Intelligent Driver Model (IDM) em três faixas com ruído lateral; uma
             fração das cenas recebe uma anomalia injetada (instabilidade de
             seguimento, frenagem brusca, deriva lateral ou troca de faixa abrupta).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from scenes.scene_model import DT, N_STEPS, RoleSlot, SceneTensor, Track, to_ego_frame
from utils.json_utils import iter_jsonl, write_jsonl
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

MAX_DECEL = -9.0
HARSH_BRAKE = -4.0
DRIFT_MIN = 1.5
DRIFT_TOLERANCE = 0.2
LANE_CHANGE_FRAMES = 15
INSTABILITY_HYSTERESIS = 0.5
INSTABILITY_MIN_SWITCHES = 4


class AnomalyKind(str, Enum):
    NONE = 'None'
    FOLLOW_INSTABILITY = 'FollowInstability'
    SUDDEN_BRAKE = 'SuddenBrake'
    LATERAL_DRIFT = 'LateralDrift'
    ABRUPT_LANE_CHANGE = 'AbruptLaneChange'


ANOMALY_KINDS = (
    AnomalyKind.FOLLOW_INSTABILITY,
    AnomalyKind.SUDDEN_BRAKE,
    AnomalyKind.LATERAL_DRIFT,
    AnomalyKind.ABRUPT_LANE_CHANGE,
)


class IdmParams(BaseModel):
    """Parâmetros do IDM (v0 m/s, T s, a m/s², b m/s², s0 m)."""
    v0: float = Field(default=30.0, gt=0)
    T: float = Field(default=1.5, gt=0)
    a: float = Field(default=1.0, gt=0)
    b: float = Field(default=1.5, gt=0)
    s0: float = Field(default=2.0, gt=0)
    delta: float = Field(default=4.0, gt=0)


class SynthConfig(BaseModel):
    n_scenes: int = Field(default=2000, ge=0)
    anomaly_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    seed: int = 7
    idm: IdmParams = IdmParams()
    noise_std: float = Field(default=0.02, ge=0.0)
    absent_prob: float = Field(default=0.15, ge=0.0, lt=1.0)
    cruise_min: float = Field(default=10.0, gt=0)
    cruise_max: float = Field(default=16.0, gt=0)
    lane_width: float = Field(default=3.7, gt=0)
    vehicle_length: float = Field(default=4.5, gt=0)

    @model_validator(mode='after')
    def validate_cruise(self) -> 'SynthConfig':
        if self.cruise_max < self.cruise_min:
            raise ValueError('cruise_max deve ser >= cruise_min')
        if self.cruise_max >= self.idm.v0:
            raise ValueError('cruise_max deve ser menor que idm.v0')
        return self


@dataclass(frozen=True)
class GroundTruthLabel:
    scene_id: str
    is_anomaly: bool
    kind: AnomalyKind
    onset_frame: int
    agent_slot: Optional[str] = None
    magnitude: Optional[float] = None

    def __post_init__(self):
        if self.is_anomaly == (self.kind == AnomalyKind.NONE):
            raise ValueError(f"Rótulo inconsistente para {self.scene_id}: {self.kind} / {self.is_anomaly}")

    def to_record(self) -> Dict:
        record = asdict(self)
        record['kind'] = self.kind.value
        return record

    @classmethod
    def from_record(cls, record: Dict) -> 'GroundTruthLabel':
        return cls(
            scene_id=str(record['scene_id']),
            is_anomaly=bool(record['is_anomaly']),
            kind=AnomalyKind(record['kind']),
            onset_frame=int(record['onset_frame']),
            agent_slot=record.get('agent_slot'),
            magnitude=record.get('magnitude'),
        )


@dataclass
class _Vehicle:
    role: RoleSlot
    lane: int
    y0: float
    v_init: float
    leader: Optional[RoleSlot] = None
    v0: float = 30.0
    T: float = 1.5
    x_offset: float = 0.0


def equilibrium_gap(v: float, idm: IdmParams, T: Optional[float] = None) -> float:
    """Gap (para-choque a para-choque) de equilíbrio do IDM à velocidade v."""
    T = idm.T if T is None else T
    ratio = 1.0 - (v / idm.v0) ** idm.delta
    return (idm.s0 + v * T) / math.sqrt(max(ratio, 1e-6))


def idm_acceleration(v: float, v_lead: Optional[float], gap: Optional[float],
                     idm: IdmParams, v0: float, T: float) -> float:
    """Aceleração IDM; sem líder (v_lead None) usa o termo de via livre."""
    free = 1.0 - (max(v, 0.0) / v0) ** idm.delta
    if v_lead is None:
        return idm.a * free
    s_star = idm.s0 + v * T + v * (v - v_lead) / (2.0 * math.sqrt(idm.a * idm.b))
    s_star = max(s_star, 0.0)
    return idm.a * (free - (s_star / max(gap, 0.1)) ** 2)


def _half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


class _SceneBuilder:
    """Monta e integra uma cena a partir do seu próprio gerador aleatório."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator, kind: AnomalyKind):
        self.cfg = cfg
        self.rng = rng
        self.kind = kind
        self.idm = cfg.idm

    def _cruise_and_excess(self) -> Tuple[float, float]:
        cruise = float(self.rng.uniform(self.cfg.cruise_min, self.cfg.cruise_max))
        excess = min(float(self.rng.exponential(0.35)), 1.5)
        return cruise, excess

    def _present_roles(self, required: Set[RoleSlot]) -> Set[RoleSlot]:
        roles = {RoleSlot.EGO}
        for role in RoleSlot:
            if role == RoleSlot.EGO:
                continue
            # um sorteio por papel, sempre, para manter o fluxo aleatório estável
            draw = self.rng.random()
            if role in required or draw >= self.cfg.absent_prob:
                roles.add(role)
        return roles

    def _layout(self, roles: Set[RoleSlot], rear_T: float) -> Dict[RoleSlot, _Vehicle]:
        cfg, idm = self.cfg, self.idm
        length = cfg.vehicle_length
        vehicles: Dict[RoleSlot, _Vehicle] = {}
        ego_y = float(self.rng.uniform(50.0, 400.0))

        # faixa do ego: Front -> Ego -> Rear
        cruise, excess = self._cruise_and_excess()
        v_lane = cruise + excess
        if RoleSlot.FRONT in roles:
            vehicles[RoleSlot.FRONT] = _Vehicle(
                RoleSlot.FRONT, 0, ego_y + equilibrium_gap(v_lane, idm) + length, v_lane, v0=cruise
            )
            vehicles[RoleSlot.EGO] = _Vehicle(RoleSlot.EGO, 0, ego_y, v_lane, leader=RoleSlot.FRONT, v0=idm.v0)
        else:
            vehicles[RoleSlot.EGO] = _Vehicle(RoleSlot.EGO, 0, ego_y, v_lane, v0=cruise)
        if RoleSlot.REAR in roles:
            vehicles[RoleSlot.REAR] = _Vehicle(
                RoleSlot.REAR, 0, ego_y - equilibrium_gap(v_lane, idm, rear_T) - length, v_lane,
                leader=RoleSlot.EGO, v0=idm.v0, T=rear_T
            )

        # faixas adjacentes: líder à frente do ego, seguidor atrás
        for lane, front_role, rear_role in ((-1, RoleSlot.FRONT_LEFT, RoleSlot.REAR_LEFT),
                                            (1, RoleSlot.FRONT_RIGHT, RoleSlot.REAR_RIGHT)):
            cruise, excess = self._cruise_and_excess()
            v_lane = cruise + excess
            spacing = equilibrium_gap(v_lane, idm) + length
            lead_offset = float(self.rng.uniform(2.0, max(2.5, min(25.0, spacing - 2.0))))
            if front_role in roles:
                vehicles[front_role] = _Vehicle(front_role, lane, ego_y + lead_offset, v_lane, v0=cruise)
                if rear_role in roles:
                    vehicles[rear_role] = _Vehicle(
                        rear_role, lane, ego_y + lead_offset - spacing, v_lane, leader=front_role, v0=idm.v0
                    )
            elif rear_role in roles:
                vehicles[rear_role] = _Vehicle(
                    rear_role, lane, ego_y - float(self.rng.uniform(5.0, 25.0)), v_lane, v0=cruise
                )

        for vehicle in vehicles.values():
            vehicle.x_offset = float(self.rng.uniform(-0.3, 0.3))
        return vehicles

    def build(self, scene_id: str) -> Tuple[SceneTensor, GroundTruthLabel]:
        rng, kind = self.rng, self.kind
        required: Set[RoleSlot] = set()
        rear_T = self.idm.T
        if kind == AnomalyKind.SUDDEN_BRAKE:
            required = {RoleSlot.REAR}
            rear_T = 1.2
        elif kind == AnomalyKind.FOLLOW_INSTABILITY:
            required = {RoleSlot.FRONT}

        roles = self._present_roles(required)
        vehicles = self._layout(roles, rear_T)
        order = sorted(vehicles, key=lambda r: (vehicles[r].leader is not None, r))

        onset = -1
        agent: Optional[RoleSlot] = None
        magnitude: Optional[float] = None
        brake = None
        oscillation = None
        lateral_shift: Dict[RoleSlot, np.ndarray] = {}

        if kind == AnomalyKind.SUDDEN_BRAKE:
            onset = int(rng.integers(26, 31))
            magnitude = float(rng.uniform(6.5, 8.0))
            agent = RoleSlot.EGO
            brake = (onset, onset + 15, magnitude)
        elif kind == AnomalyKind.FOLLOW_INSTABILITY:
            onset = int(rng.integers(3, 9))
            magnitude = float(rng.uniform(1.0, 1.4))
            period = float(rng.uniform(1.5, 1.8))
            agent = RoleSlot.EGO
            oscillation = (onset, magnitude, 2.0 * math.pi / period)
        elif kind in (AnomalyKind.LATERAL_DRIFT, AnomalyKind.ABRUPT_LANE_CHANGE):
            candidates = sorted(vehicles)
            agent = candidates[int(rng.integers(len(candidates)))]
            direction = 1.0 if rng.random() < 0.5 else -1.0
            t = np.arange(N_STEPS, dtype=float)
            if kind == AnomalyKind.LATERAL_DRIFT:
                onset = int(rng.integers(25, 29))
                magnitude = float(rng.uniform(1.9, 2.05))
                shift = magnitude * _smoothstep((t - onset) / (N_STEPS - 1 - onset))
            else:
                onset = int(rng.integers(27, 36))
                magnitude = self.cfg.lane_width + float(rng.uniform(0.1, 0.3))
                u = np.clip((t - onset) / 12.0, 0.0, 1.0)
                shift = magnitude * 0.5 * (1.0 - np.cos(math.pi * u))
            lateral_shift[agent] = direction * shift

        y = {r: np.zeros(N_STEPS) for r in vehicles}
        v = {r: np.zeros(N_STEPS) for r in vehicles}
        for r, vehicle in vehicles.items():
            y[r][0] = vehicle.y0
            v[r][0] = vehicle.v_init

        ego_anchor = None
        for t in range(N_STEPS - 1):
            acc: Dict[RoleSlot, float] = {}
            for r in order:
                vehicle = vehicles[r]
                if vehicle.leader is None:
                    a = idm_acceleration(v[r][t], None, None, self.idm, vehicle.v0, vehicle.T)
                else:
                    gap = y[vehicle.leader][t] - y[r][t] - self.cfg.vehicle_length
                    a = idm_acceleration(v[r][t], v[vehicle.leader][t], gap, self.idm, vehicle.v0, vehicle.T)

                if brake is not None:
                    start, stop, decel = brake
                    if r == RoleSlot.EGO and start <= t < stop:
                        a = -decel
                    elif r == RoleSlot.REAR and start <= t < stop:
                        a = 0.0
                acc[r] = max(a, MAX_DECEL)

            for r in order:
                v[r][t + 1] = max(v[r][t] + acc[r] * DT, 0.0)

            if oscillation is not None and t + 1 >= oscillation[0]:
                start, amp, omega = oscillation
                if ego_anchor is None:
                    ego_anchor = (v[RoleSlot.EGO][start], v[RoleSlot.FRONT][start])
                phase = omega * (t + 1 - start) * DT
                v_target = ego_anchor[0] + (v[RoleSlot.FRONT][t + 1] - ego_anchor[1]) + amp * math.sin(phase)
                v[RoleSlot.EGO][t + 1] = max(v_target, 0.0)

            for r in order:
                y[r][t + 1] = y[r][t] + 0.5 * (v[r][t] + v[r][t + 1]) * DT

        tracks: Dict[RoleSlot, Track] = {}
        frames = np.arange(N_STEPS, dtype=np.int64)
        lane_center = 1.5 * self.cfg.lane_width
        for r, vehicle in vehicles.items():
            noise = rng.normal(0.0, self.cfg.noise_std, N_STEPS) if self.cfg.noise_std > 0 else np.zeros(N_STEPS)
            x = lane_center + vehicle.lane * self.cfg.lane_width + vehicle.x_offset + noise
            if r in lateral_shift:
                x = x + lateral_shift[r]
            tracks[r] = Track(vehicle_id=f"{scene_id}:{r.label}", frame=frames, x=x, y=y[r], v=v[r])

        ego = tracks.pop(RoleSlot.EGO)
        scene = to_ego_frame(tracks, ego, scene_id=scene_id)
        label = GroundTruthLabel(
            scene_id=scene_id,
            is_anomaly=kind != AnomalyKind.NONE,
            kind=kind,
            onset_frame=onset,
            agent_slot=agent.label if agent is not None else None,
            magnitude=magnitude,
        )
        return scene, label


def plan_kinds(cfg: SynthConfig) -> List[AnomalyKind]:
    """Tipo de cada cena: round(n * fração) anomalias, divididas igualmente entre os quatro tipos."""
    n_anomalies = _half_up(cfg.n_scenes * cfg.anomaly_fraction)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    anomalous = rng.permutation(cfg.n_scenes)[:n_anomalies]
    kinds_pool = [ANOMALY_KINDS[i % len(ANOMALY_KINDS)] for i in range(n_anomalies)]
    kinds_pool = [kinds_pool[i] for i in rng.permutation(n_anomalies)]

    plan = [AnomalyKind.NONE] * cfg.n_scenes
    for index, kind in zip(sorted(anomalous.tolist()), kinds_pool):
        plan[index] = kind
    return plan


def generate_scene(cfg: SynthConfig, index: int, kind: AnomalyKind) -> Tuple[SceneTensor, GroundTruthLabel]:
    """Gera a cena `index` com o fluxo aleatório derivado da semente mestre."""
    seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(index,))
    builder = _SceneBuilder(cfg, np.random.default_rng(seq), kind)
    return builder.build(f"synth_{index:05d}")


def generate(cfg: SynthConfig, threads: int = 1) -> Tuple[List[SceneTensor], List[GroundTruthLabel]]:
    """
    Gera as cenas sintéticas e seus rótulos.

    Cada cena usa um fluxo aleatório próprio derivado de (seed, índice), de modo
    que a saída não depende do número de threads.

    Returns:
        (cenas, rótulos) na ordem dos índices
    """
    plan = plan_kinds(cfg)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(lambda i: generate_scene(cfg, i, plan[i]), range(cfg.n_scenes)))

    scenes = [scene for scene, _ in results]
    labels = [label for _, label in results]
    n_anomalies = sum(label.is_anomaly for label in labels)
    logger.info(f"Cenas sintéticas geradas: {len(scenes)} ({n_anomalies} anômalas, seed={cfg.seed})")
    return scenes, labels


def accelerations(scene: SceneTensor) -> np.ndarray:
    """Acelerações longitudinais (49, 7) por diferença de v; ausentes = 0."""
    acc = np.diff(scene.values[:, :, 2], axis=0) / DT
    acc[:, ~scene.present] = 0.0
    return acc


def _has_drift(x: np.ndarray) -> bool:
    excursion = np.abs(x - x[0])
    peak = int(np.argmax(excursion))
    if excursion[peak] < DRIFT_MIN:
        return False
    running = np.maximum.accumulate(excursion[:peak + 1])
    return bool(np.all(running - excursion[:peak + 1] <= DRIFT_TOLERANCE))


def _sign_switches(series: np.ndarray, hysteresis: float) -> int:
    switches, last = 0, 0
    for value in series:
        sign = 1 if value > hysteresis else (-1 if value < -hysteresis else 0)
        if sign == 0:
            continue
        if last != 0 and sign != last:
            switches += 1
        last = sign
    return switches


def signatures(scene: SceneTensor) -> Set[AnomalyKind]:
    """Assinaturas de anomalia observadas em uma cena."""
    found: Set[AnomalyKind] = set()
    present = np.flatnonzero(scene.present)

    if np.any(accelerations(scene)[:, present] <= HARSH_BRAKE):
        found.add(AnomalyKind.SUDDEN_BRAKE)

    for slot in present:
        x = scene.values[:, slot, 0]
        if _has_drift(x):
            found.add(AnomalyKind.LATERAL_DRIFT)
        if np.max(np.abs(x[LANE_CHANGE_FRAMES:] - x[:-LANE_CHANGE_FRAMES])) >= 3.7:
            found.add(AnomalyKind.ABRUPT_LANE_CHANGE)

    if scene.present[RoleSlot.FRONT]:
        rel = scene.values[:, RoleSlot.FRONT, 2] - scene.values[:, RoleSlot.EGO, 2]
        if _sign_switches(rel, INSTABILITY_HYSTERESIS) >= INSTABILITY_MIN_SWITCHES:
            found.add(AnomalyKind.FOLLOW_INSTABILITY)
    return found


def save_labels(path: Union[str, Path], labels: List[GroundTruthLabel]) -> int:
    count = write_jsonl(path, (label.to_record() for label in labels))
    logger.info(f"{count} rótulos gravados em {path}")
    return count


def load_labels(path: Union[str, Path]) -> List[GroundTruthLabel]:
    return [GroundTruthLabel.from_record(record) for record in iter_jsonl(path)]
