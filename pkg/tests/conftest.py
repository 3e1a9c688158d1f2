"""
File: conftest.py
Author: Equipe Data Analytics
Date: 2026-09-27
Version: 1.0
Description: Fixtures compartilhadas dos testes do scenewatch: raiz do projeto no
             sys.path, marcador `slow`, corpus sintético pequeno e CSV no formato
             NGSIM gravado em tmp_path.
"""

import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import pytest

ROOT_PATH = Path(__file__).resolve().parents[1]
if str(ROOT_PATH) not in sys.path:
    sys.path.insert(0, str(ROOT_PATH))

from scenes.scene_model import N_SLOTS, N_STEPS, RoleSlot, SceneTensor, Track  # noqa: E402
from scenes.synth_traffic import SynthConfig, generate  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: testes pesados (treino do Transformer, aceitação ponta a ponta)')


def make_track(vehicle_id: str, x: float, y0: float, v: float, frame0: int = 0,
               n: int = N_STEPS, lane: Optional[int] = None) -> Track:
    """Trilha retilínea com velocidade constante (y cresce v * 0.1 por quadro)."""
    frames = np.arange(frame0, frame0 + n, dtype=np.int64)
    return Track(
        vehicle_id=vehicle_id,
        frame=frames,
        x=np.full(n, float(x)),
        y=y0 + v * 0.1 * np.arange(n),
        v=np.full(n, float(v)),
        lane_id=None if lane is None else np.full(n, lane, dtype=np.int64),
    )


def make_scene(scene_id: str = 's0', ego_id: str = 'e0', present: Optional[List[int]] = None,
               seed: int = 0, speed: float = 12.0) -> SceneTensor:
    """Cena ego-cêntrica simples: agentes presentes em faixas paralelas, velocidade constante com ruído."""
    rng = np.random.default_rng(seed)
    present_mask = np.zeros(N_SLOTS, dtype=bool)
    for slot in (present if present is not None else range(N_SLOTS)):
        present_mask[slot] = True
    present_mask[RoleSlot.EGO] = True

    offsets = {
        RoleSlot.EGO: (0.0, 0.0), RoleSlot.FRONT: (0.0, 25.0), RoleSlot.REAR: (0.0, -25.0),
        RoleSlot.FRONT_LEFT: (-3.7, 20.0), RoleSlot.FRONT_RIGHT: (3.7, 18.0),
        RoleSlot.REAR_LEFT: (-3.7, -22.0), RoleSlot.REAR_RIGHT: (3.7, -20.0),
    }
    values = np.zeros((N_STEPS, N_SLOTS, 3))
    t = np.arange(N_STEPS) * 0.1
    for slot in RoleSlot:
        if not present_mask[slot]:
            continue
        x0, y0 = offsets[slot]
        v = speed + rng.normal(0.0, 0.5)
        values[:, slot, 0] = x0 + rng.normal(0.0, 0.02, N_STEPS)
        values[:, slot, 1] = y0 + v * t
        values[:, slot, 2] = v
    return SceneTensor(scene_id=scene_id, values=values, present=present_mask,
                       source_frame0=0, ego_vehicle_id=ego_id)


@pytest.fixture
def scene_factory() -> Callable[..., SceneTensor]:
    return make_scene


@pytest.fixture
def track_factory() -> Callable[..., Track]:
    return make_track


@pytest.fixture(scope='session')
def synth_corpus():
    """120 cenas sintéticas, 24 anômalas (seis de cada tipo)."""
    cfg = SynthConfig(n_scenes=120, anomaly_fraction=0.2, seed=7)
    return generate(cfg)


def ngsim_frame(vehicles: Dict[str, Dict], n_frames: int = 100) -> pd.DataFrame:
    """
    DataFrame no layout NGSIM (pés) para veículos em velocidade constante.
    `vehicles`: id -> {'lane', 'x', 'y0', 'v'} em metros e m/s.
    """
    rows = []
    ft = 1 / 0.3048
    for vid, spec in vehicles.items():
        for k in range(n_frames):
            rows.append({
                'Vehicle_ID': vid,
                'Frame_ID': k + 1,
                'Total_Frames': n_frames,
                'Local_X': spec['x'] * ft,
                'Local_Y': (spec['y0'] + spec['v'] * 0.1 * k) * ft,
                'v_Vel': spec['v'] * ft,
                'v_Acc': 0.0,
                'Lane_ID': spec['lane'],
            })
    return pd.DataFrame(rows)


@pytest.fixture
def ngsim_csv(tmp_path) -> Callable[..., Path]:
    def _write(vehicles: Dict[str, Dict], n_frames: int = 100, name: str = 'ngsim.csv',
               shuffle_seed: Optional[int] = None) -> Path:
        df = ngsim_frame(vehicles, n_frames)
        if shuffle_seed is not None:
            df = df.sample(frac=1.0, random_state=shuffle_seed)
        path = tmp_path / name
        df.to_csv(path, index=False)
        return path
    return _write
