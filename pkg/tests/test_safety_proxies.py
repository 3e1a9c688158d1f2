"""
File: test_safety_proxies.py
Author: Equipe Data Analytics
Date: 2026-09-28
Version: 1.0
Description: Testes das medidas substitutas de segurança (TTC, gaps, excursão
             lateral) e da correlação de Spearman.
"""

import math

import numpy as np
import pytest

from analysis.safety_proxies import (
    PROXY_COLUMNS, LengthMismatchError, ProxyConfig, ZeroVarianceError, compute_proxies,
    compute_proxy_table, spearman, ttc,
)
from scenes.scene_model import N_SLOTS, N_STEPS, RoleSlot, SceneTensor
from scenes.synth_traffic import AnomalyKind


def _two_agent_scene(gap: float = 20.0, v_ego: float = 10.0, v_front: float = 10.0) -> SceneTensor:
    t = np.arange(N_STEPS) * 0.1
    values = np.zeros((N_STEPS, N_SLOTS, 3))
    values[:, RoleSlot.EGO, 1] = v_ego * t
    values[:, RoleSlot.EGO, 2] = v_ego
    values[:, RoleSlot.FRONT, 1] = gap + v_front * t
    values[:, RoleSlot.FRONT, 2] = v_front
    present = np.zeros(N_SLOTS, dtype=bool)
    present[[RoleSlot.EGO, RoleSlot.FRONT]] = True
    return SceneTensor('pair', values, present, 0, 'e')


class TestTtc:
    def test_examples(self):
        assert ttc(30.0, 20.0) == pytest.approx(1.5)
        assert ttc(30.0, -5.0) == math.inf
        assert ttc(0.0, 3.0) == 0.0

    def test_negative_gap(self):
        with pytest.raises(ValueError):
            ttc(-1.0, 2.0)

    def test_braking_pair_matches_frame_loop(self, synth_corpus):
        scenes, labels = synth_corpus
        scene = next(s for s, lb in zip(scenes, labels) if lb.kind == AnomalyKind.SUDDEN_BRAKE)
        cfg = ProxyConfig()
        best = math.inf
        for lead, follow in ((RoleSlot.EGO, RoleSlot.REAR),):
            for k in range(N_STEPS):
                gap = max(scene.values[k, lead, 1] - scene.values[k, follow, 1] - cfg.vehicle_length, 0.0)
                closing = scene.values[k, follow, 2] - scene.values[k, lead, 2]
                if closing > 0:
                    best = min(best, gap / closing)
        assert scene.present[RoleSlot.REAR]
        row = compute_proxies(scene, cfg)
        assert row.min_ttc <= best + 1e-12


class TestComputeProxies:
    def test_static_pair(self):
        row = compute_proxies(_two_agent_scene())
        assert row.min_ttc == math.inf
        assert row.harsh_closing_ratio == 0.0
        assert row.rel_speed_std == 0.0
        assert row.min_long_gap == pytest.approx(15.5)
        assert row.min_long_gap_center == pytest.approx(20.0)
        assert row.min_dist == pytest.approx(20.0)
        assert row.max_dv == 0.0
        assert row.max_acc == 0.0

    def test_closing_pair(self):
        row = compute_proxies(_two_agent_scene(gap=40.0, v_ego=15.0, v_front=10.0))
        # gap mínimo no último quadro: 40 − 5·4.9 − 4.5
        assert row.min_long_gap == pytest.approx(40.0 - 24.5 - 4.5)
        assert row.min_ttc == pytest.approx(11.0 / 5.0)
        assert row.harsh_closing_ratio == 1.0
        assert row.max_dv == pytest.approx(5.0)

    def test_no_same_lane_pair(self, scene_factory):
        row = compute_proxies(scene_factory('solo', present=[0, 3]))
        assert row.min_ttc == math.inf
        assert row.min_long_gap == math.inf
        assert row.rel_speed_std == 0.0

    def test_translation_invariance(self, synth_corpus):
        scenes, _ = synth_corpus
        for scene in scenes[:20]:
            shifted = np.array(scene.values)
            shifted[:, scene.present, 0] += 12.5
            shifted[:, scene.present, 1] -= 300.0
            moved = SceneTensor(scene.scene_id, shifted, scene.present, 0, scene.ego_vehicle_id)
            a, b = compute_proxies(scene), compute_proxies(moved)
            for col in PROXY_COLUMNS[1:]:
                assert getattr(a, col) == pytest.approx(getattr(b, col), abs=1e-6), col

    def test_absent_agent_changes_nothing(self, scene_factory):
        base = scene_factory('m', present=[0, 1, 2])
        values = np.array(base.values)
        values[:, RoleSlot.FRONT_LEFT, :] = [0.5, 3.0, 40.0]
        masked = SceneTensor('m', values, base.present, 0, 'e0')
        assert compute_proxies(base) == compute_proxies(masked)

    def test_smaller_gaps_never_raise_ttc(self):
        base = compute_proxies(_two_agent_scene(gap=40.0, v_ego=15.0, v_front=10.0))
        closer = compute_proxies(_two_agent_scene(gap=30.0, v_ego=15.0, v_front=10.0))
        assert closer.min_ttc <= base.min_ttc

    def test_synthetic_signatures(self, synth_corpus):
        scenes, labels = synth_corpus
        rows = {s.scene_id: compute_proxies(s) for s in scenes}
        normal_ttc = np.median([rows[lb.scene_id].min_ttc for lb in labels if not lb.is_anomaly])
        for lb in labels:
            row = rows[lb.scene_id]
            assert 0.0 <= row.harsh_closing_ratio <= 1.0
            assert row.min_long_gap >= 0.0 and row.min_dist >= 0.0
            if lb.kind == AnomalyKind.SUDDEN_BRAKE:
                assert row.min_ttc < normal_ttc
            elif lb.kind == AnomalyKind.LATERAL_DRIFT:
                assert 1.8 <= row.lateral_excursion <= 2.2

    def test_table_keeps_order(self, synth_corpus):
        scenes, _ = synth_corpus
        table = compute_proxy_table(scenes[:12], threads=3)
        assert list(table.columns) == PROXY_COLUMNS
        assert table['scene_id'].tolist() == [s.scene_id for s in scenes[:12]]


def _rank_oracle(values):
    n = len(values)
    ranks = []
    for i in range(n):
        less = sum(1 for j in range(n) if values[j] < values[i])
        equal = sum(1 for j in range(n) if values[j] == values[i])
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


class TestSpearman:
    def test_identity_and_reverse(self):
        xs = [3.0, 1.0, 4.0, 1.5, 9.0]
        assert spearman(xs, xs) == pytest.approx(1.0)
        assert spearman(xs, [-x for x in xs]) == pytest.approx(-1.0)

    def test_monotone_transform(self):
        xs = np.random.default_rng(0).normal(size=50)
        assert spearman(xs, np.exp(3 * xs)) == pytest.approx(1.0)

    def test_ties_match_oracle(self):
        rng = np.random.default_rng(1)
        xs = rng.integers(0, 5, size=20).astype(float)
        ys = rng.integers(0, 4, size=20).astype(float)
        rx, ry = _rank_oracle(xs), _rank_oracle(ys)
        mx, my = sum(rx) / 20, sum(ry) / 20
        num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
        den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
        assert spearman(xs, ys) == pytest.approx(num / den, abs=1e-9)

    def test_errors(self):
        with pytest.raises(LengthMismatchError):
            spearman([1.0, 2.0], [1.0])
        with pytest.raises(LengthMismatchError):
            spearman([1.0], [1.0])
        with pytest.raises(ZeroVarianceError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
