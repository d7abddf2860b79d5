"""Acceptance gate: every criterion at its stated tolerance, one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines. The
case-study criteria (4, 6) use the shipped desk scenario copied into a tmp
dir; its fingerprint database is built once per session.
"""

import cmath
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from isactwin import metrics, simcore
from isactwin.agent import Control, diff_drive_step
from isactwin.channel import OfdmParams, mrt_beamformer, synthesize_channel
from isactwin.localization import build_fingerprint_db, localize
from isactwin.network import ArrayConfig, ResourceRequest, allocate_resources
from isactwin.channel import build_tx_signal
from isactwin.raytrace import (
    SPEED_OF_LIGHT as C,
    PathSet,
    Pose,
    PropagationPath,
    trace_paths,
)
from isactwin.scene import Scene, floor_grid, load_scene
from conftest import box_scene_doc
from test_raytrace import box_image_lengths

FC = 2.4e9
LAM = C / FC


def free_space():
    return Scene(surfaces=[], materials={}, bounds_min=np.full(3, -100.0),
                 bounds_max=np.full(3, 100.0))


@pytest.fixture(scope="session")
def case_study(case_study_dir):
    """Shipped scenario with its database built once."""
    config = simcore.ScenarioConfig.from_file(case_study_dir / "desk_two_ap.json")
    simcore.build_db_for_scenario(config)
    return case_study_dir / "desk_two_ap.json"


def test_criterion_1_channel_synthesis_oracle():
    """100 random small instances match the independent Eq.-style sum to 1e-12."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        L = int(rng.integers(1, 5))
        entries = []
        for _ in range(L):
            g = (rng.normal() + 1j * rng.normal()) * 0.2
            if abs(g) > 1.0:
                g /= abs(g)
            entries.append(
                PropagationPath(
                    gain=g,
                    delay=float(rng.uniform(1e-9, 1e-7)),
                    doppler=float(rng.uniform(-500, 500)),
                    aoa=(float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.3, 1.3))),
                    aod=(float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.3, 1.3))),
                    reflection_points=np.zeros((0, 3)),
                    order=0,
                )
            )
        ps = PathSet(paths=entries, tx_pose=Pose.at(0, 0, 0), rx_pose=Pose.at(1, 0, 0),
                     carrier_freq=FC)
        params = OfdmParams(n_subcarriers=int(rng.integers(1, 17)),
                            n_symbols=int(rng.integers(1, 5)),
                            delta_f=float(rng.uniform(2e4, 3e5)), carrier_freq=FC)
        tx = ArrayConfig(int(rng.integers(1, 5)), LAM * float(rng.uniform(0.25, 0.75)))
        rx = ArrayConfig(int(rng.integers(1, 5)), LAM * float(rng.uniform(0.25, 0.75)))
        n = int(rng.integers(1, params.n_subcarriers + 1))
        k = int(rng.integers(1, params.n_symbols + 1))
        h = synthesize_channel(ps, tx, rx, n, k, params)
        oracle = _eq3_reference(ps, tx, rx, n, k, params)
        scale = max(1.0, float(np.max(np.abs(oracle))))
        worst = max(worst, float(np.max(np.abs(h - oracle))) / scale)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12
    assert elapsed < 10.0
    print(f"\n[criterion 1] PASS: channel oracle equivalence, worst rel err {worst:.2e}, {elapsed:.1f}s")


def _eq3_reference(ps, tx_array, rx_array, n, k, p):
    lam = C / p.carrier_freq
    nr, nt = rx_array.num_elements, tx_array.num_elements
    h = [[0j] * nt for _ in range(nr)]
    for path in ps.paths:
        omega = k * path.doppler * p.symbol_duration - n * path.delay * p.delta_f
        rot = cmath.exp(2j * math.pi * omega)
        a_r = [cmath.exp(2j * math.pi * (m * rx_array.spacing / lam)
                         * math.sin(path.aoa[0]) * math.cos(path.aoa[1])) for m in range(nr)]
        a_t = [cmath.exp(2j * math.pi * (m * tx_array.spacing / lam)
                         * math.sin(path.aod[0]) * math.cos(path.aod[1])) for m in range(nt)]
        for i in range(nr):
            for j in range(nt):
                h[i][j] += path.gain * rot * a_r[i] * a_t[j]
    return np.array(h)


def test_criterion_2_image_method_geometry():
    """Order <= 2 path lengths match the analytic box enumeration; reciprocity holds."""
    start = time.perf_counter()
    scene = load_scene(box_scene_doc(4.0, 3.0, 2.5, coeff=0.7))
    tx, rx = Pose.at(1.23, 0.74, 1.31), Pose.at(2.86, 2.11, 0.97)

    impl = sorted(p.delay * C for p in trace_paths(scene, tx, rx, 2, FC))
    oracle = sorted(box_image_lengths(4.0, 3.0, 2.5, tx.position, rx.position, 2))
    assert len(impl) == len(oracle)
    worst = float(np.max(np.abs(np.array(impl) - np.array(oracle))))
    assert worst <= 1e-9

    fwd = sorted((abs(p.gain), p.delay) for p in trace_paths(scene, tx, rx, 2, FC))
    rev = sorted((abs(p.gain), p.delay) for p in trace_paths(scene, rx, tx, 2, FC))
    assert len(fwd) == len(rev)
    for f, r in zip(fwd, rev):
        assert f[0] == pytest.approx(r[0], abs=1e-12)
        assert f[1] == pytest.approx(r[1], abs=1e-12)

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    print(f"\n[criterion 2] PASS: {len(impl)} paths match box oracle to {worst:.2e} m, "
          f"reciprocity exact, {elapsed:.1f}s")


def test_criterion_3_localization_round_trip():
    """Self-query of every point of a 1 m x 1 m, 5 cm database: exact hit, score 0."""
    start = time.perf_counter()
    scene = load_scene(box_scene_doc(4.0, 3.0, 2.5, coeff=0.7))
    grid = floor_grid(scene, 0.05, 0.15)
    keep = ((grid[:, 0] >= 1.5 - 1e-9) & (grid[:, 0] <= 2.5 + 1e-9)
            & (grid[:, 1] >= 1.0 - 1e-9) & (grid[:, 1] <= 2.0 + 1e-9))
    grid = grid[keep]
    assert len(grid) == 21 * 21 == 441
    aps = [("ap1", Pose.at(0.3, 0.3, 2.0)), ("ap2", Pose.at(3.7, 2.7, 2.0))]
    db = build_fingerprint_db(scene, aps, grid, bin_width=8e-10, num_bins=64,
                              spacing=0.05, max_order=2, carrier_freq=FC)
    failures = 0
    for i in range(len(db.positions)):
        measured = {ap: db.entry(i, ap) for ap in db.ap_ids}
        est, score = localize(measured, db)
        if not np.array_equal(est, db.positions[i]) or score != 0.0:
            failures += 1
    elapsed = time.perf_counter() - start
    assert failures == 0
    assert elapsed < 60.0
    print(f"\n[criterion 3] PASS: 441/441 self-queries exact with score 0, {elapsed:.1f}s")


def test_criterion_4_case_study_reproduction(case_study):
    """Shipped two-AP desk scenario: noiseless <= 7.1 cm; noisy 20 dB + 5 cm offset
    <= 16 cm in >= 90% of 20 seeded runs."""
    start = time.perf_counter()
    config = simcore.ScenarioConfig.from_file(case_study)
    assert config.ofdm.n_subcarriers == 1024
    assert config.ofdm.delta_f == 78125.0
    assert config.ofdm.n_symbols == 14
    assert config.ofdm.carrier_freq == 2.4e9
    assert config.db.build.spacing == 0.05

    # (a) noiseless: max positioning error within the stated bound
    records = simcore.run_simulation(config, trace_path=case_study.parent / "c4a.csv")
    errs = _positioning_errors(records)
    max_clean = float(errs.max())
    assert max_clean <= 0.071

    # (b) 20 seeded runs with fingerprint noise and a 5 cm map offset
    doc = json.loads(case_study.read_text())
    doc["noise"]["fingerprint_snr_db"] = 20.0
    doc["noise"]["map_offset_m"] = [0.0, -0.05]
    within = 0
    worst = 0.0
    for seed in range(100, 120):
        doc["sim"]["seed"] = seed
        cfg = simcore.ScenarioConfig.from_dict(doc, base_dir=case_study.parent)
        recs = simcore.run_simulation(cfg, trace_path=case_study.parent / "c4b.csv")
        run_max = float(_positioning_errors(recs).max())
        worst = max(worst, run_max)
        if run_max <= 0.16:
            within += 1
    elapsed = time.perf_counter() - start
    assert within >= 18  # >= 90% of 20 runs
    assert elapsed < 600.0
    print(f"\n[criterion 4] PASS: noiseless max {max_clean * 100:.1f} cm <= 7.1 cm; "
          f"noisy runs within 16 cm: {within}/20 (worst {worst * 100:.1f} cm), {elapsed:.0f}s")


def _positioning_errors(records):
    return np.array([
        np.hypot(a.est_x - a.true_x, a.est_y - a.true_y)
        for r in records for a in r.agents.values()
    ])


def test_criterion_5_rate_monotonicity():
    """Approaching 8 m -> 1 m in free space: rates strictly increase, 32-antenna
    MRT dominates the single-antenna link pointwise."""
    start = time.perf_counter()
    scene = free_space()
    params = OfdmParams(n_subcarriers=64, n_symbols=14, delta_f=78125.0, carrier_freq=FC)
    rx_arr = ArrayConfig(1, LAM / 2)
    p_el, sigma2 = 1e-3, 1e-12
    distances = np.linspace(8.0, 1.0, 30)
    rates = {1: [], 32: []}
    for d in distances:
        ps = trace_paths(scene, Pose.at(0, 0, 1), Pose.at(d, 0, 1), 0, FC)
        for n_ant in (1, 32):
            h = synthesize_channel(ps, ArrayConfig(n_ant, LAM / 2), rx_arr, 1, 1, params)
            w = mrt_beamformer(h)
            rates[n_ant].append(metrics.achievable_rate(h, w, p_el, sigma2))
    for n_ant in (1, 32):
        seq = rates[n_ant]
        assert all(b > a for a, b in zip(seq, seq[1:])), f"{n_ant}-antenna rate not increasing"
    assert all(r32 > r1 for r32, r1 in zip(rates[32], rates[1]))
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    print(f"\n[criterion 5] PASS: rates strictly increasing on approach "
          f"(1-ant {rates[1][0]:.2f}->{rates[1][-1]:.2f}, "
          f"32-ant {rates[32][0]:.2f}->{rates[32][-1]:.2f} b/s/Hz), {elapsed:.1f}s")


def test_criterion_6_determinism(case_study):
    """Two CLI runs with --seed 42 produce byte-identical trace CSVs."""
    start = time.perf_counter()
    out_a = case_study.parent / "det_a.csv"
    out_b = case_study.parent / "det_b.csv"
    for out in (out_a, out_b):
        proc = subprocess.run(
            [sys.executable, "-m", "isactwin", "run", str(case_study),
             "--seed", "42", "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
    assert out_a.read_bytes() == out_b.read_bytes()
    elapsed = time.perf_counter() - start
    print(f"\n[criterion 6] PASS: byte-identical traces for --seed 42, {elapsed:.0f}s")


def test_criterion_7_power_budget_property():
    """1000 random allocations respect the budget; TxSignals satisfy the energy identity."""
    start = time.perf_counter()
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(1, 64))
        k = int(rng.integers(1, 15))
        n_users = int(rng.integers(1, 4))
        reqs = []
        for u in range(n_users):
            subs = frozenset(int(x) for x in rng.choice(np.arange(1, n + 1),
                                                        size=rng.integers(1, n + 1),
                                                        replace=False))
            syms = frozenset(int(x) for x in rng.choice(np.arange(1, k + 1),
                                                        size=rng.integers(1, k + 1),
                                                        replace=False))
            reqs.append(ResourceRequest(user=f"u{u}", subcarriers=subs, symbols=syms,
                                        power_budget=float(rng.uniform(0, 5))))
        alloc = allocate_resources(reqs, n, k)
        for ua in alloc.users.values():
            assert ua.total_power() <= ua.power_budget * (1 + 1e-9)

        w = rng.normal(size=4) + 1j * rng.normal(size=4)
        w /= np.linalg.norm(w)
        d = cmath.exp(2j * math.pi * rng.random())  # unit-energy symbol
        p = float(rng.uniform(0, 3))
        alpha = int(rng.integers(0, 2))
        sig = build_tx_signal(d, w, p, alpha)
        assert np.linalg.norm(sig.vector) ** 2 == pytest.approx(alpha ** 2 * p, abs=1e-12 * max(p, 1))
    elapsed = time.perf_counter() - start
    print(f"\n[criterion 7] PASS: 1000 allocations within budget, energy identity to 1e-12, {elapsed:.1f}s")


def test_criterion_8_kinematics_arc_oracle():
    """Circle command (v=0.2, w=0.4, 157 steps of dt=0.1) vs closed-form arc."""
    start = time.perf_counter()
    v, om, dt = 0.2, 0.4, 0.1
    radius = v / om
    pose = Pose.at(0, 0, 0, yaw=0)
    worst = 0.0
    for step in range(1, 158):
        pose = diff_drive_step(pose, Control(v, om), dt)
        t = step * dt
        expected = np.array([radius * math.sin(om * t), radius * (1 - math.cos(om * t))])
        worst = max(worst, float(np.hypot(*(pose.position[:2] - expected))))
    assert worst <= 1e-6
    elapsed = time.perf_counter() - start
    print(f"\n[criterion 8] PASS: 157 arc steps within {worst:.2e} m of closed form, {elapsed:.1f}s")
