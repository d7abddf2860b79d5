#!/usr/bin/env python3
"""Achievable rate vs distance for a 32-antenna MRT link and a 1-antenna link.

Free-space straight-line approach; prints a CSV table to stdout. The
32-antenna link dominates pointwise and both rates grow as the terminals
close in.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from isactwin.channel import OfdmParams, mrt_beamformer, synthesize_channel
from isactwin.metrics import achievable_rate
from isactwin.network import ArrayConfig
from isactwin.raytrace import SPEED_OF_LIGHT, Pose, trace_paths
from isactwin.scene import Scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--carrier-hz", type=float, default=2.4e9)
    ap.add_argument("--d-start", type=float, default=8.0)
    ap.add_argument("--d-stop", type=float, default=1.0)
    ap.add_argument("--points", type=int, default=30)
    ap.add_argument("--power-w", type=float, default=1e-3)
    ap.add_argument("--noise-w", type=float, default=1e-12)
    args = ap.parse_args()

    lam = SPEED_OF_LIGHT / args.carrier_hz
    scene = Scene(surfaces=[], materials={}, bounds_min=np.full(3, -100.0),
                  bounds_max=np.full(3, 100.0))
    params = OfdmParams(n_subcarriers=64, n_symbols=14, delta_f=78125.0,
                        carrier_freq=args.carrier_hz)
    rx = ArrayConfig(1, lam / 2)

    print("distance_m,rate_1ant_bps_hz,rate_32ant_bps_hz")
    for d in np.linspace(args.d_start, args.d_stop, args.points):
        ps = trace_paths(scene, Pose.at(0, 0, 1), Pose.at(d, 0, 1), 0, args.carrier_hz)
        rates = []
        for n_ant in (1, 32):
            h = synthesize_channel(ps, ArrayConfig(n_ant, lam / 2), rx, 1, 1, params)
            w = mrt_beamformer(h)
            rates.append(achievable_rate(h, w, args.power_w, args.noise_w))
        print(f"{d:.3f},{rates[0]:.4f},{rates[1]:.4f}")


if __name__ == "__main__":
    main()
