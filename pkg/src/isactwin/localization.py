"""Fingerprint localization from multipath delay profiles (MDPs).

Offline, every floor-grid point gets one binned delay-power profile per
access point; online, a measured profile is matched against the database by a
delay-aligned, power-normalized RMS distance summed over APs. The matching
metric is intentionally simple: circular-shift both profiles so the first
nonzero bin sits at index 0 (kills the unknown absolute sync offset), scale
each to unit total power, and take the RMS bin difference.

Database file layout (version 1, little-endian, deterministic bytes):

    magic   b"ITFPDB01"
    u32     header length in bytes
    bytes   UTF-8 JSON header {version, scene_hash, network_hash, spacing_m,
            bin_width_s, num_bins, ap_ids, n_points}
    f64     positions, (n_points, 3), C order
    f64     bins, (n_points, n_aps, num_bins), C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raytrace import PathSet, Pose, trace_paths
from .scene import Scene

_MAGIC = b"ITFPDB01"
_VERSION = 1


class DatabaseError(ValueError):
    """Fingerprint database mismatch, missing entry, or bad file."""


@dataclass(eq=False)
class Mdp:
    """Per-delay-bin received power (linear watts) of one AP at one position."""

    bins: np.ndarray
    bin_width: float
    ap_id: str = ""
    overflow: int = 0  # paths whose delay fell beyond the binning window

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=float)
        if self.bin_width <= 0.0:
            raise ValueError("bin_width must be positive")
        if np.any(self.bins < 0.0):
            raise ValueError("bins must be nonnegative")

    @property
    def num_bins(self) -> int:
        return len(self.bins)


def compute_mdp(paths: PathSet, bin_width: float, num_bins: int, ap_id: str = "") -> Mdp:
    """Bin path powers by delay: bin[i] = sum |b_l|^2 over floor(tau_l / width) == i."""
    if bin_width <= 0.0 or num_bins < 1:
        raise ValueError("invalid bin parameters")
    bins = np.zeros(num_bins)
    overflow = 0
    for p in paths:
        idx = int(np.floor(p.delay / bin_width))
        if idx >= num_bins:
            overflow += 1
            continue
        bins[idx] += abs(p.gain) ** 2
    return Mdp(bins=bins, bin_width=bin_width, ap_id=ap_id, overflow=overflow)


def mdp_distance(a: Mdp, b: Mdp) -> float:
    """Delay-aligned RMS difference of power-normalized profiles."""
    if a.num_bins != b.num_bins or abs(a.bin_width - b.bin_width) > 1e-18:
        raise DatabaseError("bin parameters mismatch")
    pa = _aligned_unit(a.bins)
    pb = _aligned_unit(b.bins)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def _aligned_unit(bins: np.ndarray) -> np.ndarray:
    total = bins.sum()
    if total <= 0.0:
        return np.zeros_like(bins)
    nz = np.nonzero(bins)[0]
    return np.roll(bins, -int(nz[0])) / total


@dataclass(eq=False)
class FingerprintDB:
    """Grid-indexed MDPs per AP, stamped with the producing scenario's hashes."""

    positions: np.ndarray       # (P, 3)
    spacing: float
    ap_ids: list
    bins: np.ndarray            # (P, A, num_bins)
    bin_width: float
    scene_hash: str = ""
    network_hash: str = ""
    _aligned: np.ndarray | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.bins = np.asarray(self.bins, dtype=float)
        if self.bins.shape[:2] != (len(self.positions), len(self.ap_ids)):
            raise DatabaseError("bins array shape inconsistent with grid and AP list")

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def entry(self, point_index: int, ap_id: str) -> Mdp:
        a = self._ap_index(ap_id)
        return Mdp(bins=self.bins[point_index, a].copy(), bin_width=self.bin_width, ap_id=ap_id)

    def _ap_index(self, ap_id: str) -> int:
        try:
            return self.ap_ids.index(ap_id)
        except ValueError:
            raise DatabaseError(f"AP {ap_id!r} not in database") from None

    def aligned_unit(self) -> np.ndarray:
        """Cached aligned+normalized profiles, shape (P, A, num_bins)."""
        if self._aligned is None:
            b = self.bins
            first = np.argmax(b > 0.0, axis=-1)                       # 0 for all-zero rows
            cols = (np.arange(b.shape[-1])[None, None, :] + first[..., None]) % b.shape[-1]
            rolled = np.take_along_axis(b, cols, axis=-1)
            totals = b.sum(axis=-1, keepdims=True)
            self._aligned = np.where(totals > 0.0, rolled / np.where(totals > 0.0, totals, 1.0), 0.0)
        return self._aligned


def build_fingerprint_db(
    scene: Scene,
    aps,
    grid: np.ndarray,
    bin_width: float,
    num_bins: int,
    spacing: float,
    max_order: int = 2,
    carrier_freq: float = 2.4e9,
    scene_hash: str = "",
    network_hash: str = "",
) -> FingerprintDB:
    """Trace every (grid point, AP) pair and bin the result.

    aps is a list of (ap_id, Pose) or (ap_id, Pose, ArrayConfig) tuples; the
    array config does not enter the delay profile and is accepted only for
    interface symmetry. Deterministic: same inputs, same database.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1, 3)
    if len(grid) == 0:
        raise ValueError("empty grid")
    ap_list = [(a[0], a[1]) for a in aps]
    if not ap_list:
        raise ValueError("no APs")
    bins = np.zeros((len(grid), len(ap_list), num_bins))
    for pi, point in enumerate(grid):
        rx = Pose(position=point)
        for ai, (ap_id, ap_pose) in enumerate(ap_list):
            paths = trace_paths(scene, ap_pose, rx, max_order=max_order, carrier_freq=carrier_freq)
            bins[pi, ai] = compute_mdp(paths, bin_width, num_bins, ap_id=ap_id).bins
    return FingerprintDB(
        positions=grid,
        spacing=spacing,
        ap_ids=[a for a, _ in ap_list],
        bins=bins,
        bin_width=bin_width,
        scene_hash=scene_hash,
        network_hash=network_hash,
    )


def localize(measured, db: FingerprintDB) -> tuple:
    """Grid point minimizing the summed per-AP profile distance, plus the score.

    Ties resolve to the lowest grid index. Every measured AP must exist in
    the database with matching bin parameters.
    """
    if not measured:
        raise DatabaseError("no measured fingerprints")
    scores = np.zeros(len(db.positions))
    aligned = db.aligned_unit()
    for ap_id, mdp in sorted(measured.items()):
        a = db._ap_index(ap_id)
        if mdp.num_bins != db.num_bins or abs(mdp.bin_width - db.bin_width) > 1e-18:
            raise DatabaseError(f"bin parameters of AP {ap_id!r} do not match database")
        q = _aligned_unit(mdp.bins)
        scores += np.sqrt(np.mean((aligned[:, a, :] - q[None, :]) ** 2, axis=-1))
    best = int(np.argmin(scores))
    return db.positions[best].copy(), float(scores[best])


def add_fingerprint_noise(mdp: Mdp, snr_db: float, rng: np.random.Generator) -> Mdp:
    """Per-bin Gaussian perturbation of the occupied bins at a given SNR.

    Models post-detection power-estimation error: the set of occupied delay
    bins is assumed correctly detected, and each occupied bin's power picks
    up zero-mean Gaussian noise with variance (mean squared occupied power) /
    SNR, clipped at zero. Empty bins stay empty so the first-nonzero delay
    alignment remains meaningful.
    """
    occupied = mdp.bins > 0.0
    if not np.any(occupied):
        return Mdp(bins=mdp.bins.copy(), bin_width=mdp.bin_width, ap_id=mdp.ap_id,
                   overflow=mdp.overflow)
    sigma = np.sqrt(np.mean(mdp.bins[occupied] ** 2) / 10.0 ** (snr_db / 10.0))
    noisy = mdp.bins.copy()
    noisy[occupied] = np.clip(noisy[occupied] + rng.normal(0.0, sigma, int(occupied.sum())), 0.0, None)
    return Mdp(bins=noisy, bin_width=mdp.bin_width, ap_id=mdp.ap_id, overflow=mdp.overflow)


def save_db(db: FingerprintDB, path) -> Path:
    """Write the database file (see module docstring for the layout)."""
    path = Path(path)
    header = {
        "version": _VERSION,
        "scene_hash": db.scene_hash,
        "network_hash": db.network_hash,
        "spacing_m": db.spacing,
        "bin_width_s": db.bin_width,
        "num_bins": int(db.num_bins),
        "ap_ids": list(db.ap_ids),
        "n_points": int(len(db.positions)),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(db.positions, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(db.bins, dtype="<f8").tobytes())
    return path


def load_db(path) -> FingerprintDB:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise DatabaseError(f"{path}: not a fingerprint database")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        header = json.loads(raw[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatabaseError(f"{path}: corrupt header") from exc
    off += hlen
    if header.get("version") != _VERSION:
        raise DatabaseError(f"{path}: unsupported version {header.get('version')}")
    n_points = header["n_points"]
    num_bins = header["num_bins"]
    ap_ids = list(header["ap_ids"])
    positions = np.frombuffer(raw, dtype="<f8", count=n_points * 3, offset=off).reshape(n_points, 3)
    off += n_points * 3 * 8
    bins = np.frombuffer(raw, dtype="<f8", count=n_points * len(ap_ids) * num_bins, offset=off)
    bins = bins.reshape(n_points, len(ap_ids), num_bins)
    return FingerprintDB(
        positions=positions.copy(),
        spacing=header["spacing_m"],
        ap_ids=ap_ids,
        bins=bins.copy(),
        bin_width=header["bin_width_s"],
        scene_hash=header["scene_hash"],
        network_hash=header["network_hash"],
    )
