"""Image-method multipath solver.

Specular reflections only: candidate paths are enumerated as ordered surface
sequences up to a maximum reflection order, unfolded by mirroring the source,
back-traced to concrete reflection points, and validated for polygon
containment and occlusion. Each surviving path carries a complex gain, a
delay, a Doppler shift, and departure/arrival angles expressed in the local
frame of its terminal.

Conventions:
  * angles are (azimuth, elevation) of the unit direction pointing from the
    terminal toward the first/last bounce (or the far terminal for LoS);
  * Euler orientation is Z-Y-X (yaw about z, then pitch about y, roll about x);
  * the per-path amplitude is (lambda / (4 pi d)) * prod(reflection coeffs)
    with phase -2 pi d / lambda, clamped to unit magnitude at sub-wavelength
    ranges.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .scene import Scene, Surface

SPEED_OF_LIGHT = 299_792_458.0

# Paths weaker than this amplitude are dropped; bounds the path count without
# measurable effect on delay profiles or channels at indoor ranges.
GAIN_PRUNE_THRESHOLD = 1e-9

# Occlusion hits closer than this to a segment endpoint are numerical
# artifacts of the reflection points lying on their own surfaces.
_ENDPOINT_GUARD = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(angle + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True, eq=False)
class Pose:
    """Position, Z-Y-X Euler orientation, and velocity of a terminal."""

    position: np.ndarray
    orientation: np.ndarray = None
    velocity: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        ori = np.zeros(3) if self.orientation is None else np.asarray(self.orientation, dtype=float).reshape(3)
        object.__setattr__(self, "orientation", np.array([wrap_angle(a) for a in ori]))
        vel = np.zeros(3) if self.velocity is None else np.asarray(self.velocity, dtype=float).reshape(3)
        object.__setattr__(self, "velocity", vel)

    @classmethod
    def at(cls, x, y, z=0.0, yaw=0.0, pitch=0.0, roll=0.0, velocity=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(position=(x, y, z), orientation=(yaw, pitch, roll), velocity=velocity)

    @property
    def yaw(self) -> float:
        return float(self.orientation[0])

    def rotation(self) -> np.ndarray:
        """Local-to-global rotation matrix Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
        a, b, g = self.orientation
        ca, sa = math.cos(a), math.sin(a)
        cb, sb = math.cos(b), math.sin(b)
        cg, sg = math.cos(g), math.sin(g)
        rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
        return rz @ ry @ rx

    def to_local(self, vec: np.ndarray) -> np.ndarray:
        """Rotate a global-frame vector into this pose's local frame."""
        return self.rotation().T @ np.asarray(vec, dtype=float)


@dataclass(eq=False)
class PropagationPath:
    gain: complex
    delay: float
    doppler: float
    aoa: tuple  # (azimuth, elevation) at the receiver, local frame
    aod: tuple  # (azimuth, elevation) at the transmitter, local frame
    reflection_points: np.ndarray
    order: int

    def __post_init__(self):
        self.reflection_points = np.asarray(self.reflection_points, dtype=float).reshape(-1, 3)
        if self.order != len(self.reflection_points):
            raise ValueError("order must equal the number of reflection points")
        if self.delay <= 0.0:
            raise ValueError("delay must be positive")


@dataclass(eq=False)
class PathSet:
    """All resolvable paths of one link, sorted ascending by delay."""

    paths: list
    tx_pose: Pose
    rx_pose: Pose
    carrier_freq: float

    def __post_init__(self):
        self.paths = sorted(self.paths, key=lambda p: p.delay)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


def mirror_across_surface(point: np.ndarray, surface: Surface) -> np.ndarray:
    """Reflect a point across the surface's plane (an involution)."""
    if surface.unit_normal is None:
        raise ValueError("surface has no well-defined plane")
    p = np.asarray(point, dtype=float)
    n = surface.unit_normal
    return p - 2.0 * ((p - surface.vertices[0]) @ n) * n


def path_gain(path_length: float, reflection_coeffs, carrier_freq: float) -> complex:
    """Free-space amplitude with reflection losses and propagation phase.

    b = (lambda / (4 pi d)) * prod(coeffs) * exp(-j 2 pi d / lambda)
    """
    if path_length <= 0.0:
        raise ValueError(f"path_length must be > 0, got {path_length}")
    lam = SPEED_OF_LIGHT / carrier_freq
    amp = lam / (4.0 * math.pi * path_length)
    for c in reflection_coeffs:
        amp *= c
    phase = -2.0 * math.pi * path_length / lam
    return amp * complex(math.cos(phase), math.sin(phase))


def doppler_shift(path_points: np.ndarray, tx_velocity, rx_velocity, carrier_freq: float) -> float:
    """Doppler from the first/last segment directions of a path polyline (tx..rx).

    nu = (f_c / c) * (v_tx . u_dep + v_rx . (-u_arr)), where u_dep leaves the
    transmitter along the first segment and u_arr arrives at the receiver
    along the last segment.
    """
    pts = np.asarray(path_points, dtype=float)
    u_dep = _unit(pts[1] - pts[0])
    u_arr = _unit(pts[-1] - pts[-2])
    v_tx = np.asarray(tx_velocity, dtype=float)
    v_rx = np.asarray(rx_velocity, dtype=float)
    return carrier_freq / SPEED_OF_LIGHT * float(v_tx @ u_dep - v_rx @ u_arr)


def trace_paths(
    scene: Scene,
    tx: Pose,
    rx: Pose,
    max_order: int = 2,
    carrier_freq: float = 2.4e9,
    prune_gain: float = GAIN_PRUNE_THRESHOLD,
) -> PathSet:
    """All unoccluded specular paths of reflection order <= max_order.

    LoS is order 0. Delays are total polyline length over c; angles are
    rotated into each terminal's local frame; gains follow path_gain with the
    per-bounce material coefficients and are clamped to unit magnitude.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    sep = np.linalg.norm(rx.position - tx.position)
    if sep < 1e-12:
        raise ValueError("coincident endpoints")

    accel = _accel_for(scene)
    paths = []
    for seq in _surface_sequences(scene.surfaces, max_order):
        pts = _unfold(seq, tx.position, rx.position)
        if pts is None:
            continue
        if _blocked(accel, pts, seq):
            continue
        seg = np.diff(pts, axis=0)
        seg_lengths = np.linalg.norm(seg, axis=1)
        if np.any(seg_lengths < 1e-9):
            continue
        total = float(seg_lengths.sum())
        coeffs = [s.material.reflection_coeff for s in seq]
        gain = path_gain(total, coeffs, carrier_freq)
        amp = abs(gain)
        if amp < prune_gain:
            continue
        if amp > 1.0:
            gain /= amp
        paths.append(
            PropagationPath(
                gain=gain,
                delay=total / SPEED_OF_LIGHT,
                doppler=doppler_shift(pts, tx.velocity, rx.velocity, carrier_freq),
                aoa=_direction_angles(rx, pts[-2] - pts[-1]),
                aod=_direction_angles(tx, pts[1] - pts[0]),
                reflection_points=pts[1:-1],
                order=len(seq),
            )
        )
    return PathSet(paths=paths, tx_pose=tx, rx_pose=rx, carrier_freq=carrier_freq)


def relay_paths(inbound: PathSet, outbound: PathSet, reflection_coeff: float,
                prune_gain: float = GAIN_PRUNE_THRESHOLD) -> PathSet:
    """Compose paths through a regenerative scatterer with zero processing delay.

    The scatterer re-emits whatever impinges on it, scaled by its reflection
    coefficient: delays and Dopplers add, gains multiply. Used for the
    monostatic-sensing workaround where a dummy transmitter echoes at an
    object position.
    """
    if abs(inbound.carrier_freq - outbound.carrier_freq) > 1e-6:
        raise ValueError("carrier frequency mismatch between path legs")
    joint = inbound.rx_pose.position
    if np.linalg.norm(joint - outbound.tx_pose.position) > 1e-9:
        raise ValueError("inbound rx and outbound tx must coincide at the scatterer")
    composed = []
    for a in inbound.paths:
        for b in outbound.paths:
            gain = a.gain * b.gain * reflection_coeff
            amp = abs(gain)
            if amp < prune_gain:
                continue
            if amp > 1.0:
                gain /= amp
            pts = np.vstack([a.reflection_points, joint[None, :], b.reflection_points])
            composed.append(
                PropagationPath(
                    gain=gain,
                    delay=a.delay + b.delay,
                    doppler=a.doppler + b.doppler,
                    aoa=b.aoa,
                    aod=a.aod,
                    reflection_points=pts,
                    order=a.order + b.order + 1,
                )
            )
    return PathSet(paths=composed, tx_pose=inbound.tx_pose, rx_pose=outbound.rx_pose,
                   carrier_freq=inbound.carrier_freq)


def pathset_to_record(ps: PathSet) -> dict:
    """JSON-able record of a path set: the per-path parameter vectors plus endpoints.

    Arrays are ordered by ascending delay; complex gains are split into
    re/im. The fingerprint database stores binned delay profiles instead (see
    the localization module), but this record format keeps the raw solver
    output exportable per grid point.
    """
    return {
        "carrier_hz": ps.carrier_freq,
        "tx_position": ps.tx_pose.position.tolist(),
        "rx_position": ps.rx_pose.position.tolist(),
        "gain_re": [p.gain.real for p in ps.paths],
        "gain_im": [p.gain.imag for p in ps.paths],
        "delay_s": [p.delay for p in ps.paths],
        "doppler_hz": [p.doppler for p in ps.paths],
        "aoa_rad": [list(p.aoa) for p in ps.paths],
        "aod_rad": [list(p.aod) for p in ps.paths],
        "order": [p.order for p in ps.paths],
        "reflection_points": [p.reflection_points.tolist() for p in ps.paths],
    }


def pathset_from_record(rec: dict) -> PathSet:
    paths = [
        PropagationPath(
            gain=complex(re, im),
            delay=d,
            doppler=nu,
            aoa=tuple(aoa),
            aod=tuple(aod),
            reflection_points=np.asarray(pts, dtype=float).reshape(-1, 3),
            order=order,
        )
        for re, im, d, nu, aoa, aod, order, pts in zip(
            rec["gain_re"], rec["gain_im"], rec["delay_s"], rec["doppler_hz"],
            rec["aoa_rad"], rec["aod_rad"], rec["order"], rec["reflection_points"],
        )
    ]
    return PathSet(
        paths=paths,
        tx_pose=Pose(position=rec["tx_position"]),
        rx_pose=Pose(position=rec["rx_position"]),
        carrier_freq=rec["carrier_hz"],
    )


# ---------------------------------------------------------------------------
# internals

@dataclass(eq=False)
class _Accel:
    surfaces: list
    normals: np.ndarray   # (S, 3)
    offsets: np.ndarray   # (S,), n . x = offset


_ACCEL_CACHE: "weakref.WeakKeyDictionary[Scene, _Accel]" = weakref.WeakKeyDictionary()


def _accel_for(scene: Scene) -> _Accel:
    accel = _ACCEL_CACHE.get(scene)
    if accel is None:
        usable = [s for s in scene.surfaces if s.unit_normal is not None]
        if usable:
            normals = np.array([s.unit_normal for s in usable])
            offsets = np.array([s.plane_offset for s in usable])
        else:
            normals = np.zeros((0, 3))
            offsets = np.zeros(0)
        accel = _Accel(surfaces=usable, normals=normals, offsets=offsets)
        _ACCEL_CACHE[scene] = accel
    return accel


def _surface_sequences(surfaces, max_order):
    """Ordered reflection-surface sequences, LoS first, no consecutive repeats."""
    yield ()
    frontier = [()]
    for _ in range(max_order):
        new_frontier = []
        for seq in frontier:
            for s in surfaces:
                if s.unit_normal is None or (seq and s is seq[-1]):
                    continue
                ext = seq + (s,)
                new_frontier.append(ext)
                yield ext
        frontier = new_frontier


def _unfold(seq, tx_point, rx_point):
    """Back-trace a surface sequence into concrete path points (tx..rx) or None."""
    if not seq:
        return np.vstack([tx_point, rx_point])
    images = [np.asarray(tx_point, dtype=float)]
    for s in seq:
        n = s.unit_normal
        p = images[-1]
        images.append(p - 2.0 * ((p @ n) - s.plane_offset) * n)
    pts = [np.asarray(rx_point, dtype=float)]
    cur = pts[0]
    for i in range(len(seq), 0, -1):
        s = seq[i - 1]
        hit = _plane_segment_hit(cur, images[i], s)
        if hit is None or not s.contains(hit):
            return None
        pts.append(hit)
        cur = hit
    pts.append(np.asarray(tx_point, dtype=float))
    return np.array(pts[::-1])


def _plane_segment_hit(a, b, surface):
    n = surface.unit_normal
    denom = (b - a) @ n
    if abs(denom) < 1e-15:
        return None
    t = (surface.plane_offset - a @ n) / denom
    if not (1e-12 < t < 1.0 - 1e-12):
        return None
    return a + t * (b - a)


def _blocked(accel: _Accel, pts: np.ndarray, seq) -> bool:
    """True if any segment of the path is occluded by a surface it does not reflect on."""
    n_seg = len(pts) - 1
    for i in range(n_seg):
        p0, p1 = pts[i], pts[i + 1]
        start_surf = seq[i - 1] if i >= 1 else None
        end_surf = seq[i] if i < len(seq) else None
        d = p1 - p0
        denom = accel.normals @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (accel.offsets - accel.normals @ p0) / denom
        candidates = np.nonzero((np.abs(denom) > 1e-15) & (t > 0.0) & (t < 1.0))[0]
        if candidates.size == 0:
            continue
        seg_len = np.linalg.norm(d)
        for idx in candidates:
            surf = accel.surfaces[idx]
            if surf is start_surf or surf is end_surf:
                continue
            ti = t[idx]
            # hits within the endpoint guard are the path's own touch points
            if ti * seg_len < _ENDPOINT_GUARD or (1.0 - ti) * seg_len < _ENDPOINT_GUARD:
                continue
            if surf.contains(p0 + ti * d):
                return True
    return False


def _direction_angles(pose: Pose, direction: np.ndarray) -> tuple:
    d = pose.to_local(_unit(direction))
    az = math.atan2(d[1], d[0])
    el = math.asin(min(1.0, max(-1.0, float(d[2]))))
    return (az, el)


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length direction")
    return v / n
