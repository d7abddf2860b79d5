"""Indoor environment model: convex planar surfaces with scalar reflection materials.

The scene is a flat list of convex polygons, each tagged with a material whose
single amplitude reflection coefficient conditions the multipath solver.
Scenes are loaded from a structured JSON document (schema below) and are
immutable after load.

Scene document schema (field names are part of the contract)::

    {
      "materials":    [{"name": str, "reflection_coeff": float}, ...],
      "surfaces":     [{"vertices": [[x, y, z], ...], "material": str}, ...],
      "bounds":       {"min": [x, y, z], "max": [x, y, z]},
      "floor_height": float
    }

All coordinates are in meters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Vertices farther than this from the surface plane make the surface invalid.
PLANARITY_TOL = 1e-9


class SceneError(ValueError):
    """Malformed scene document or invariant violation at load time."""


@dataclass(frozen=True)
class Material:
    name: str
    reflection_coeff: float


@dataclass(eq=False)
class Surface:
    """Convex planar polygon with an attached material.

    Vertices are ordered (either winding); consecutive vertices must not be
    collinear so the normal is well defined. Derived plane quantities are
    computed defensively: a degenerate vertex list leaves ``unit_normal`` as
    None instead of raising, so validation can still describe the defect.
    """

    vertices: np.ndarray
    material: Material
    name: str = ""
    unit_normal: np.ndarray | None = field(init=False, default=None, repr=False)
    plane_offset: float = field(init=False, default=0.0, repr=False)

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise SceneError(f"surface {self.name!r}: vertices must be an (n, 3) array")
        n = _newell_normal(self.vertices)
        if n is not None:
            self.unit_normal = n
            self.plane_offset = float(n @ self.vertices[0])

    def planarity_error(self) -> float:
        """Max point-to-plane distance against the plane of the first three vertices."""
        if len(self.vertices) < 3:
            return np.inf
        v0, v1, v2 = self.vertices[:3]
        n = np.cross(v1 - v0, v2 - v0)
        nn = np.linalg.norm(n)
        if nn == 0.0:
            return np.inf
        return float(np.max(np.abs((self.vertices - v0) @ (n / nn))))

    def has_collinear_run(self, tol: float = 1e-12) -> bool:
        v = self.vertices
        if len(v) < 3:
            return True
        for i in range(len(v)):
            a, b, c = v[i - 1], v[i], v[(i + 1) % len(v)]
            if np.linalg.norm(np.cross(b - a, c - b)) <= tol:
                return True
        return False

    def is_convex(self) -> bool:
        if self.unit_normal is None or len(self.vertices) < 3:
            return False
        v = self.vertices
        for i in range(len(v)):
            e1 = v[(i + 1) % len(v)] - v[i]
            e2 = v[(i + 2) % len(v)] - v[(i + 1) % len(v)]
            if np.cross(e1, e2) @ self.unit_normal < -1e-12:
                return False
        return True

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        """True if a point on the surface plane lies inside the polygon (edges included)."""
        n = self.unit_normal
        if n is None:
            return False
        v = self.vertices
        for i in range(len(v)):
            edge = v[(i + 1) % len(v)] - v[i]
            if np.cross(edge, point - v[i]) @ n < -tol:
                return False
        return True


@dataclass(eq=False)
class Scene:
    surfaces: list[Surface]
    materials: dict[str, Material]
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    floor_height: float = 0.0

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float)


def load_scene(source) -> Scene:
    """Load and validate a scene from a JSON file path, JSON text, or parsed mapping.

    Raises SceneError on parse failure, unknown material references, or any
    type-invariant violation (non-planar surfaces, out-of-range coefficients,
    surfaces outside bounds, empty scenes).
    """
    doc = _read_document(source)
    scene = _scene_from_document(doc)
    violations = validate_scene(scene)
    if violations:
        raise SceneError("; ".join(violations))
    return scene


def _read_document(source) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, Path) or (isinstance(source, str) and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = str(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    return doc


def _scene_from_document(doc: dict) -> Scene:
    for key in ("materials", "surfaces", "bounds", "floor_height"):
        if key not in doc:
            raise SceneError(f"scene document missing key {key!r}")

    materials: dict[str, Material] = {}
    for entry in doc["materials"]:
        try:
            mat = Material(name=str(entry["name"]), reflection_coeff=float(entry["reflection_coeff"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"malformed material entry {entry!r}") from exc
        if mat.name in materials:
            raise SceneError(f"duplicate material name {mat.name!r}")
        materials[mat.name] = mat

    surfaces = []
    for i, entry in enumerate(doc["surfaces"]):
        try:
            mat_name = entry["material"]
            vertices = np.asarray(entry["vertices"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"malformed surface entry #{i}") from exc
        if mat_name not in materials:
            raise SceneError(f"surface #{i} references unknown material {mat_name!r}")
        surfaces.append(Surface(vertices=vertices, material=materials[mat_name], name=f"surface#{i}"))

    bounds = doc["bounds"]
    try:
        bmin = np.asarray(bounds["min"], dtype=float).reshape(3)
        bmax = np.asarray(bounds["max"], dtype=float).reshape(3)
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError("malformed bounds") from exc

    return Scene(
        surfaces=surfaces,
        materials=materials,
        bounds_min=bmin,
        bounds_max=bmax,
        floor_height=float(doc["floor_height"]),
    )


def validate_scene(scene: Scene) -> list[str]:
    """Return violation descriptors for every broken invariant (empty list = valid)."""
    violations: list[str] = []

    for mat in scene.materials.values():
        if not mat.name:
            violations.append("material with empty name")
        if not (0.0 <= mat.reflection_coeff <= 1.0):
            violations.append(
                f"material {mat.name!r}: reflection_coeff {mat.reflection_coeff} outside [0, 1]"
            )

    if not scene.surfaces:
        violations.append("scene has no surfaces")

    if np.any(scene.bounds_max < scene.bounds_min):
        violations.append("bounds max < min")

    for surf in scene.surfaces:
        label = surf.name or "surface"
        if len(surf.vertices) < 3:
            violations.append(f"{label}: fewer than 3 vertices")
            continue
        if surf.planarity_error() > PLANARITY_TOL:
            violations.append(f"{label}: vertices not coplanar within {PLANARITY_TOL} m")
        if surf.has_collinear_run():
            violations.append(f"{label}: consecutive vertices collinear")
        elif not surf.is_convex():
            violations.append(f"{label}: polygon not convex")
        if surf.material.name not in scene.materials:
            violations.append(f"{label}: material {surf.material.name!r} not in scene materials")
        if not (0.0 <= surf.material.reflection_coeff <= 1.0):
            violations.append(f"{label}: material coefficient outside [0, 1]")
        lo = scene.bounds_min - 1e-9
        hi = scene.bounds_max + 1e-9
        if np.any(surf.vertices < lo) or np.any(surf.vertices > hi):
            violations.append(f"{label}: vertices outside scene bounds")

    if not (scene.bounds_min[2] - 1e-9 <= scene.floor_height <= scene.bounds_max[2] + 1e-9):
        violations.append("floor_height outside bounds")

    return violations


def floor_grid(scene: Scene, spacing: float, height: float) -> np.ndarray:
    """Row-major lattice over the floor footprint of the scene bounds.

    Points are ordered with x varying fastest; per axis the count is
    floor(extent / spacing) + 1 (a small slack absorbs float division dust).
    """
    if spacing <= 0.0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    if not (scene.bounds_min[2] - 1e-9 <= height <= scene.bounds_max[2] + 1e-9):
        raise ValueError(f"height {height} outside scene bounds")
    x0, y0 = scene.bounds_min[:2]
    lx = scene.bounds_max[0] - x0
    ly = scene.bounds_max[1] - y0
    nx = int(np.floor(lx / spacing + 1e-9)) + 1
    ny = int(np.floor(ly / spacing + 1e-9)) + 1
    xs = x0 + spacing * np.arange(nx)
    ys = y0 + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)  # rows indexed by y, x fastest within a row
    points = np.column_stack([gx.ravel(), gy.ravel(), np.full(nx * ny, float(height))])
    return points


def serialize_scene(scene: Scene) -> dict:
    """Inverse of load_scene: emit the scene document mapping."""
    return {
        "materials": [
            {"name": m.name, "reflection_coeff": m.reflection_coeff}
            for m in scene.materials.values()
        ],
        "surfaces": [
            {"vertices": s.vertices.tolist(), "material": s.material.name}
            for s in scene.surfaces
        ],
        "bounds": {"min": scene.bounds_min.tolist(), "max": scene.bounds_max.tolist()},
        "floor_height": scene.floor_height,
    }


def scene_hash(scene: Scene) -> str:
    """Deterministic content hash, used as a stale-database guard."""
    canon = json.dumps(serialize_scene(scene), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _newell_normal(vertices: np.ndarray) -> np.ndarray | None:
    if len(vertices) < 3:
        return None
    v = vertices
    rolled = np.roll(v, -1, axis=0)
    n = np.array([
        np.sum((v[:, 1] - rolled[:, 1]) * (v[:, 2] + rolled[:, 2])),
        np.sum((v[:, 2] - rolled[:, 2]) * (v[:, 0] + rolled[:, 0])),
        np.sum((v[:, 0] - rolled[:, 0]) * (v[:, 1] + rolled[:, 1])),
    ])
    norm = np.linalg.norm(n)
    if norm < 1e-15:
        return None
    return n / norm
