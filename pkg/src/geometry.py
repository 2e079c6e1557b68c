"""Meshes, analytic implicit primitives and mesh-backed field queries.

All coordinates are unit-cube normalized: pipeline shapes live in
[-0.5, 0.5]^3 and probe points may reach the padded cube [-0.6, 0.6]^3.
Field queries are vectorized over an ``(N, 3)`` array of points and return
``(occ, sdf, nf)`` arrays of shapes ``(N,)``, ``(N,)`` and ``(N, 3)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import trimesh
from scipy.spatial.transform import Rotation

from .errors import EmptyMeshError, OpenMeshError

logger = logging.getLogger(__name__)

UNIT_HALF_EXTENT = 0.5
PADDED_HALF_EXTENT = 0.6
BOUNDARY_EPS = 1e-9

FieldArrays = Tuple[np.ndarray, np.ndarray, np.ndarray]


def as_points(points: Any) -> np.ndarray:
    """Coerce a point or list of points to a float64 ``(N, 3)`` array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"Expected points of shape (N, 3), got {arr.shape}")
    return arr


def normalize_vectors(vectors: np.ndarray, fallback: Optional[np.ndarray] = None) -> np.ndarray:
    """Normalize rows to unit length; zero rows get ``fallback`` (default +z)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if fallback is None:
        fallback = np.array([0.0, 0.0, 1.0])
    safe = np.where(norms > 1e-12, norms, 1.0)
    return np.where(norms > 1e-12, vectors / safe, fallback)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix drawn from ``rng``."""
    return Rotation.random(None, rng).as_matrix()


def rotation_about_z(quarter_turns: int) -> np.ndarray:
    """Rotation by ``quarter_turns`` * 90 degrees about the up (z) axis."""
    return Rotation.from_euler("z", 90.0 * quarter_turns, degrees=True).as_matrix()


@dataclass
class TriangleMesh:
    """Indexed triangle mesh."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError(
                f"Triangle indices out of range for {len(self.vertices)} vertices"
            )

    @classmethod
    def empty(cls) -> "TriangleMesh":
        """Mesh with no vertices and no triangles."""
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        """True when the mesh has no triangles."""
        return len(self.triangles) == 0

    @property
    def bounds(self) -> np.ndarray:
        """``(2, 3)`` array of the minimum and maximum corner."""
        if len(self.vertices) == 0:
            raise EmptyMeshError("Mesh has no vertices")
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def corners(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-triangle corner positions ``(a, b, c)``, each ``(F, 3)``."""
        tri = self.vertices[self.triangles]
        return tri[:, 0], tri[:, 1], tri[:, 2]

    def face_normals(self) -> np.ndarray:
        """Unit face normals (zero rows for zero-area triangles)."""
        a, b, c = self.corners()
        cross = np.cross(b - a, c - a)
        norms = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, norms, out=np.zeros_like(cross), where=norms > 0)

    def face_areas(self) -> np.ndarray:
        """Area of every triangle."""
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def cleaned(self, area_eps: float = 1e-14) -> "TriangleMesh":
        """Drop degenerate triangles and unreferenced vertices."""
        if self.is_empty:
            return TriangleMesh.empty()
        tri = self.triangles
        distinct = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
        keep = distinct & (self.face_areas() > area_eps)
        tri = tri[keep]
        if len(tri) == 0:
            return TriangleMesh.empty()
        used, inverse = np.unique(tri.ravel(), return_inverse=True)
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3))

    def transformed(self, scale: float = 1.0, offset: Any = (0.0, 0.0, 0.0),
                    rotation: Optional[np.ndarray] = None) -> "TriangleMesh":
        """Apply ``v -> R (v - offset) * scale``."""
        verts = (self.vertices - np.asarray(offset, dtype=np.float64)) * scale
        if rotation is not None:
            verts = verts @ np.asarray(rotation).T
        return TriangleMesh(verts, self.triangles.copy())

    def to_trimesh(self) -> trimesh.Trimesh:
        """The same mesh as an unprocessed ``trimesh.Trimesh``."""
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, process=False)

    def is_closed(self) -> bool:
        """True iff every edge is shared by exactly two triangles."""
        if self.is_empty:
            return False
        return bool(self.to_trimesh().is_watertight)

    def volume(self) -> float:
        """Enclosed volume (0 for an empty mesh)."""
        if self.is_empty:
            return 0.0
        return float(self.to_trimesh().volume)

    def sample_surface(self, count: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Area-weighted surface samples and the normal of the face each lies on."""
        if self.is_empty:
            raise EmptyMeshError("Cannot sample the surface of an empty mesh")
        points, face_index = trimesh.sample.sample_surface(self.to_trimesh(), count, seed=seed)
        return np.asarray(points, dtype=np.float64), self.face_normals()[face_index]

    def surface_distance(self, points: Any) -> np.ndarray:
        """Unsigned distance from each point to the nearest point on the surface."""
        if self.is_empty:
            raise EmptyMeshError("Cannot measure distance to an empty mesh")
        _, dist, _ = trimesh.proximity.closest_point(self.to_trimesh(), as_points(points))
        return np.asarray(dist, dtype=np.float64)

    def submesh(self, face_mask: np.ndarray) -> "TriangleMesh":
        """Mesh made of the selected faces only."""
        tri = self.triangles[np.asarray(face_mask, dtype=bool)]
        if len(tri) == 0:
            return TriangleMesh.empty()
        used, inverse = np.unique(tri.ravel(), return_inverse=True)
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3))


_PRIMITIVE_PARAMS = {
    "sphere": ("radius",),
    "box": ("hx", "hy", "hz"),
    "cylinder": ("radius", "half_height"),
    "torus": ("major_radius", "minor_radius"),
    "superellipsoid": ("ax", "ay", "az", "e1", "e2"),
    "half-space": (),
}


@dataclass
class AnalyticPrimitive:
    """Implicit primitive with a rigid pose.

    The local frame is mapped to world space by ``p = R q + t``. The half-space
    occupies local ``z < 0``; cylinders and tori are aligned with local z.
    """

    kind: str
    params: Dict[str, float] = field(default_factory=dict)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in _PRIMITIVE_PARAMS:
            raise ValueError(
                f"Unknown primitive kind {self.kind!r}. Known kinds: {sorted(_PRIMITIVE_PARAMS)}"
            )
        required = _PRIMITIVE_PARAMS[self.kind]
        missing = [name for name in required if name not in self.params]
        if missing:
            raise ValueError(f"Primitive {self.kind} is missing parameters {missing}")
        for name in required:
            if not float(self.params[name]) > 0:
                raise ValueError(
                    f"Primitive {self.kind} parameter {name} must be strictly positive, "
                    f"got {self.params[name]}"
                )
        self.params = {name: float(self.params[name]) for name in required}
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnalyticPrimitive":
        return cls(
            kind=data["kind"],
            params=dict(data.get("params", {})),
            rotation=np.asarray(data.get("rotation", np.eye(3).tolist())),
            translation=np.asarray(data.get("translation", [0.0, 0.0, 0.0])),
        )


def _box_local(q: np.ndarray, half: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = np.abs(q) - half
    outside = np.maximum(d, 0.0)
    out_len = np.linalg.norm(outside, axis=1)
    sdf = out_len + np.minimum(d.max(axis=1), 0.0)
    signs = np.where(q >= 0, 1.0, -1.0)
    out_normal = signs * outside / np.where(out_len > 0, out_len, 1.0)[:, None]
    axis = d.argmax(axis=1)
    in_normal = np.zeros_like(q)
    in_normal[np.arange(len(q)), axis] = signs[np.arange(len(q)), axis]
    normal = np.where((out_len > 0)[:, None], out_normal, in_normal)
    return sdf, normal


def _radial(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    r_xy = np.linalg.norm(q[:, :2], axis=1)
    radial = np.zeros_like(q)
    radial[:, 0] = 1.0
    nonzero = r_xy > 1e-12
    radial[nonzero, :2] = q[nonzero, :2] / r_xy[nonzero, None]
    return r_xy, radial


def _cylinder_local(q: np.ndarray, radius: float, half_height: float):
    r_xy, radial = _radial(q)
    z_sign = np.where(q[:, 2] >= 0, 1.0, -1.0)
    d0 = r_xy - radius
    d1 = np.abs(q[:, 2]) - half_height
    o0, o1 = np.maximum(d0, 0.0), np.maximum(d1, 0.0)
    out_len = np.hypot(o0, o1)
    sdf = out_len + np.minimum(np.maximum(d0, d1), 0.0)
    axial = np.zeros_like(q)
    axial[:, 2] = z_sign
    out_normal = radial * o0[:, None] + axial * o1[:, None]
    in_normal = np.where((d0 > d1)[:, None], radial, axial)
    normal = np.where((out_len > 0)[:, None], out_normal, in_normal)
    return sdf, normalize_vectors(normal)


def _torus_local(q: np.ndarray, major: float, minor: float):
    r_xy, radial = _radial(q)
    ring = r_xy - major
    length = np.hypot(ring, q[:, 2])
    sdf = length - minor
    normal = radial * ring[:, None]
    normal[:, 2] += q[:, 2]
    return sdf, normalize_vectors(normal, fallback=np.array([1.0, 0.0, 0.0]))


def _superellipsoid_sdf(q: np.ndarray, p: Dict[str, float]) -> np.ndarray:
    # Scaled inside-outside function; not a metric distance.
    x = np.abs(q[:, 0] / p["ax"]) ** (2.0 / p["e2"])
    y = np.abs(q[:, 1] / p["ay"]) ** (2.0 / p["e2"])
    z = np.abs(q[:, 2] / p["az"]) ** (2.0 / p["e1"])
    f = (x + y) ** (p["e2"] / p["e1"]) + z
    return (f ** (p["e1"] / 2.0) - 1.0) * min(p["ax"], p["ay"], p["az"])


def _superellipsoid_local(q: np.ndarray, params: Dict[str, float]):
    sdf = _superellipsoid_sdf(q, params)
    h = 1e-5
    grad = np.zeros_like(q)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[:, axis] = (
            _superellipsoid_sdf(q + step, params) - _superellipsoid_sdf(q - step, params)
        ) / (2 * h)
    return sdf, normalize_vectors(grad)


def primitive_field(prim: AnalyticPrimitive, points: Any) -> FieldArrays:
    """Occupancy, signed distance and normal field of an analytic primitive.

    The SDF is exact for sphere, box, cylinder, torus and half-space. For the
    superellipsoid it is the scaled implicit function, which has the right
    zero set and sign but is not a metric distance. ``nf`` is the direction of
    the SDF gradient; at points where it is undefined (sphere centre) the
    local +z axis is used.

    Args:
        prim: The primitive.
        points: ``(N, 3)`` array (or a single point).

    Returns:
        ``(occ, sdf, nf)`` with ``occ = 1`` iff ``sdf < 0``.
    """
    pts = as_points(points)
    q = (pts - prim.translation) @ prim.rotation
    p = prim.params
    if prim.kind == "sphere":
        norm = np.linalg.norm(q, axis=1)
        sdf = norm - p["radius"]
        normal = normalize_vectors(q)
    elif prim.kind == "box":
        sdf, normal = _box_local(q, np.array([p["hx"], p["hy"], p["hz"]]))
    elif prim.kind == "cylinder":
        sdf, normal = _cylinder_local(q, p["radius"], p["half_height"])
    elif prim.kind == "torus":
        sdf, normal = _torus_local(q, p["major_radius"], p["minor_radius"])
    elif prim.kind == "superellipsoid":
        sdf, normal = _superellipsoid_local(q, p)
    else:
        sdf = q[:, 2].copy()
        normal = np.tile([0.0, 0.0, 1.0], (len(q), 1))
    nf = normal @ prim.rotation.T
    occ = (sdf < 0).astype(np.float64)
    return occ, sdf, nf


def cube_primitive(half_extent: float = PADDED_HALF_EXTENT) -> AnalyticPrimitive:
    """Axis-aligned cube centred at the origin."""
    return AnalyticPrimitive("box", {"hx": half_extent, "hy": half_extent, "hz": half_extent})


class MeshQuery:
    """Signed distance, occupancy and normal queries against a closed mesh.

    Distances come from trimesh's nearest-point query and the sign from its
    inside test. The normal is the direction from the nearest surface point
    to the query (flipped inside), which is the SDF gradient; points on the
    surface take the normal of the face they lie on.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.is_empty:
            raise EmptyMeshError("Mesh field requires a non-empty mesh")
        if not mesh.is_closed():
            raise OpenMeshError(
                f"Mesh with {len(mesh.triangles)} triangles is not closed; "
                f"every edge must be shared by exactly two triangles"
            )
        self.mesh = mesh
        self._trimesh = mesh.to_trimesh()
        self._proximity = trimesh.proximity.ProximityQuery(self._trimesh)
        self.face_normals = mesh.face_normals()

    def contains(self, points: Any) -> np.ndarray:
        """Inside test for each point."""
        return np.asarray(self._trimesh.contains(as_points(points)), dtype=bool)

    def nearest(self, points: Any) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest surface point, its distance and the face it lies on."""
        closest, dist, face = self._proximity.on_surface(as_points(points))
        return np.asarray(closest), np.asarray(dist), np.asarray(face)

    def evaluate(self, points: Any) -> FieldArrays:
        pts = as_points(points)
        closest, dist, face = self.nearest(pts)
        inside = self.contains(pts)
        sign = np.where(inside, -1.0, 1.0)
        sdf = sign * dist
        away = (pts - closest) * sign[:, None]
        nf = np.where((dist > BOUNDARY_EPS)[:, None],
                      normalize_vectors(away), self.face_normals[face])
        occ = (inside & (dist > BOUNDARY_EPS)).astype(np.float64)
        return occ, sdf, nf


def mesh_field(mesh: TriangleMesh, points: Any) -> FieldArrays:
    """Occupancy, SDF and normal field of a closed mesh.

    Raises:
        OpenMeshError: If the mesh is not closed.
    """
    return MeshQuery(mesh).evaluate(points)


def normalize_to_unit_cube(mesh: TriangleMesh) -> Tuple[TriangleMesh, float, np.ndarray]:
    """Uniformly scale and centre a mesh so its bounding box fits [-0.5, 0.5]^3.

    Returns:
        ``(normalized_mesh, scale, offset)`` with ``v' = (v - offset) * scale``.

    Raises:
        EmptyMeshError: If the mesh has no vertices or zero extent.
    """
    if len(mesh.vertices) == 0:
        raise EmptyMeshError("Cannot normalize an empty mesh")
    lo, hi = mesh.bounds
    extent = float((hi - lo).max())
    if extent <= 0:
        raise EmptyMeshError("Cannot normalize a mesh with zero extent")
    offset = (lo + hi) / 2.0
    scale = 1.0 / extent
    return mesh.transformed(scale=scale, offset=offset), scale, offset
