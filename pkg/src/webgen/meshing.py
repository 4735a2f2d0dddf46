"""Graph to printable surface: capsule-union distance field, box smoothing,
marching cubes and binary STL.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from skimage import measure

from .graph import Graph

log = logging.getLogger(__name__)

STRUT_RADIUS = 4e-4  # metres
DEFAULT_RESOLUTION = 200  # voxels along the longest bounding dimension
STL_HEADER = b"webgen binary STL".ljust(80, b"\0")
STL_RECORD = np.dtype([("normal", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")])


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class ScalarField:
    values: np.ndarray  # [nx, ny, nz]
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError(f"field needs at least 2 samples per axis, got {self.values.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def points(self) -> np.ndarray:
        """Grid-point coordinates, shape dims + (3,)."""
        axes = [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # [V, 3] float64
    triangles: np.ndarray  # [F, 3] int64, counter-clockwise seen from outside

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]


def segment_distance(p, a, b) -> np.ndarray:
    """Distance from points ``p[..., 3]`` to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    ap = p - a
    t = np.clip((ap @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(p.shape[:-1])
    return np.linalg.norm(ap - t[..., None] * ab, axis=-1)


def sdf_points(g: Graph, p, radius: float = STRUT_RADIUS) -> np.ndarray:
    """Exact capsule-union distance at arbitrary probes."""
    if g.n_edges == 0:
        raise MeshError("cannot build a distance field for a graph without edges")
    p = np.asarray(p, dtype=np.float64)
    d = np.full(p.shape[:-1], np.inf)
    for a, b in g.edges:
        np.minimum(d, segment_distance(p, g.positions[a], g.positions[b]), out=d)
    return d - radius


def web_sdf(g: Graph, radius: float = STRUT_RADIUS, resolution: int = DEFAULT_RESOLUTION,
            pad: float = 3.0, spacing: float | None = None) -> ScalarField:
    """Sample the capsule union on a grid padded by ``pad`` radii.

    Each strut only touches voxels within ``pad`` radii of its surface, so the
    stored value is min(exact distance, pad * radius): exact near the surface
    and clamped far from it.
    """
    if g.n_edges == 0:
        raise MeshError("cannot build a distance field for a graph without edges")
    if pad < 3.0:
        raise ValueError("bounding box must be padded by at least 3 radii")
    used = np.unique(g.edges)
    lo = g.positions[used].min(axis=0) - pad * radius
    hi = g.positions[used].max(axis=0) + pad * radius
    if spacing is None:
        spacing = float(np.max(hi - lo)) / resolution
    dims = np.maximum(np.ceil((hi - lo) / spacing).astype(int) + 1, 2)
    band = pad * radius
    reach = band + radius  # centerline distance at which the field reaches the clamp
    vals = np.full(tuple(dims), band)
    for a, b in g.edges:
        pa, pb = g.positions[a], g.positions[b]
        i0 = np.maximum(np.floor((np.minimum(pa, pb) - lo - reach) / spacing).astype(int), 0)
        i1 = np.minimum(np.ceil((np.maximum(pa, pb) - lo + reach) / spacing).astype(int) + 1, dims)
        axes = [lo[k] + spacing * np.arange(i0[k], i1[k]) for k in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        sl = tuple(slice(i0[k], i1[k]) for k in range(3))
        np.minimum(vals[sl], np.minimum(segment_distance(pts, pa, pb) - radius, band), out=vals[sl])
    return ScalarField(vals, lo, float(spacing))


def smooth(field: ScalarField, passes: int = 2) -> ScalarField:
    """``passes`` rounds of a 3x3x3 box filter (edge values replicated at the border)."""
    if passes < 0:
        raise ValueError("passes must be non-negative")
    v = field.values
    for _ in range(passes):
        v = uniform_filter(v, size=3, mode="nearest")
    return ScalarField(v, field.origin, field.spacing)


def _signed_volume(v: np.ndarray, f: np.ndarray) -> float:
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c)))) / 6.0


def clean(mesh: TriMesh, tol: float = 1e-9) -> TriMesh:
    """Merge vertices closer than ``tol`` (grid snap), drop degenerate and unused."""
    if mesh.n_triangles == 0:
        return mesh
    key = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    tri = inv.reshape(-1)[mesh.triangles]
    v = mesh.vertices[first]
    ok = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
    area2 = np.linalg.norm(np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]]), axis=1)
    ok &= area2 > 0
    tri = tri[ok]
    used, tri = np.unique(tri, return_inverse=True)
    return TriMesh(v[used], tri.reshape(-1, 3).astype(np.int64))


def marching_cubes(field: ScalarField, iso: float = 0.0) -> TriMesh:
    """Iso-surface with faces oriented toward larger field values."""
    vals = field.values
    if not np.all(np.isfinite(vals)):
        raise MeshError("field contains non-finite values")
    if not (vals.min() < iso < vals.max()):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(vals, level=iso, spacing=(field.spacing,) * 3,
                                                method="lewiner")
    mesh = clean(TriMesh(verts.astype(np.float64) + field.origin, faces.astype(np.int64)))
    if mesh.n_triangles and _signed_volume(mesh.vertices, mesh.triangles) < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, ::-1].copy())
    return mesh


def mesh_edges(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and how many triangles use each."""
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def is_watertight(mesh: TriMesh) -> bool:
    return mesh.n_triangles > 0 and bool(np.all(mesh_edges(mesh)[1] == 2))


def euler_characteristic(mesh: TriMesh) -> int:
    return len(mesh.vertices) - len(mesh_edges(mesh)[0]) + mesh.n_triangles


def surface_area(mesh: TriMesh) -> float:
    c = mesh.corners()
    return float(np.sum(np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)) / 2.0)


def face_normals(corners: np.ndarray) -> np.ndarray:
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, ln, out=np.zeros_like(n), where=ln > 0)


def export_stl(mesh: TriMesh, path) -> None:
    c = mesh.corners()
    rec = np.zeros(mesh.n_triangles, dtype=STL_RECORD)
    rec["normal"] = face_normals(c)
    rec["v"] = c
    with open(path, "wb") as fh:
        fh.write(STL_HEADER)
        fh.write(struct.pack("<I", mesh.n_triangles))
        fh.write(rec.tobytes())


def parse_stl(path) -> TriMesh:
    """Read binary STL; identical corner coordinates become one vertex."""
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise MeshError(f"{path}: too short for a binary STL ({len(data)} bytes)")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + STL_RECORD.itemsize * n:
        raise MeshError(f"{path}: header announces {n} triangles but file holds {len(data) - 84} bytes")
    rec = np.frombuffer(data, dtype=STL_RECORD, count=n, offset=84)
    corners = rec["v"].reshape(-1, 3)
    verts, inv = np.unique(corners, axis=0, return_inverse=True)
    return TriMesh(verts.astype(np.float64), inv.reshape(-1, 3).astype(np.int64))


def mesh_graph(g: Graph, radius: float = STRUT_RADIUS, resolution: int = DEFAULT_RESOLUTION,
               passes: int = 2) -> TriMesh:
    """Full pipeline: distance field, smoothing, iso-surface."""
    field = smooth(web_sdf(g, radius, resolution), passes)
    if field.spacing > radius:
        log.warning("grid spacing %.3g exceeds strut radius %.3g; thin struts may vanish "
                    "(raise the resolution)", field.spacing, radius)
    mesh = marching_cubes(field)
    log.info("meshed %d edges into %d triangles on a %s grid", g.n_edges, mesh.n_triangles, field.dims)
    return mesh
