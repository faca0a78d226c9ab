"""Triangle meshes, vertex-clustering simplification, and BVH ray casting.

The mesh is the coarse geometry proxy: indexed triangles with per-vertex
texture coordinates. Ray casting against a bounding-volume hierarchy stands in
for depth-tested rasterization on the CPU: the nearest positive hit wins, no
back-face culling. Meshes and hierarchies are immutable once built, so
intersection queries are safe to run from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import contract

# Hits closer than this are treated as self-intersections and skipped.
T_MIN = 1e-6
# Determinant cutoff for ray-parallel-to-triangle rejection.
DET_EPS = 1e-12

LEAF_SIZE = 8


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-vertex UVs in [0,1]^2."""

    positions: np.ndarray   # (V, 3) float64, world units
    uvs: np.ndarray         # (V, 2) float64
    indices: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (V, 3)")
        if self.uvs.shape != (len(self.positions), 2):
            raise ValueError("uvs must be (V, 2), matching positions")
        if self.indices.size and (self.indices.ndim != 2 or self.indices.shape[1] != 3):
            raise ValueError("indices must be (F, 3)")
        self.indices = self.indices.reshape(-1, 3)
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= len(self.positions):
                raise ValueError("face index out of range")
            f = self.indices
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face repeats a vertex")

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_faces(self) -> int:
        return len(self.indices)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.positions):
            raise ValueError("empty mesh has no bounds")
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def face_corners(self):
        """Vertex positions of every face as three (F, 3) arrays."""
        v = self.positions
        f = self.indices
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


@dataclass
class RayHit:
    """Nearest ray-mesh intersection with barycentric attributes."""

    t: float
    face: int
    barycentric: tuple[float, float, float]
    point: np.ndarray
    uv: np.ndarray


def cluster_vertices(mesh: TriMesh, voxel_size: float,
                     in_contracted_space: bool = False):
    """Group vertices by voxel and return (cluster centroids, vertex->cluster map).

    Voxel keys come from the (optionally contracted) positions; representatives
    are centroids of the members' world-space positions, so the output mesh
    stays in world space.
    """
    if mesh.num_vertices == 0:
        raise ValueError("cannot cluster an empty mesh")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    key_pos = contract(mesh.positions) if in_contracted_space else mesh.positions
    keys = np.floor(key_pos / voxel_size).astype(np.int64)
    _, mapping, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    mapping = mapping.reshape(-1)
    n_clusters = len(counts)
    centroids = np.zeros((n_clusters, 3))
    np.add.at(centroids, mapping, mesh.positions)
    centroids /= counts[:, None]
    return centroids, mapping


def propagate_uvs(original: TriMesh, clustered: TriMesh, mapping: np.ndarray) -> TriMesh:
    """Fill the clustered mesh's UVs by the representative-vertex rule.

    Each cluster takes the UV of its member closest to the cluster centroid;
    equidistant members resolve to the lowest original vertex index.
    """
    mapping = np.asarray(mapping, dtype=np.int64)
    if len(mapping) != original.num_vertices:
        raise ValueError("mapping must cover every original vertex")
    dist = np.linalg.norm(original.positions - clustered.positions[mapping], axis=1)
    # stable lexsort: primary cluster id, secondary distance, ties keep index order
    order = np.lexsort((dist, mapping))
    sorted_clusters = mapping[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_clusters[1:] != sorted_clusters[:-1]
    reps = np.empty(clustered.num_vertices, dtype=np.int64)
    reps[sorted_clusters[first]] = order[first]
    uvs = original.uvs[reps]
    return TriMesh(clustered.positions, uvs, clustered.indices)


def cluster_simplify(mesh: TriMesh, voxel_size: float,
                     in_contracted_space: bool = False) -> TriMesh:
    """Vertex-clustering mesh simplification.

    Vertices sharing a voxel merge into their centroid; faces are reindexed and
    faces that lose distinct corners are dropped. No hole filling.
    """
    centroids, mapping = cluster_vertices(mesh, voxel_size, in_contracted_space)
    faces = mapping[mesh.indices] if mesh.num_faces else mesh.indices.copy()
    if len(faces):
        keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) \
            & (faces[:, 0] != faces[:, 2])
        faces = faces[keep]
    skeleton = TriMesh(centroids, np.zeros((len(centroids), 2)), faces)
    return propagate_uvs(mesh, skeleton, mapping)


@dataclass
class BvhAccel:
    """Flattened median-split BVH over mesh faces.

    Internal nodes store child indices; leaves store a [start, start+count)
    span into ``order``, the permuted face-index list. Every face lives in
    exactly one leaf.
    """

    node_min: np.ndarray     # (N, 3)
    node_max: np.ndarray     # (N, 3)
    left: np.ndarray         # (N,) child index, -1 for leaves
    right: np.ndarray        # (N,)
    start: np.ndarray        # (N,) leaf face span start (leaves only)
    count: np.ndarray        # (N,) leaf face count, 0 for internal nodes
    order: np.ndarray        # (F,) permuted face indices

    @property
    def num_nodes(self) -> int:
        return len(self.node_min)


def build_bvh(mesh: TriMesh, leaf_size: int = LEAF_SIZE) -> BvhAccel:
    """Median-split BVH on the longest centroid axis."""
    if mesh.num_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    a, b, c = mesh.face_corners()
    fmin = np.minimum(np.minimum(a, b), c)
    fmax = np.maximum(np.maximum(a, b), c)
    centroids = (a + b + c) / 3.0

    node_min, node_max = [], []
    left, right, start, count = [], [], [], []
    order = np.arange(mesh.num_faces)

    # (node index, span lo, span hi); children patched in after allocation
    stack = [(0, 0, mesh.num_faces)]
    node_min.append(None); node_max.append(None)
    left.append(-1); right.append(-1); start.append(0); count.append(0)

    while stack:
        node, lo, hi = stack.pop()
        ids = order[lo:hi]
        node_min[node] = fmin[ids].min(axis=0)
        node_max[node] = fmax[ids].max(axis=0)
        if hi - lo <= leaf_size:
            start[node] = lo
            count[node] = hi - lo
            continue
        cent = centroids[ids]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(cent[:, axis], mid)
        if cent[part[0], axis] == cent[part[-1], axis]:
            # all centroids identical on every axis: give up and make a leaf
            start[node] = lo
            count[node] = hi - lo
            continue
        order[lo:hi] = ids[part]
        l_id = len(node_min)
        r_id = l_id + 1
        for _ in range(2):
            node_min.append(None); node_max.append(None)
            left.append(-1); right.append(-1); start.append(0); count.append(0)
        left[node] = l_id
        right[node] = r_id
        stack.append((l_id, lo, lo + mid))
        stack.append((r_id, lo + mid, hi))

    return BvhAccel(
        node_min=np.array(node_min), node_max=np.array(node_max),
        left=np.array(left, dtype=np.int64), right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64), count=np.array(count, dtype=np.int64),
        order=order,
    )


def _ray_tri(orig, dirs, v0, v1, v2):
    """Batched Moller-Trumbore; returns (t, u, v, valid) per pair."""
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(dirs, e2)
    det = np.sum(e1 * pvec, axis=-1)
    valid = np.abs(det) > DET_EPS
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    tvec = orig - v0
    u = np.sum(tvec * pvec, axis=-1) * inv
    qvec = np.cross(tvec, e1)
    v = np.sum(dirs * qvec, axis=-1) * inv
    t = np.sum(e2 * qvec, axis=-1) * inv
    valid &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > T_MIN)
    return t, u, v, valid


def _slab_test(orig, inv_dir, bmin, bmax):
    """Conservative ray/AABB overlap test (boundary-grazing rays count as hits)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (bmin - orig) * inv_dir
        t1 = (bmax - orig) * inv_dir
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    near = np.where(np.isnan(near), -np.inf, near)
    far = np.where(np.isnan(far), np.inf, far)
    tmin = near.max(axis=-1)
    tmax = far.min(axis=-1)
    return (tmax >= tmin) & (tmax > T_MIN), tmin


def _check_unit(dir: np.ndarray):
    n = np.linalg.norm(dir, axis=-1)
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise ValueError("ray direction must be unit length")


def _make_hit(mesh: TriMesh, face: int, t: float, u: float, v: float) -> RayHit:
    i0, i1, i2 = mesh.indices[face]
    w = 1.0 - u - v
    point = w * mesh.positions[i0] + u * mesh.positions[i1] + v * mesh.positions[i2]
    uv = w * mesh.uvs[i0] + u * mesh.uvs[i1] + v * mesh.uvs[i2]
    return RayHit(t=float(t), face=int(face), barycentric=(float(w), float(u), float(v)),
                  point=point, uv=uv)


def intersect(accel: BvhAccel, mesh: TriMesh, origin: np.ndarray, dir: np.ndarray,
              count_tests: bool = False):
    """Nearest positive ray-mesh hit through the BVH, or None on a miss.

    Ties at equal t resolve to the lowest face index, matching the brute-force
    convention. With count_tests, returns (hit, number of face tests).
    """
    origin = np.asarray(origin, dtype=np.float64)
    dir = np.asarray(dir, dtype=np.float64)
    _check_unit(dir)
    with np.errstate(divide="ignore"):
        inv_dir = 1.0 / dir

    best_t = np.inf
    best = None  # (t, face, u, v)
    tests = 0
    stack = [0]
    while stack:
        node = stack.pop()
        hit, tmin = _slab_test(origin, inv_dir, accel.node_min[node], accel.node_max[node])
        if not hit or tmin > best_t:
            continue
        if accel.count[node]:
            faces = accel.order[accel.start[node]:accel.start[node] + accel.count[node]]
            v0, v1, v2 = (mesh.positions[mesh.indices[faces, k]] for k in range(3))
            t, u, v, valid = _ray_tri(origin, dir, v0, v1, v2)
            tests += len(faces)
            for k in np.flatnonzero(valid):
                if best is None or (t[k], faces[k]) < (best[0], best[1]):
                    best = (float(t[k]), int(faces[k]), float(u[k]), float(v[k]))
                    best_t = best[0]
        else:
            stack.append(int(accel.left[node]))
            stack.append(int(accel.right[node]))

    hit = None if best is None else _make_hit(mesh, best[1], best[0], best[2], best[3])
    if count_tests:
        return hit, tests
    return hit


def intersect_batch(accel: BvhAccel, mesh: TriMesh, origins: np.ndarray,
                    dirs: np.ndarray):
    """Vectorized nearest-hit query for many rays at once.

    Returns a dict of arrays over rays: hit mask, t, face (-1 on miss),
    barycentric (w, u, v), point, uv. Results match the single-ray path
    exactly: the same intersection formula runs per (ray, face) pair and
    ties resolve by (t, face index).
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    _check_unit(dirs)
    n = len(origins)
    with np.errstate(divide="ignore"):
        inv_dirs = 1.0 / dirs

    cand_ray, cand_t, cand_face, cand_u, cand_v = [], [], [], [], []

    ray_ids = np.arange(n)
    ok, _ = _slab_test(origins, inv_dirs, accel.node_min[0], accel.node_max[0])
    frontier_ray = ray_ids[ok]
    frontier_node = np.zeros(len(frontier_ray), dtype=np.int64)

    while len(frontier_ray):
        is_leaf = accel.count[frontier_node] > 0
        # leaves: expand to (ray, face) pairs and run the triangle test
        if np.any(is_leaf):
            l_ray = frontier_ray[is_leaf]
            l_node = frontier_node[is_leaf]
            counts = accel.count[l_node]
            reps = np.repeat(np.arange(len(l_ray)), counts)
            offs = np.concatenate([np.arange(c) for c in counts]) if len(counts) else \
                np.empty(0, dtype=np.int64)
            faces = accel.order[accel.start[l_node][reps] + offs]
            rays = l_ray[reps]
            v0 = mesh.positions[mesh.indices[faces, 0]]
            v1 = mesh.positions[mesh.indices[faces, 1]]
            v2 = mesh.positions[mesh.indices[faces, 2]]
            t, u, v, valid = _ray_tri(origins[rays], dirs[rays], v0, v1, v2)
            if np.any(valid):
                cand_ray.append(rays[valid])
                cand_t.append(t[valid])
                cand_face.append(faces[valid])
                cand_u.append(u[valid])
                cand_v.append(v[valid])
        # internal nodes: descend into children that the ray's box test passes
        internal_ray = frontier_ray[~is_leaf]
        internal_node = frontier_node[~is_leaf]
        next_ray, next_node = [], []
        for child in (accel.left[internal_node], accel.right[internal_node]):
            ok, _ = _slab_test(origins[internal_ray], inv_dirs[internal_ray],
                               accel.node_min[child], accel.node_max[child])
            next_ray.append(internal_ray[ok])
            next_node.append(child[ok])
        frontier_ray = np.concatenate(next_ray) if next_ray else np.empty(0, np.int64)
        frontier_node = np.concatenate(next_node) if next_node else np.empty(0, np.int64)

    out = {
        "hit": np.zeros(n, dtype=bool),
        "t": np.full(n, np.inf),
        "face": np.full(n, -1, dtype=np.int64),
        "bary": np.zeros((n, 3)),
        "point": np.zeros((n, 3)),
        "uv": np.zeros((n, 2)),
    }
    if not cand_ray:
        return out
    rays = np.concatenate(cand_ray)
    ts = np.concatenate(cand_t)
    faces = np.concatenate(cand_face)
    us = np.concatenate(cand_u)
    vs = np.concatenate(cand_v)
    # nearest hit per ray, ties by lowest face index
    sel = np.lexsort((faces, ts, rays))
    rays, ts, faces, us, vs = rays[sel], ts[sel], faces[sel], us[sel], vs[sel]
    first = np.ones(len(rays), dtype=bool)
    first[1:] = rays[1:] != rays[:-1]
    rays, ts, faces, us, vs = rays[first], ts[first], faces[first], us[first], vs[first]

    ws = 1.0 - us - vs
    tri = mesh.indices[faces]
    point = (ws[:, None] * mesh.positions[tri[:, 0]]
             + us[:, None] * mesh.positions[tri[:, 1]]
             + vs[:, None] * mesh.positions[tri[:, 2]])
    uv = (ws[:, None] * mesh.uvs[tri[:, 0]]
          + us[:, None] * mesh.uvs[tri[:, 1]]
          + vs[:, None] * mesh.uvs[tri[:, 2]])
    out["hit"][rays] = True
    out["t"][rays] = ts
    out["face"][rays] = faces
    out["bary"][rays] = np.stack([ws, us, vs], axis=1)
    out["point"][rays] = point
    out["uv"][rays] = uv
    return out
