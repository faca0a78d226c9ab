"""Shared fixtures and independent oracle implementations.

The oracles below deliberately avoid the library's own vectorized code
paths: hashing is recomputed with plain Python integers, interpolation
with explicit corner loops, and ray casting with a linear scan over all
faces.  Tests compare the fast implementations against these.
"""

import numpy as np
import pytest

from mixrt.fields import HASH_PRIMES


def oracle_hash_index(coords, table_size):
    """Plain-integer spatial hash for a single integer coordinate triple."""
    h = 0
    for c, p in zip(coords, HASH_PRIMES):
        h ^= (int(c) * int(p)) & 0xFFFFFFFF
    return (h & 0xFFFFFFFF) & (int(table_size) - 1)


def oracle_dense_index(coords, resolution):
    x, y, z = (int(c) for c in coords)
    return x + int(resolution) * (y + int(resolution) * z)


def oracle_trilinear_gather(table, indexer, p_grid, resolution, feature_dim):
    """8-corner trilinear blend of table rows for one grid-space point.

    indexer(coords) -> row index; corner weights come from the axis
    fractions, product form.  The base cell is clamped so the stencil
    stays inside [0, resolution - 1]^3.
    """
    p = np.asarray(p_grid, dtype=np.float64)
    base = np.floor(p).astype(np.int64)
    base = np.clip(base, 0, resolution - 2)
    frac = p - base
    out = np.zeros(feature_dim, dtype=np.float64)
    for corner in range(8):
        offs = [(corner >> axis) & 1 for axis in range(3)]
        w = 1.0
        for axis in range(3):
            w *= frac[axis] if offs[axis] else 1.0 - frac[axis]
        row = indexer([base[a] + offs[a] for a in range(3)])
        out += w * np.asarray(table[row], dtype=np.float64)
    return out


def oracle_contract(p):
    p = np.asarray(p, dtype=np.float64)
    r = float(np.linalg.norm(p))
    if r <= 1.0:
        return p.copy()
    return (2.0 - 1.0 / r) * p / r


def oracle_ray_triangles(origin, direction, vertices, faces, t_min=1e-6):
    """Linear scan Moller-Trumbore over every face; returns (t, face) or None.

    Ties on t are broken toward the lowest face index, matching the
    library contract.
    """
    best = None
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    for fi, (i0, i1, i2) in enumerate(faces):
        v0 = np.asarray(vertices[i0], dtype=np.float64)
        e1 = np.asarray(vertices[i1], dtype=np.float64) - v0
        e2 = np.asarray(vertices[i2], dtype=np.float64) - v0
        pvec = np.cross(d, e2)
        det = float(np.dot(e1, pvec))
        if abs(det) < 1e-12:
            continue
        inv = 1.0 / det
        tvec = o - v0
        u = float(np.dot(tvec, pvec)) * inv
        if u < 0.0 or u > 1.0:
            continue
        qvec = np.cross(tvec, e1)
        v = float(np.dot(d, qvec)) * inv
        if v < 0.0 or u + v > 1.0:
            continue
        t = float(np.dot(e2, qvec)) * inv
        if t <= t_min:
            continue
        if best is None or (t, fi) < best:
            best = (t, fi)
    return best


def oracle_bilinear(image, u, v):
    """4-tap bilinear fetch at texel centers with edge clamp."""
    img = np.asarray(image, dtype=np.float64)
    res = img.shape[0]
    x = np.clip(u * res - 0.5, 0.0, res - 1.0)
    y = np.clip(v * res - 0.5, 0.0, res - 1.0)
    x0 = min(int(np.floor(x)), res - 2)
    y0 = min(int(np.floor(y)), res - 2)
    fx = x - x0
    fy = y - y0
    return ((1 - fx) * (1 - fy) * img[y0, x0]
            + fx * (1 - fy) * img[y0, x0 + 1]
            + (1 - fx) * fy * img[y0 + 1, x0]
            + fx * fy * img[y0 + 1, x0 + 1])


def oracle_composite(ts, sigmas, rgbs, background, last_interval=None):
    """Sequential front-to-back compositing for one ray."""
    ts = list(map(float, ts))
    n = len(ts)
    out = np.zeros(3, dtype=np.float64)
    transmittance = 1.0
    for k in range(n):
        if k + 1 < n:
            delta = ts[k + 1] - ts[k]
        elif last_interval is not None:
            delta = float(last_interval)
        elif n >= 2:
            delta = ts[-1] - ts[-2]
        else:
            delta = 0.0
        alpha = 1.0 - np.exp(-float(sigmas[k]) * delta)
        out += transmittance * alpha * np.asarray(rgbs[k], dtype=np.float64)
        transmittance *= np.exp(-float(sigmas[k]) * delta)
    return out + transmittance * np.asarray(background, dtype=np.float64)


def random_mesh(rng, num_vertices=40, num_faces=60, scale=1.0):
    """Random valid triangle soup used as a BVH stress input."""
    from mixrt.geometry import TriMesh

    positions = rng.uniform(-scale, scale, size=(num_vertices, 3))
    uvs = rng.uniform(0.0, 1.0, size=(num_vertices, 2))
    faces = np.zeros((num_faces, 3), dtype=np.int64)
    count = 0
    while count < num_faces:
        tri = rng.choice(num_vertices, size=3, replace=False)
        faces[count] = np.sort(tri)
        count += 1
    return TriMesh(positions=positions, uvs=uvs, indices=faces)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_field(rng):
    from mixrt.fields import HashGridConfig, HashGridField

    cfg = HashGridConfig(num_levels=2, table_size=2**10,
                         min_resolution=4, max_resolution=16,
                         feature_dim=4)
    return HashGridField.create(cfg, rng)
