"""Seeded synthetic scenes: meshes, cameras, and analytic ground-truth views.

Three generators, all fully deterministic from a seed:

    tri       one triangle with a constant color, 4 train + 1 test views
    box-room  a closed tessellated box seen from inside, procedural wall
              colors plus view-dependent ground-truth displacement
    sphere    an icosphere orbit scene (no displacement), handy for
              simplification and hit-coverage tests

A dataset directory holds mesh.glb, cameras.json, and 8-bit PNG views; the
camera manifest records intrinsics and world-from-camera poses.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .assets import float_image_to_png, png_to_float_image
from .displacement import DisplacementMaps, displacement_vector
from .geometry import TriMesh, build_bvh, intersect_batch
from .meshio import load_glb, save_glb
from .renderer import Camera, Image, camera_rays

DATASET_FORMAT = "mixrt-dataset/1"

BOX_HALF_EXTENT = 0.6
BOX_SUBDIV = 48
ISLAND_PAD = 0.04


def look_rotation(forward: np.ndarray, up_ref=None) -> np.ndarray:
    """World-from-camera rotation for a camera looking along ``forward``."""
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    if up_ref is None:
        up_ref = np.array([0.0, 0.0, 1.0])
        if abs(f @ up_ref) > 0.9:
            up_ref = np.array([0.0, 1.0, 0.0])
    x = np.cross(f, up_ref)
    x /= np.linalg.norm(x)
    z = -f
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def fibonacci_directions(n: int) -> np.ndarray:
    """n roughly uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def wall_pattern(p: np.ndarray) -> np.ndarray:
    """Smooth procedural color field over world positions -> rgb in [0,1]."""
    p = np.asarray(p, dtype=np.float64)
    u1 = np.array([0.8, 0.5, 0.33])
    u2 = np.array([-0.4, 0.9, 0.6])
    u3 = np.array([0.55, -0.35, 0.95])
    r = 0.5 + 0.21 * np.sin(4.1 * (p @ u1) + 0.7)
    g = 0.5 + 0.21 * np.sin(3.7 * (p @ u2) + 2.1)
    b = 0.5 + 0.21 * np.sin(4.6 * (p @ u3) + 4.0)
    fine = 0.05 * np.sin(9.3 * (p @ np.array([1.1, 0.9, -0.7])) + 1.3)
    return np.clip(np.stack([r + fine, g + fine, b + fine], axis=-1), 0.0, 1.0)


def box_room_mesh(half_extent: float = BOX_HALF_EXTENT,
                  subdiv: int = BOX_SUBDIV) -> TriMesh:
    """Closed axis-aligned box tessellated into subdiv^2 cells per wall.

    Every triangle gets its own three vertices (no sharing), which is what a
    raw triangle-soup export looks like and gives vertex clustering real work.
    UVs pack the six walls as 3x2 atlas islands with a small border.
    """
    h = half_extent
    lines = np.linspace(-h, h, subdiv + 1)
    positions, uvs = [], []
    for wall in range(6):
        axis = wall // 2
        sign = 1.0 if wall % 2 == 0 else -1.0
        b_axis, c_axis = [a for a in range(3) if a != axis]
        u0 = (wall % 3) / 3.0
        v0 = (wall // 3) / 2.0
        for i in range(subdiv):
            for j in range(subdiv):
                corners = []
                for (di, dj) in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = np.zeros(3)
                    p[axis] = sign * h
                    p[b_axis] = lines[i + di]
                    p[c_axis] = lines[j + dj]
                    s = (i + di) / subdiv
                    t = (j + dj) / subdiv
                    uv = (u0 + (ISLAND_PAD + s * (1 - 2 * ISLAND_PAD)) / 3.0,
                          v0 + (ISLAND_PAD + t * (1 - 2 * ISLAND_PAD)) / 2.0)
                    corners.append((p, uv))
                for tri in ((0, 1, 2), (0, 2, 3)):
                    for k in tri:
                        positions.append(corners[k][0])
                        uvs.append(corners[k][1])
    positions = np.array(positions)
    indices = np.arange(len(positions), dtype=np.int64).reshape(-1, 3)
    return TriMesh(positions, np.array(uvs), indices)


def box_room_gt_maps(rng: np.random.Generator, resolution: int = 256) -> DisplacementMaps:
    """Ground-truth degree-1 displacement textures with smooth random content.

    The degree-1 coefficients dominate, so the offset genuinely depends on the
    view direction; the scale stays small enough that displaced points remain
    near the walls.
    """
    maps = DisplacementMaps.zeros(resolution, 1)
    r = resolution
    centers = (np.arange(r) + 0.5) / r
    uu, vv = np.meshgrid(centers, centers, indexing="xy")
    amp = np.array([0.08, 0.5, 0.5, 0.5])   # per SH coefficient index
    for axis in range(3):
        for k in range(4):
            fu, fv = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0.0, 2 * np.pi)
            maps.sh_map[:, :, axis * 4 + k] = amp[k] * np.sin(
                2 * np.pi * (fu * uu + fv * vv) + phase)
    phase = rng.uniform(0.0, 2 * np.pi)
    maps.scale_map[:, :, 0] = 0.05 * (0.6 + 0.4 * np.sin(
        2 * np.pi * (uu + vv) + phase))
    return maps


def render_ground_truth(mesh: TriMesh, camera: Camera, color_fn,
                        gt_maps: DisplacementMaps | None,
                        background, accel=None) -> Image:
    """Analytic reference image: cast rays, displace hits, evaluate the color field."""
    accel = accel or build_bvh(mesh)
    origins, dirs = camera_rays(camera)
    res = intersect_batch(accel, mesh, origins, dirs)
    pixels = np.broadcast_to(np.asarray(background, dtype=np.float64),
                             (len(dirs), 3)).copy()
    mask = res["hit"]
    if np.any(mask):
        pts = res["point"][mask]
        if gt_maps is not None:
            pts = pts + displacement_vector(gt_maps, res["uv"][mask], dirs[mask])
        pixels[mask] = color_fn(pts)
    return Image(pixels.reshape(camera.height, camera.width, 3))


def _camera_json(camera: Camera, image_name: str) -> dict:
    return {
        "image": image_name,
        "width": camera.width,
        "height": camera.height,
        "focal": float(camera.focal),
        "principal": [float(camera.principal[0]), float(camera.principal[1])],
        "position": [float(v) for v in camera.position],
        "rotation": [[float(v) for v in row] for row in camera.rotation],
    }


def _camera_from_json(view: dict) -> Camera:
    return Camera(position=np.array(view["position"]),
                  rotation=np.array(view["rotation"]),
                  focal=view["focal"], width=view["width"],
                  height=view["height"],
                  principal=tuple(view["principal"]))


def save_dataset(out_dir, mesh: TriMesh, train, test, background) -> dict:
    """Write mesh.glb, cameras.json, and one PNG per (Camera, Image) view."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_glb(mesh, out / "mesh.glb")
    manifest = {"format": DATASET_FORMAT, "mesh": "mesh.glb",
                "background": [float(c) for c in background],
                "train": [], "test": []}
    for split, views in (("train", train), ("test", test)):
        for i, (camera, image) in enumerate(views):
            name = f"{split}_{i:03d}.png"
            float_image_to_png(out / name, image.pixels)
            manifest[split].append(_camera_json(camera, name))
    (out / "cameras.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return {"out": str(out), "train_views": len(manifest["train"]),
            "test_views": len(manifest["test"]),
            "vertices": mesh.num_vertices, "faces": mesh.num_faces}


def load_dataset(path) -> dict:
    """Read a dataset directory back: mesh, (Camera, Image) splits, background."""
    root = Path(path)
    manifest = json.loads((root / "cameras.json").read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"unknown dataset format: {manifest.get('format')!r}")
    mesh = load_glb(root / manifest.get("mesh", "mesh.glb"))
    out = {"mesh": mesh, "background": np.array(manifest["background"]),
           "train": [], "test": []}
    for split in ("train", "test"):
        for view in manifest[split]:
            camera = _camera_from_json(view)
            image = Image(png_to_float_image(root / view["image"]))
            out[split].append((camera, image))
    return out


def make_tri(out_dir, seed: int = 0) -> dict:
    """Single triangle with a constant color; the trainer's smoke scene."""
    rng = np.random.default_rng(seed)
    mesh = TriMesh(
        positions=np.array([[-0.5, -0.4, 0.0], [0.5, -0.4, 0.0], [0.0, 0.6, 0.0]]),
        uvs=np.array([[0.05, 0.05], [0.95, 0.05], [0.5, 0.95]]),
        indices=np.array([[0, 1, 2]]))
    color = np.array([153, 76, 51]) / 255.0
    background = np.zeros(3)
    accel = build_bvh(mesh)

    views = []
    for i in range(5):
        angle = 2 * np.pi * i / 5
        pos = np.array([0.25 * np.cos(angle), 0.25 * np.sin(angle), 2.2])
        pos[:2] += rng.uniform(-0.05, 0.05, size=2)
        camera = Camera(position=pos, rotation=look_rotation(-pos), focal=80.0,
                        width=64, height=64)
        image = render_ground_truth(
            mesh, camera, lambda p: np.broadcast_to(color, (len(p), 3)).copy(),
            None, background, accel)
        views.append((camera, image))
    return save_dataset(out_dir, mesh, views[:4], views[4:], background)


def make_box_room(out_dir, seed: int = 0, subdiv: int = BOX_SUBDIV,
                  n_train: int = 32, n_test: int = 8,
                  size: int = 128) -> dict:
    """Closed box interior with view-dependent ground-truth displacement."""
    rng = np.random.default_rng(seed)
    mesh = box_room_mesh(subdiv=subdiv)
    gt_maps = box_room_gt_maps(rng)
    background = np.zeros(3)
    accel = build_bvh(mesh)

    n = n_train + n_test
    dirs = fibonacci_directions(n)
    focal = 0.5 * size / np.tan(np.radians(35.0))
    views = []
    for i in range(n):
        pos = rng.uniform(-0.15, 0.15, size=3)
        camera = Camera(position=pos, rotation=look_rotation(dirs[i]),
                        focal=focal, width=size, height=size)
        image = render_ground_truth(mesh, camera, wall_pattern, gt_maps,
                                    background, accel)
        views.append((camera, image))
    test_idx = set(range(4, n, n // max(n_test, 1)))
    while len(test_idx) > n_test:
        test_idx.pop()
    train = [v for i, v in enumerate(views) if i not in test_idx]
    test = [v for i, v in enumerate(views) if i in test_idx]
    return save_dataset(out_dir, mesh, train, test, background)


def icosphere(radius: float = 0.5, subdivisions: int = 3) -> TriMesh:
    """Subdivided icosahedron with spherical-projection UVs."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        faces = [sub for (a, b, c) in faces
                 for sub in ((a, midpoint(a, b), midpoint(a, c)),
                             (b, midpoint(b, c), midpoint(a, b)),
                             (c, midpoint(a, c), midpoint(b, c)),
                             (midpoint(a, b), midpoint(b, c), midpoint(a, c)))]
    pos = np.array(verts) * radius
    u = 0.5 + np.arctan2(pos[:, 1], pos[:, 0]) / (2 * np.pi)
    v = np.arccos(np.clip(pos[:, 2] / radius, -1.0, 1.0)) / np.pi
    return TriMesh(pos, np.stack([u, v], axis=1),
                   np.array(faces, dtype=np.int64))


def make_sphere(out_dir, seed: int = 0, n_train: int = 12,
                n_test: int = 4, size: int = 96) -> dict:
    """Icosphere orbit scene with the procedural pattern, no displacement."""
    rng = np.random.default_rng(seed)
    mesh = icosphere()
    background = np.array([0.05, 0.05, 0.08])
    accel = build_bvh(mesh)
    n = n_train + n_test
    views = []
    for i in range(n):
        angle = 2 * np.pi * i / n
        height = 0.6 * np.sin(angle * 2 + 0.5)
        pos = np.array([1.7 * np.cos(angle), 1.7 * np.sin(angle), height])
        pos += rng.uniform(-0.02, 0.02, size=3)
        camera = Camera(position=pos, rotation=look_rotation(-pos), focal=110.0,
                        width=size, height=size)
        image = render_ground_truth(mesh, camera, wall_pattern, None,
                                    background, accel)
        views.append((camera, image))
    return save_dataset(out_dir, mesh, views[:n_train], views[n_train:],
                        background)


def make_synthetic(name: str, out_dir, seed: int = 0) -> dict:
    """Dispatch by scene name: tri, box-room, or sphere."""
    makers = {"tri": make_tri, "box-room": make_box_room, "sphere": make_sphere}
    if name not in makers:
        raise ValueError(f"unknown synthetic scene: {name!r} "
                         f"(choose from {sorted(makers)})")
    return makers[name](out_dir, seed=seed)
