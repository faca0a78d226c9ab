"""Cameras, surface-mode and volumetric rendering, PSNR, and benchmarks.

The fast path rasterizes by ray casting: one BVH hit per pixel, one field
query at the (optionally view-calibrated) hit point. The volumetric reference
marches every ray through the contracted field with dense samples and
composites front to back; it exists to sanity-check the field math, not to be
fast.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .displacement import calibrate
from .fields import (HashGridField, contract, composite_ray_batch, decode,
                     encode)
from .scene import Scene

PSNR_CAP = 99.0


@dataclass
class Camera:
    """Pinhole camera looking down its local -z axis.

    ``rotation`` maps camera space to world space (columns are the camera's
    right/up/back axes in world coordinates). Pixel (0, 0) is the top-left
    corner; image y grows downward while camera y grows upward.
    """

    position: np.ndarray     # (3,)
    rotation: np.ndarray     # (3, 3) world-from-camera
    focal: float             # pixels
    width: int
    height: int
    principal: tuple[float, float] | None = None  # defaults to image center

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-6):
            raise ValueError("rotation must be orthonormal")
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.principal is None:
            self.principal = (self.width / 2.0, self.height / 2.0)

    def pixel_dirs_cam(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Unit view directions in camera space for pixel coordinates."""
        cx, cy = self.principal
        d = np.stack([(xs - cx) / self.focal,
                      (cy - ys) / self.focal,
                      -np.ones_like(xs)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(camera: Camera, x: float, y: float):
    """World-space ray through one pixel coordinate (origin, unit direction).

    Coordinates are continuous: pass x + 0.5, y + 0.5 for a pixel center.
    """
    if not (0.0 <= x <= camera.width and 0.0 <= y <= camera.height):
        raise ValueError("pixel coordinate outside the image")
    d_cam = camera.pixel_dirs_cam(np.float64(x), np.float64(y))
    d = camera.rotation @ d_cam
    return camera.position.copy(), d / np.linalg.norm(d)


def camera_rays(camera: Camera):
    """Rays through every pixel center, row-major: (H*W, 3) origins and dirs."""
    ys, xs = np.mgrid[0:camera.height, 0:camera.width]
    xs = xs.reshape(-1) + 0.5
    ys = ys.reshape(-1) + 0.5
    d_cam = camera.pixel_dirs_cam(xs, ys)
    dirs = d_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


@dataclass
class Image:
    """Float RGB image in [0, 1], shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("image contains non-finite values")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class RenderSettings:
    mode: str = "mixrt"              # "mixrt" or "volumetric-reference"
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    use_displacement: bool = True
    near: float = 0.05
    far: float = 4.0
    samples_per_ray: int = 128
    chunk: int = 65536               # pixels per vectorized slab
    threads: int = 1                 # >1 farms slabs to a thread pool

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if self.mode not in ("mixrt", "volumetric-reference"):
            raise ValueError("mode must be 'mixrt' or 'volumetric-reference'")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.mode == "volumetric-reference" and self.samples_per_ray < 2:
            raise ValueError("volumetric mode needs samples_per_ray >= 2")


def shade_hits(scene: Scene, points: np.ndarray, uvs: np.ndarray,
               dirs: np.ndarray, use_displacement: bool = True) -> np.ndarray:
    """Field color at surface hit points (the per-pixel shading core)."""
    if use_displacement and scene.maps is not None:
        points = calibrate(scene.maps, points, uvs, dirs)
    p_c = contract(points)
    emb = encode(scene.field, p_c)
    return decode(scene.field.decoder, emb)


def render_mixrt(scene: Scene, camera: Camera,
                 settings: RenderSettings | None = None) -> Image:
    """Surface-mode render: one BVH hit and one field query per pixel.

    Pixel slabs are independent (no shared accumulators), so the threaded
    path returns bit-identical images to the serial one.
    """
    settings = settings or RenderSettings(background=scene.background)
    if settings.mode == "volumetric-reference":
        return render_volumetric_reference(scene.field, camera, settings)
    origins, dirs = camera_rays(camera)
    n = len(dirs)
    out = np.empty((n, 3))

    def run_slab(lo: int) -> None:
        hi = min(lo + settings.chunk, n)
        res = scene_hits(scene, origins[lo:hi], dirs[lo:hi])
        chunk_px = np.broadcast_to(settings.background, (hi - lo, 3)).copy()
        mask = res["hit"]
        if np.any(mask):
            chunk_px[mask] = shade_hits(scene, res["point"][mask], res["uv"][mask],
                                        dirs[lo:hi][mask], settings.use_displacement)
        out[lo:hi] = chunk_px

    slabs = list(range(0, n, settings.chunk))
    if settings.threads > 1 and len(slabs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            list(pool.map(run_slab, slabs))
    else:
        for lo in slabs:
            run_slab(lo)
    return Image(np.clip(out, 0.0, 1.0).reshape(camera.height, camera.width, 3))


def scene_hits(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Batched nearest-hit query against the scene's mesh."""
    from .geometry import intersect_batch
    return intersect_batch(scene.accel, scene.mesh, origins, dirs)


def render_volumetric_reference(field: HashGridField, camera: Camera,
                                settings: RenderSettings | None = None) -> Image:
    """Dense ray-marching render used as a slow cross-check of the field.

    Uniform samples in [near, far], sigma-weighted compositing with the
    background filling leftover transmittance.
    """
    settings = settings or RenderSettings(mode="volumetric-reference")
    origins, dirs = camera_rays(camera)
    n = len(dirs)
    s = settings.samples_per_ray
    ts = np.linspace(settings.near, settings.far, s)
    last = float(ts[1] - ts[0]) if s > 1 else settings.far - settings.near
    out = np.empty((n, 3))
    # keep the (pixels x samples) slab small enough to stay in cache
    chunk = max(1, min(settings.chunk // max(s // 8, 1), n))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pts = origins[lo:hi, None, :] + ts[None, :, None] * dirs[lo:hi, None, :]
        p_c = contract(pts.reshape(-1, 3))
        emb = encode(field, p_c)
        rgb, sigma = decode(field.decoder, emb, want_density=True)
        rgb = rgb.reshape(hi - lo, s, 3)
        sigma = sigma.reshape(hi - lo, s)
        t_batch = np.broadcast_to(ts, (hi - lo, s))
        out[lo:hi] = composite_ray_batch(t_batch, sigma, rgb, settings.background,
                                         last_interval=last)
    return Image(np.clip(out, 0.0, 1.0).reshape(camera.height, camera.width, 3))


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB over [0,1] images, capped at 99."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("images must share a shape")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _time_render(scene: Scene, camera: Camera, settings: RenderSettings,
                 frames: int, warmup: int = 1):
    for _ in range(warmup):
        render_mixrt(scene, camera, settings)
    samples = []
    for _ in range(frames):
        t0 = time.perf_counter()
        render_mixrt(scene, camera, settings)
        samples.append((time.perf_counter() - t0) * 1e3)
    samples = np.sort(np.array(samples))
    return {
        "ms_median": float(np.median(samples)),
        "ms_p10": float(np.quantile(samples, 0.10)),
        "ms_p90": float(np.quantile(samples, 0.90)),
    }


def bench_levels(scene: Scene, camera: Camera, level_counts=(1, 2, 4, 8),
                 frames: int = 5, seed: int = 0) -> list[dict]:
    """Frame-time scaling as the number of grid levels grows.

    Each row re-creates the field with the stated level count (same table size
    and feature width; single-level grids collapse to the base resolution) and
    times full-frame renders. Medians over ``frames`` runs after one warmup.
    """
    base = scene.field.config
    rows = []
    for levels in level_counts:
        cfg = replace(base, num_levels=int(levels),
                      max_resolution=base.max_resolution if levels > 1
                      else base.min_resolution)
        fld = HashGridField.create(cfg, np.random.default_rng(seed))
        probe = replace_field(scene, fld)
        stats = _time_render(probe, camera, RenderSettings(background=scene.background),
                             frames)
        rows.append({"levels": int(levels), "table_size": cfg.table_size, **stats})
    return rows


def bench_table_sizes(scene: Scene, camera: Camera, log2_sizes=range(5, 23),
                      frames: int = 3, seed: int = 0) -> list[dict]:
    """Frame-time sensitivity to hash table size at a fixed level count."""
    base = scene.field.config
    rows = []
    for log2_t in log2_sizes:
        cfg = replace(base, table_size=2 ** int(log2_t))
        fld = HashGridField.create(cfg, np.random.default_rng(seed))
        probe = replace_field(scene, fld)
        stats = _time_render(probe, camera, RenderSettings(background=scene.background),
                             frames)
        rows.append({"levels": cfg.num_levels, "table_size": cfg.table_size, **stats})
    return rows


def replace_field(scene: Scene, field: HashGridField) -> Scene:
    """Scene with a different field but the same mesh, BVH, and maps."""
    probe = Scene(mesh=scene.mesh, field=field, maps=scene.maps,
                  background=scene.background)
    probe._accel = scene.accel
    return probe
