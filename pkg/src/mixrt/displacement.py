"""View-dependent displacement maps and texture quantization.

Two UV-space textures drive a per-point calibration of ray-mesh hit points
before the field is queried: a spherical-harmonics coefficient map (three
spatial axes times (degree+1)^2 coefficients, axis-major) and a scalar scale
map. The displaced point is

    p' = p + (C(uv) @ sh(d)) * s(uv)

with d the unit view direction. Zero maps leave every point untouched, so the
calibration degrades to plain surface-point encoding when disabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import MAX_SH_DEGREE, ShBasis, sh_eval


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (unlike np.round)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class QuantizationParams:
    """Affine 8-bit quantization of one texture: value = minimum + code * step."""

    minimum: float
    step: float

    def __post_init__(self):
        if not np.isfinite(self.minimum) or not np.isfinite(self.step):
            raise ValueError("quantization params must be finite")
        if self.step <= 0:
            raise ValueError("step must be positive")


def quantize_texture(values: np.ndarray) -> tuple[np.ndarray, QuantizationParams]:
    """Quantize a float texture to uint8 codes spanning its value range.

    Codes 0 and 255 land exactly on the texture minimum and maximum. A constant
    texture quantizes to all-zero codes with unit step.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot quantize non-finite texture values")
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8), QuantizationParams(lo, 1.0)
    step = (hi - lo) / 255.0
    codes = round_half_away((values - lo) / step)
    codes = np.clip(codes, 0, 255).astype(np.uint8)
    return codes, QuantizationParams(lo, step)


def dequantize_texture(codes: np.ndarray, params: QuantizationParams) -> np.ndarray:
    return params.minimum + codes.astype(np.float64) * params.step


@dataclass
class DisplacementMaps:
    """Square SH-coefficient and scale textures plus their basis degree.

    sh_map is (R, R, 3*(degree+1)^2) laid out axis-major: all x-axis
    coefficients, then y, then z, each in SH order (l ascending, m from -l
    to l). scale_map is (R, R, 1). Quantization params are remembered after a
    quantize/import so re-export is bit-stable; None means never quantized.
    """

    resolution: int
    sh_degree: int
    sh_map: np.ndarray
    scale_map: np.ndarray
    sh_quant: QuantizationParams | None = None
    scale_quant: QuantizationParams | None = None

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise ValueError(f"sh_degree must be in [0, {MAX_SH_DEGREE}]")
        k = self.num_coeffs
        self.sh_map = np.ascontiguousarray(self.sh_map, dtype=np.float64)
        self.scale_map = np.ascontiguousarray(self.scale_map, dtype=np.float64)
        r = self.resolution
        if self.sh_map.shape != (r, r, 3 * k):
            raise ValueError(f"sh_map must be ({r}, {r}, {3 * k})")
        if self.scale_map.shape != (r, r, 1):
            raise ValueError(f"scale_map must be ({r}, {r}, 1)")

    @property
    def num_coeffs(self) -> int:
        return (self.sh_degree + 1) ** 2

    @property
    def basis(self) -> ShBasis:
        return ShBasis(self.sh_degree)

    @staticmethod
    def zeros(resolution: int, sh_degree: int) -> "DisplacementMaps":
        """Identity calibration: both maps zero, displacement vanishes."""
        k = (sh_degree + 1) ** 2
        return DisplacementMaps(
            resolution=resolution, sh_degree=sh_degree,
            sh_map=np.zeros((resolution, resolution, 3 * k)),
            scale_map=np.zeros((resolution, resolution, 1)),
        )

    @staticmethod
    def train_init(resolution: int, sh_degree: int, rng: np.random.Generator,
                   sh_scale: float = 0.3) -> "DisplacementMaps":
        """Training initializer: small random SH coefficients, zero scale.

        The displacement is still exactly zero at the start (the scale map
        gates it) but the product structure means both factors at zero is a
        stationary point of the loss; seeding one factor keeps gradients alive.
        """
        k = (sh_degree + 1) ** 2
        maps = DisplacementMaps.zeros(resolution, sh_degree)
        maps.sh_map = rng.uniform(-sh_scale, sh_scale,
                                  size=(resolution, resolution, 3 * k))
        return maps

    def copy(self) -> "DisplacementMaps":
        return DisplacementMaps(self.resolution, self.sh_degree,
                                self.sh_map.copy(), self.scale_map.copy(),
                                self.sh_quant, self.scale_quant)


def bilinear_footprint(resolution: int, uv: np.ndarray):
    """Texel indices and weights for edge-clamped bilinear sampling.

    Texel centers sit at (i + 0.5) / R; queries outside [0,1] clamp to the
    border texel. Returns (ix0, iy0, ix1, iy1, fx, fy) with uv x selecting
    columns and uv y selecting rows.
    """
    uv = np.asarray(uv, dtype=np.float64)
    x = uv[..., 0] * resolution - 0.5
    y = uv[..., 1] * resolution - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0, 0, resolution - 1).astype(np.int64)
    iy0 = np.clip(y0, 0, resolution - 1).astype(np.int64)
    ix1 = np.clip(x0 + 1, 0, resolution - 1).astype(np.int64)
    iy1 = np.clip(y0 + 1, 0, resolution - 1).astype(np.int64)
    # clamp the fractions too so out-of-range queries hold the border value
    fx = np.clip(np.where(x0 < 0, 0.0, np.where(x0 > resolution - 2, 1.0, fx)), 0.0, 1.0)
    fy = np.clip(np.where(y0 < 0, 0.0, np.where(y0 > resolution - 2, 1.0, fy)), 0.0, 1.0)
    return ix0, iy0, ix1, iy1, fx, fy


def bilinear_sample(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an (R, R, C) texture at uv points of any batch shape -> (..., C)."""
    r = texture.shape[0]
    ix0, iy0, ix1, iy1, fx, fy = bilinear_footprint(r, uv)
    fx = fx[..., None]
    fy = fy[..., None]
    t00 = texture[iy0, ix0]
    t10 = texture[iy0, ix1]
    t01 = texture[iy1, ix0]
    t11 = texture[iy1, ix1]
    top = t00 * (1 - fx) + t10 * fx
    bot = t01 * (1 - fx) + t11 * fx
    return top * (1 - fy) + bot * fy


def sample_maps(maps: DisplacementMaps, uv: np.ndarray):
    """Bilinearly sample both maps: returns (coeffs (..., 3K), scale (...,))."""
    sh = bilinear_sample(maps.sh_map, uv)
    scale = bilinear_sample(maps.scale_map, uv)[..., 0]
    return sh, scale


def displacement_vector(maps: DisplacementMaps, uv: np.ndarray,
                        dirs: np.ndarray) -> np.ndarray:
    """The view-dependent offset (C(uv) @ sh(d)) * s(uv), shape (..., 3)."""
    coeffs, scale = sample_maps(maps, uv)
    k = maps.num_coeffs
    basis = sh_eval(maps.basis, dirs)
    coeffs = coeffs.reshape(coeffs.shape[:-1] + (3, k))
    disp = np.einsum("...ak,...k->...a", coeffs, basis)
    return disp * scale[..., None]


def calibrate(maps: DisplacementMaps, points: np.ndarray, uv: np.ndarray,
              dirs: np.ndarray) -> np.ndarray:
    """Shift surface points by the view-dependent displacement."""
    points = np.asarray(points, dtype=np.float64)
    return points + displacement_vector(maps, uv, dirs)


def quantize_maps(maps: DisplacementMaps) -> tuple[DisplacementMaps,
                                                   dict[str, QuantizationParams]]:
    """Snap both textures to their 8-bit affine grids.

    Returns new maps holding the dequantized values (so rendering matches what
    a bundle round-trip would produce) plus the per-texture parameters.
    """
    sh_codes, sh_q = quantize_texture(maps.sh_map)
    scale_codes, scale_q = quantize_texture(maps.scale_map)
    out = DisplacementMaps(
        resolution=maps.resolution, sh_degree=maps.sh_degree,
        sh_map=dequantize_texture(sh_codes, sh_q),
        scale_map=dequantize_texture(scale_codes, scale_q),
        sh_quant=sh_q, scale_quant=scale_q,
    )
    return out, {"sh": sh_q, "scale": scale_q}
