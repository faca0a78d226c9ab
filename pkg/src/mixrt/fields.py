"""Scene field math: contraction, multi-resolution hash grid, SH basis, decoder, compositing.

The color/density field is a multi-level hashed embedding grid decoded by a
small MLP. Unbounded scene coordinates are folded into a radius-2 ball before
encoding; the ball is mapped affinely into the unit cube so the full grid is
usable. All evaluation functions are pure and accept batched inputs
(leading dimensions are preserved).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

# Per-axis hashing primes (x is left unmultiplied so small dense-ish grids
# stay collision-free along x).
HASH_PRIMES = (1, 2654435761, 805459861)

# Corner visit order for trilinear stencils: bit 0 -> x, bit 1 -> y, bit 2 -> z.
CORNER_OFFSETS = np.array(
    [[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.int64
)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class HashGridConfig:
    """Multi-resolution hash grid shape parameters."""

    num_levels: int = 4
    table_size: int = 2**21
    feature_dim: int = 4
    min_resolution: int = 256
    max_resolution: int = 4096

    def __post_init__(self):
        if self.num_levels < 1:
            raise ValueError("num_levels must be positive")
        if not _is_power_of_two(self.table_size):
            raise ValueError(f"table_size must be a power of two, got {self.table_size}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.min_resolution < 1 or self.max_resolution < self.min_resolution:
            raise ValueError("need 1 <= min_resolution <= max_resolution")
        if self.num_levels == 1 and self.min_resolution != self.max_resolution:
            raise ValueError("single-level grid requires min_resolution == max_resolution")

    @property
    def embedding_dim(self) -> int:
        return self.num_levels * self.feature_dim


def level_resolutions(config: HashGridConfig) -> list[int]:
    """Per-level grid resolutions: geometric progression between the endpoints.

    Level l has resolution round(min * b^l) with b = (max/min)^(1/(L-1));
    the first and last levels hit min_resolution and max_resolution exactly.
    """
    if config.num_levels == 1:
        return [config.min_resolution]
    b = (config.max_resolution / config.min_resolution) ** (1.0 / (config.num_levels - 1))
    res = []
    for l in range(config.num_levels):
        # round half up; progression values never land exactly on .5 in practice
        r = int(np.floor(config.min_resolution * b**l + 0.5))
        res.append(r)
    res[0] = config.min_resolution
    res[-1] = config.max_resolution
    for a, c in zip(res, res[1:]):
        if c < a:
            raise ValueError(f"level resolutions must be non-decreasing, got {res}")
    return res


def contract(p: np.ndarray) -> np.ndarray:
    """Fold unbounded space into the radius-2 ball.

    Identity inside the unit ball, (2 - 1/|p|) * p/|p| outside. Continuous,
    radially monotone, and C1 across the unit sphere.
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("contract: input must be finite")
    r = np.linalg.norm(p, axis=-1, keepdims=True)
    safe_r = np.maximum(r, 1.0)
    scale = (2.0 - 1.0 / safe_r) / safe_r
    return np.where(r <= 1.0, p, scale * p)


def contract_jacobian(p: np.ndarray) -> np.ndarray:
    """Jacobian d contract / d p, shape (..., 3, 3).

    Inside the unit ball the map is the identity. Outside, with s(r) = 2/r - 1/r^2,
    J = s*I + (s'(r)/r) * p p^T and s'(r) = -2/r^2 + 2/r^3.
    """
    p = np.asarray(p, dtype=np.float64)
    r = np.linalg.norm(p, axis=-1, keepdims=True)
    safe_r = np.maximum(r, 1.0)
    s = 2.0 / safe_r - 1.0 / safe_r**2
    ds = -2.0 / safe_r**2 + 2.0 / safe_r**3
    eye = np.broadcast_to(np.eye(3), p.shape + (3,))
    outer = p[..., :, None] * p[..., None, :]
    jac = s[..., None] * eye + (ds / safe_r)[..., None] * outer
    inside = (r <= 1.0)[..., None]
    return np.where(inside, eye, jac)


def ball_to_grid(p_contracted: np.ndarray) -> np.ndarray:
    """Affine map of the radius-2 ball into [0,1]^3: p_grid = (p + 2) / 4."""
    return (np.asarray(p_contracted, dtype=np.float64) + 2.0) / 4.0


def hash_index(grid_coord: np.ndarray, table_size: int) -> np.ndarray:
    """Spatial hash of integer grid coordinates into [0, table_size).

    XOR of per-axis coordinate-times-prime products, masked by table_size - 1.
    Total over integer triples: negative coordinates wrap via uint32 arithmetic.
    """
    if not _is_power_of_two(table_size):
        raise ValueError("table_size must be a power of two")
    c = np.asarray(grid_coord, dtype=np.int64).astype(np.uint32)
    h = c[..., 0] * np.uint32(HASH_PRIMES[0])
    h ^= c[..., 1] * np.uint32(HASH_PRIMES[1])
    h ^= c[..., 2] * np.uint32(HASH_PRIMES[2])
    return (h & np.uint32(table_size - 1)).astype(np.int64)


def dense_index(grid_coord: np.ndarray, resolution: int) -> np.ndarray:
    """Row-major index x + R*y + R^2*z for levels small enough to skip hashing."""
    c = np.asarray(grid_coord, dtype=np.int64)
    return c[..., 0] + resolution * (c[..., 1] + resolution * c[..., 2])


def level_uses_dense(resolution: int, table_size: int) -> bool:
    """Dense indexing when every grid vertex fits in the table without collisions."""
    return resolution**3 <= table_size


def level_table_indices(grid_coord: np.ndarray, resolution: int, table_size: int) -> np.ndarray:
    if level_uses_dense(resolution, table_size):
        return dense_index(grid_coord, resolution)
    return hash_index(grid_coord, table_size)


@dataclass
class DecoderWeights:
    """Small MLP turning concatenated level embeddings into color (and density).

    ``layers`` is an ordered list of (weight, bias) with chaining dimensions;
    hidden activations are ReLU. Of the final pre-activations, the first three
    are color logits (sigmoid) and the optional fourth is log-density (exp).
    """

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("decoder needs at least one layer")
        for i, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight must be (out, in) and bias (out,)")
            self.layers[i] = (w, b)
        for i in range(len(self.layers) - 1):
            if self.layers[i][0].shape[0] != self.layers[i + 1][0].shape[1]:
                raise ValueError(f"layer {i} output dim does not chain into layer {i + 1}")
        if self.output_dim not in (3, 4):
            raise ValueError("decoder must emit 3 (rgb) or 4 (rgb + density) outputs")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w, _ in self.layers[:-1])

    @staticmethod
    def random(rng: np.random.Generator, input_dim: int,
               hidden: tuple[int, ...] = (16, 16), outputs: int = 4) -> "DecoderWeights":
        """Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        sizes = [input_dim, *hidden, outputs]
        layers = []
        for n_in, n_out in zip(sizes, sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
            layers.append((w, b))
        return DecoderWeights(layers)

    def copy(self) -> "DecoderWeights":
        return DecoderWeights([(w.copy(), b.copy()) for w, b in self.layers])


@dataclass
class HashGridField:
    """Hash-grid radiance field: per-level embedding tables plus decoder."""

    config: HashGridConfig
    tables: list[np.ndarray]
    decoder: DecoderWeights
    resolutions: list[int] = dc_field(default_factory=list)
    # per-level affine quantization params remembered after an import so that
    # re-exporting reproduces the exact same byte-level textures; None = never
    # quantized
    table_quant: list | None = None

    def __post_init__(self):
        if not self.resolutions:
            self.resolutions = level_resolutions(self.config)
        if len(self.tables) != self.config.num_levels:
            raise ValueError("one table per level required")
        for l, t in enumerate(self.tables):
            t = np.asarray(t, dtype=np.float64)
            if t.shape != (self.config.table_size, self.config.feature_dim):
                raise ValueError(
                    f"table {l} must be ({self.config.table_size}, {self.config.feature_dim}),"
                    f" got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"table {l} contains non-finite values")
            self.tables[l] = t
        if self.decoder.input_dim != self.config.embedding_dim:
            raise ValueError(
                f"decoder input {self.decoder.input_dim} != num_levels*feature_dim"
                f" = {self.config.embedding_dim}")

    @staticmethod
    def create(config: HashGridConfig, rng: np.random.Generator,
               hidden: tuple[int, ...] = (16, 16), outputs: int = 4) -> "HashGridField":
        """Fresh field: tables U(-1e-4, 1e-4), decoder fan-in-scaled uniform."""
        tables = [
            rng.uniform(-1e-4, 1e-4, size=(config.table_size, config.feature_dim))
            for _ in range(config.num_levels)
        ]
        decoder = DecoderWeights.random(rng, config.embedding_dim, hidden, outputs)
        return HashGridField(config, tables, decoder)

    def copy(self) -> "HashGridField":
        return HashGridField(self.config, [t.copy() for t in self.tables],
                             self.decoder.copy(), list(self.resolutions),
                             None if self.table_quant is None else list(self.table_quant))


def grid_stencil(p_grid: np.ndarray, resolution: int):
    """Trilinear stencil for grid points in [0,1]^3.

    Returns (base corner (..., 3) int64, fractional offset (..., 3) float64).
    The base cell is clamped to [0, R-2] so p_grid = 1 lands in the last cell
    with fraction 1.
    """
    x = np.asarray(p_grid, dtype=np.float64) * (resolution - 1)
    i0 = np.clip(np.floor(x).astype(np.int64), 0, max(resolution - 2, 0))
    return i0, x - i0


def stencil_weights(frac: np.ndarray) -> np.ndarray:
    """Trilinear corner weights, shape (..., 8), ordered like CORNER_OFFSETS."""
    f = frac[..., None, :]
    bits = CORNER_OFFSETS.astype(np.float64)
    w = np.where(bits > 0, f, 1.0 - f)
    return np.prod(w, axis=-1)


def encode(field: HashGridField, p_contracted: np.ndarray) -> np.ndarray:
    """Concatenated per-level trilinear embeddings of a contracted point.

    Accepts (..., 3) contracted coordinates with norm <= 2 and returns
    (..., num_levels * feature_dim). Exact at grid vertices, piecewise
    trilinear in between.
    """
    p = np.asarray(p_contracted, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("encode: non-finite point")
    norm = np.linalg.norm(p, axis=-1)
    if np.any(norm > 2.0 + 1e-9):
        raise ValueError("encode: point outside the contracted domain (norm > 2)")
    p_grid = ball_to_grid(p)
    parts = []
    for table, res in zip(field.tables, field.resolutions):
        i0, frac = grid_stencil(p_grid, res)
        corners = i0[..., None, :] + CORNER_OFFSETS            # (..., 8, 3)
        idx = level_table_indices(corners, res, field.config.table_size)
        weights = stencil_weights(frac)                        # (..., 8)
        parts.append(np.sum(weights[..., None] * table[idx], axis=-2))
    return np.concatenate(parts, axis=-1)


def decode(weights: DecoderWeights, embedding: np.ndarray, want_density: bool = False):
    """Run the decoder on (..., input_dim) embeddings.

    Returns rgb in [0,1] (sigmoid of the color logits); with want_density also
    the non-negative density exp(log-density output).
    """
    h = np.asarray(embedding, dtype=np.float64)
    if h.shape[-1] != weights.input_dim:
        raise ValueError(
            f"embedding dim {h.shape[-1]} != decoder input {weights.input_dim}")
    if want_density and weights.output_dim < 4:
        raise ValueError("decoder has no density output")
    n = len(weights.layers)
    for i, (w, b) in enumerate(weights.layers):
        h = h @ w.T + b
        if i < n - 1:
            h = np.maximum(h, 0.0)
    rgb = 1.0 / (1.0 + np.exp(-h[..., :3]))
    if want_density:
        return rgb, np.exp(h[..., 3])
    return rgb


# Real spherical harmonics polynomial constants, degree 0..4, basis ordered by
# (l asc, m from -l to l). Matches the convention common to SH-appearance
# renderers so coefficient textures are interchangeable.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)
SH_C4 = (2.5033429417967046, -1.7701307697799304, 0.9461746957575601,
         -0.6690465435572892, 0.10578554691520431, -0.6690465435572892,
         0.47308734787878004, -1.7701307697799304, 0.6258357354491761)

MAX_SH_DEGREE = 4


@dataclass(frozen=True)
class ShBasis:
    """Real spherical harmonics basis of a fixed degree."""

    degree: int

    def __post_init__(self):
        if self.degree < 0 or self.degree > MAX_SH_DEGREE:
            raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}]")

    @property
    def basis_count(self) -> int:
        return (self.degree + 1) ** 2


def sh_eval(basis: ShBasis, d: np.ndarray) -> np.ndarray:
    """Evaluate the (degree+1)^2 real SH basis functions at unit directions.

    d has shape (..., 3) with unit norm (checked to 1e-6); returns
    (..., basis_count). The degree-0 component is the constant 1/(2 sqrt(pi)).
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if not np.all(np.isfinite(d)) or np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("sh_eval: direction must be unit length")
    out = np.empty(d.shape[:-1] + (basis.basis_count,), dtype=np.float64)
    out[..., 0] = SH_C0
    if basis.degree >= 1:
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if basis.degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if basis.degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    if basis.degree >= 4:
        out[..., 16] = SH_C4[0] * xy * (xx - yy)
        out[..., 17] = SH_C4[1] * yz * (3.0 * xx - yy)
        out[..., 18] = SH_C4[2] * xy * (7.0 * zz - 1.0)
        out[..., 19] = SH_C4[3] * yz * (7.0 * zz - 3.0)
        out[..., 20] = SH_C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
        out[..., 21] = SH_C4[5] * xz * (7.0 * zz - 3.0)
        out[..., 22] = SH_C4[6] * (xx - yy) * (7.0 * zz - 1.0)
        out[..., 23] = SH_C4[7] * xz * (xx - 3.0 * yy)
        out[..., 24] = SH_C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


@dataclass
class RaySample:
    """One volumetric sample: distance along the ray, density, color."""

    t: float
    sigma: float
    rgb: tuple[float, float, float]

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if any(c < 0 or c > 1 for c in self.rgb):
            raise ValueError("rgb components must lie in [0, 1]")


def composite_ray_batch(ts: np.ndarray, sigmas: np.ndarray, rgbs: np.ndarray,
                        background: np.ndarray,
                        last_interval: float | None = None) -> np.ndarray:
    """Front-to-back alpha compositing over (..., S) samples sorted by t.

    Interval k is t_{k+1} - t_k; the final interval replicates the previous one
    unless last_interval is given. Transmittance to sample k accumulates the
    optical depth of samples strictly before k. Residual transmittance times
    the background is added at the end.
    """
    ts = np.asarray(ts, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    rgbs = np.asarray(rgbs, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    n = ts.shape[-1]
    if n == 0:
        return np.broadcast_to(background, ts.shape[:-1] + (3,)).copy()
    deltas = np.diff(ts, axis=-1)
    if last_interval is not None:
        last = np.full(ts.shape[:-1] + (1,), float(last_interval))
    elif n >= 2:
        last = deltas[..., -1:]
    else:
        raise ValueError("single-sample compositing needs an explicit last_interval")
    deltas = np.concatenate([deltas, last], axis=-1)
    tau = sigmas * deltas
    alpha = 1.0 - np.exp(-tau)
    # transmittance before sample k: exp(-sum_{j<k} tau_j)
    trans = np.exp(-np.concatenate(
        [np.zeros(ts.shape[:-1] + (1,)), np.cumsum(tau, axis=-1)[..., :-1]], axis=-1))
    weights = trans * alpha
    color = np.sum(weights[..., None] * rgbs, axis=-2)
    residual = trans[..., -1] * np.exp(-tau[..., -1])
    return color + residual[..., None] * background


def composite(samples: list[RaySample], background,
              last_interval: float | None = None) -> np.ndarray:
    """Composite an ordered sample list against a background color."""
    bg = np.asarray(background, dtype=np.float64)
    if not samples:
        return bg.copy()
    ts = np.array([s.t for s in samples])
    if np.any(np.diff(ts) < 0):
        raise ValueError("samples must be sorted by ascending t")
    sigmas = np.array([s.sigma for s in samples])
    rgbs = np.array([s.rgb for s in samples])
    return composite_ray_batch(ts, sigmas, rgbs, bg, last_interval=last_interval)
