"""Joint optimization of hash tables, decoder, and displacement maps.

Supervision is plain L2 on rendered vs. target colors at ray-mesh hit points.
The mesh is frozen, so hits are cached once and training reduces to batched
field evaluations plus a hand-written reverse pass through

    decode -> encode -> contract -> calibrate

with sparse scatter updates into the hash tables and map texels. Everything
runs in float64 so analytic gradients can be validated against central finite
differences tightly.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .displacement import bilinear_footprint, sample_maps
from .fields import (CORNER_OFFSETS, ball_to_grid, contract, contract_jacobian,
                     grid_stencil, level_table_indices, sh_eval, stencil_weights)
from .geometry import intersect_batch
from .renderer import Camera, Image, camera_rays
from .scene import Scene

PARAM_GROUPS = ("tables", "decoder", "sh_map", "scale_map")


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4096
    lr_tables: float = 1e-2
    lr_decoder: float = 1e-3
    lr_sh: float = 1e-3
    lr_scale: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15
    seed: int = 0
    log_every: int = 10
    loss_kind: str = "l2"
    use_displacement: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        for lr in (self.lr_tables, self.lr_decoder, self.lr_sh, self.lr_scale):
            if lr <= 0:
                raise ValueError("learning rates must be positive")
        if self.loss_kind != "l2":
            raise ValueError("only the l2 loss is implemented")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def lr_for(self, group: str) -> float:
        return {"tables": self.lr_tables, "decoder": self.lr_decoder,
                "sh_map": self.lr_sh, "scale_map": self.lr_scale}[group]


@dataclass
class TrainBatch:
    """Rays with precomputed mesh hits; every row is a hit (misses dropped)."""

    origins: np.ndarray    # (B, 3)
    dirs: np.ndarray       # (B, 3) unit
    targets: np.ndarray    # (B, 3) in [0, 1]
    points: np.ndarray     # (B, 3) cached hit positions
    uvs: np.ndarray        # (B, 2) cached hit texture coords

    def __post_init__(self):
        for name in ("origins", "dirs", "targets", "points", "uvs"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name),
                                                     dtype=np.float64))
        b = len(self.origins)
        if (self.dirs.shape != (b, 3) or self.targets.shape != (b, 3)
                or self.points.shape != (b, 3) or self.uvs.shape != (b, 2)):
            raise ValueError("batch arrays must agree on length")
        if b == 0:
            raise ValueError("batch must contain at least one ray")
        if np.any(np.abs(np.linalg.norm(self.dirs, axis=1) - 1.0) > 1e-6):
            raise ValueError("ray directions must be unit length")
        if self.targets.min() < 0 or self.targets.max() > 1:
            raise ValueError("targets must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.origins)

    def take(self, idx: np.ndarray) -> "TrainBatch":
        return TrainBatch(self.origins[idx], self.dirs[idx], self.targets[idx],
                          self.points[idx], self.uvs[idx])


@dataclass
class Gradients:
    """Per-group gradients plus the loss they came from."""

    tables: list            # one array per level, table shape
    decoder: list           # [(dW, db), ...] per layer
    sh_map: np.ndarray | None
    scale_map: np.ndarray | None
    loss: float
    num_rays: int


def loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all channels of all rays."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError("predicted and target shapes differ")
    return float(np.mean((predicted - target) ** 2))


def collect_training_rays(scene: Scene, dataset) -> TrainBatch:
    """Cast every pixel of every view once and pool the rays that hit.

    The mesh never moves during training, so this cache is computed exactly
    once; misses carry no supervision and are dropped here.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    origins, dirs, targets, points, uvs = [], [], [], [], []
    for camera, image in dataset:
        if (image.height, image.width) != (camera.height, camera.width):
            raise ValueError("image size does not match camera")
        o, d = camera_rays(camera)
        res = intersect_batch(scene.accel, scene.mesh, o, d)
        mask = res["hit"]
        origins.append(o[mask])
        dirs.append(d[mask])
        targets.append(image.pixels.reshape(-1, 3)[mask])
        points.append(res["point"][mask])
        uvs.append(res["uv"][mask])
    origins = np.concatenate(origins)
    if not len(origins):
        raise ValueError("no training ray hits the mesh")
    return TrainBatch(origins, np.concatenate(dirs), np.concatenate(targets),
                      np.concatenate(points), np.concatenate(uvs))


def _forward(scene: Scene, batch: TrainBatch, use_displacement: bool):
    """Run the pipeline keeping every intermediate needed by the reverse pass."""
    fld = scene.field
    maps = scene.maps if use_displacement else None
    cache = {"maps": maps}

    p = batch.points
    if maps is not None:
        k = maps.num_coeffs
        coeffs, scale = sample_maps(maps, batch.uvs)
        basis = sh_eval(maps.basis, batch.dirs)
        coeffs3 = coeffs.reshape(-1, 3, k)
        cy = np.einsum("bak,bk->ba", coeffs3, basis)
        p = p + cy * scale[:, None]
        cache.update(basis=basis, scale=scale, cy=cy)
    cache["p_world"] = p
    x = contract(p)
    g = ball_to_grid(x)

    embeddings = []
    level_cache = []
    for lvl, res in enumerate(fld.resolutions):
        i0, frac = grid_stencil(g, res)
        corners = i0[:, None, :] + CORNER_OFFSETS[None, :, :]
        idx = level_table_indices(corners.reshape(-1, 3), res,
                                  fld.config.table_size).reshape(-1, 8)
        w = stencil_weights(frac)
        feats = fld.tables[lvl][idx]                      # (B, 8, F)
        embeddings.append(np.einsum("bj,bjf->bf", w, feats))
        level_cache.append((idx, w, frac, feats, res))
    emb = np.concatenate(embeddings, axis=1)

    acts = [emb]
    zs = []
    layers = fld.decoder.layers
    h = emb
    for li, (wm, bv) in enumerate(layers):
        z = h @ wm.T + bv
        zs.append(z)
        h = np.maximum(z, 0.0) if li < len(layers) - 1 else z
        acts.append(h)
    rgb = 1.0 / (1.0 + np.exp(-acts[-1][:, :3]))

    cache.update(x=x, levels=level_cache, acts=acts, zs=zs, rgb=rgb)
    return rgb, cache


def forward_loss(scene: Scene, batch: TrainBatch, use_displacement: bool = True) -> float:
    rgb, _ = _forward(scene, batch, use_displacement)
    return loss(rgb, batch.targets)


def backward(scene: Scene, batch: TrainBatch,
             use_displacement: bool = True) -> Gradients:
    """Analytic gradients of the batch L2 loss for every parameter group.

    Table gradients are dense arrays but only stencil-touched entries are
    nonzero; map gradients scatter through the bilinear footprints.
    """
    fld = scene.field
    rgb, cache = _forward(scene, batch, use_displacement)
    b = len(batch)

    d_rgb = 2.0 * (rgb - batch.targets) / rgb.size
    # sigmoid only wraps the color channels; density output is unsupervised
    out_dim = fld.decoder.layers[-1][0].shape[0]
    dz = np.zeros((b, out_dim))
    dz[:, :3] = d_rgb * rgb * (1.0 - rgb)

    decoder_grads = []
    layers = fld.decoder.layers
    grad = dz
    for li in range(len(layers) - 1, -1, -1):
        wm, _ = layers[li]
        h_in = cache["acts"][li]
        dw = grad.T @ h_in
        db = grad.sum(axis=0)
        decoder_grads.append((dw, db))
        if li > 0:
            grad = (grad @ wm) * (cache["zs"][li - 1] > 0.0)
    decoder_grads.reverse()
    d_emb = grad @ layers[0][0]

    feat = fld.config.feature_dim
    table_grads = [np.zeros_like(t) for t in fld.tables]
    dx = np.zeros((b, 3))
    for lvl, (idx, w, frac, feats, res) in enumerate(cache["levels"]):
        de = d_emb[:, lvl * feat:(lvl + 1) * feat]        # (B, F)
        np.add.at(table_grads[lvl], idx.reshape(-1),
                  (w[:, :, None] * de[:, None, :]).reshape(-1, feat))
        dw = np.einsum("bjf,bf->bj", feats, de)           # (B, 8)
        # d weight / d frac_axis: signed product of the other two axes' terms
        one = 1.0 - frac
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            term = np.ones((b, 8))
            for a in others:
                bit = CORNER_OFFSETS[:, a][None, :]
                term *= np.where(bit == 1, frac[:, a:a + 1], one[:, a:a + 1])
            sign = np.where(CORNER_OFFSETS[:, axis][None, :] == 1, 1.0, -1.0)
            dfrac_axis = np.sum(dw * sign * term, axis=1)
            dx[:, axis] += dfrac_axis * (res - 1) / 4.0

    # through the contraction: d loss / d p = J(p)^T d loss / d x
    jac = contract_jacobian(cache["p_world"])
    dp = np.einsum("bij,bi->bj", jac, dx)

    sh_grad = None
    scale_grad = None
    maps = cache["maps"]
    if maps is not None:
        k = maps.num_coeffs
        scale = cache["scale"]
        basis = cache["basis"]
        d_cy = dp * scale[:, None]                        # (B, 3)
        d_scale = np.sum(dp * cache["cy"], axis=1)        # (B,)
        d_coeffs = (d_cy[:, :, None] * basis[:, None, :]).reshape(b, 3 * k)
        sh_grad = np.zeros_like(maps.sh_map)
        scale_grad = np.zeros_like(maps.scale_map)
        ix0, iy0, ix1, iy1, fx, fy = bilinear_footprint(maps.resolution, batch.uvs)
        taps = ((iy0, ix0, (1 - fx) * (1 - fy)), (iy0, ix1, fx * (1 - fy)),
                (iy1, ix0, (1 - fx) * fy), (iy1, ix1, fx * fy))
        for iy, ix, wt in taps:
            np.add.at(sh_grad, (iy, ix), wt[:, None] * d_coeffs)
            np.add.at(scale_grad, (iy, ix, np.zeros_like(ix)), wt * d_scale)

    return Gradients(tables=table_grads, decoder=decoder_grads,
                     sh_map=sh_grad, scale_map=scale_grad,
                     loss=loss(rgb, batch.targets), num_rays=b)


@dataclass
class AdamState:
    """First/second moment buffers per parameter group plus the step counter."""

    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)
    t: int = 0

    @staticmethod
    def for_groups(groups: dict) -> "AdamState":
        state = AdamState()
        for name, params in groups.items():
            state.m[name] = [np.zeros_like(p) for p in params]
            state.v[name] = [np.zeros_like(p) for p in params]
        return state


def parameter_groups(scene: Scene, use_displacement: bool = True) -> dict:
    """Live parameter arrays by group; updates through them mutate the scene."""
    groups = {
        "tables": list(scene.field.tables),
        "decoder": [arr for pair in scene.field.decoder.layers for arr in pair],
    }
    if use_displacement and scene.maps is not None:
        groups["sh_map"] = [scene.maps.sh_map]
        groups["scale_map"] = [scene.maps.scale_map]
    return groups


def gradient_arrays(grads: Gradients, groups: dict) -> dict:
    """Flatten a Gradients record into the same structure as the groups."""
    out = {"tables": grads.tables,
           "decoder": [arr for pair in grads.decoder for arr in pair]}
    if "sh_map" in groups:
        out["sh_map"] = [grads.sh_map]
        out["scale_map"] = [grads.scale_map]
    return out


def step(state: AdamState, groups: dict, grads: dict, config: TrainConfig) -> AdamState:
    """One adaptive-moment update, in place, with bias correction."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, params in groups.items():
        lr = config.lr_for(name)
        gs = grads[name]
        if len(gs) != len(params):
            raise ValueError(f"group {name}: gradient/parameter count mismatch")
        for p, g, m, v in zip(params, gs, state.m[name], state.v[name]):
            if g.shape != p.shape:
                raise ValueError(f"group {name}: gradient shape {g.shape} "
                                 f"!= parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state


def train(scene: Scene, dataset, config: TrainConfig):
    """Optimize the scene against ground-truth views; returns (scene, history).

    The scene is updated in place. History rows appear every ``log_every``
    iterations (and on the last), each {"iteration", "loss"}. Geometry is
    never touched. A non-finite loss aborts with diagnostics.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    pool = collect_training_rays(scene, dataset)
    rng = np.random.default_rng(config.seed)
    groups = parameter_groups(scene, config.use_displacement)
    state = AdamState.for_groups(groups)
    history = []
    for it in range(config.iterations):
        idx = rng.integers(0, len(pool), size=config.batch_size)
        batch = pool.take(idx)
        grads = backward(scene, batch, config.use_displacement)
        if not np.isfinite(grads.loss):
            raise RuntimeError(
                f"non-finite loss {grads.loss} at iteration {it}; "
                f"table norm {max(float(np.abs(t).max()) for t in scene.field.tables):.3g}")
        step(state, groups, gradient_arrays(grads, groups), config)
        if (it + 1) % config.log_every == 0 or it + 1 == config.iterations:
            history.append({"iteration": it + 1, "loss": grads.loss})
    return scene, history
