"""Baked scene bundles: quantized textures + mesh + manifest on disk.

A bundle directory is the wire contract with any viewer:

    manifest.json   grid config, layouts, quantization params, decoder weights
    mesh.glb        the proxy mesh
    hash_L{i}.png   per-level hash tables reshaped 1D -> 2D, 8-bit RGBA
    disp_sh_{j}.png displacement SH coefficient planes (4 channels each)
    disp_scale.png  displacement scale texture (grayscale)

All quantization is affine 8-bit per texture (per level for the tables).
Exports are atomic (temp directory + rename) and deterministic: re-exporting
an imported bundle reproduces every byte.
"""

from __future__ import annotations

import json
import math
import os
import shutil
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .displacement import (DisplacementMaps, QuantizationParams,
                           dequantize_texture, quantize_texture, round_half_away)
from .fields import (DecoderWeights, HashGridConfig, HashGridField,
                     level_resolutions)
from .geometry import TriMesh
from .meshio import load_glb, save_glb
from .scene import Scene

FORMAT_VERSION = "mixrt-bundle/1"
MAX_TEXTURE_WIDTH = 4096


class BundleError(Exception):
    """Base class for bundle import/export failures."""


class MissingFileError(BundleError):
    pass


class DimensionMismatchError(BundleError):
    pass


class VersionError(BundleError):
    pass


class ManifestError(BundleError):
    pass


def save_png(path, array: np.ndarray) -> None:
    """Write an 8-bit PNG (no interlace). Accepts (H,W), (H,W,1..4) uint8."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("save_png expects uint8 data")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    mode = {2: "L", 3: None}[arr.ndim] if arr.ndim == 2 else \
        {1: "L", 3: "RGB", 4: "RGBA"}[arr.shape[2]]
    PilImage.fromarray(arr, mode=mode).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as uint8 with shape (H, W, C)."""
    if not os.path.exists(path):
        raise MissingFileError(f"missing file: {path}")
    with PilImage.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: expected 8-bit PNG")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def float_image_to_png(path, pixels: np.ndarray) -> None:
    """Store a [0,1] float image as standard 8-bit RGB."""
    arr = np.clip(np.asarray(pixels), 0.0, 1.0)
    save_png(path, round_half_away(arr * 255.0).astype(np.uint8))


def png_to_float_image(path) -> np.ndarray:
    arr = load_png(path).astype(np.float64) / 255.0
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def table_texture_dims(table_size: int) -> tuple[int, int]:
    """Width/height of the 2D layout: widest power-of-two W <= 4096."""
    w = 2 ** math.ceil(math.log2(math.sqrt(table_size)))
    w = min(w, MAX_TEXTURE_WIDTH)
    h = table_size // w
    if w * h != table_size:
        raise ValueError("table_size must be a power of two")
    return w, h


def reshape_table_2d(table: np.ndarray,
                     quant: QuantizationParams | None = None):
    """Quantize and lay out a (table_size, F) table as an (H, W, F) texture.

    Entry i lands at texel (x, y) = (i mod W, i div W). Returns the uint8
    codes and the params used (fresh ones when quant is None).
    """
    t, feat = table.shape
    w, h = table_texture_dims(t)
    if quant is None:
        codes, quant = quantize_texture(table)
    else:
        codes = np.clip(round_half_away((table - quant.minimum) / quant.step),
                        0, 255).astype(np.uint8)
    return codes.reshape(h, w, feat), quant


def flatten_table_2d(texture: np.ndarray, quant: QuantizationParams,
                     table_size: int) -> np.ndarray:
    """Invert reshape_table_2d back to a dequantized (table_size, F) array."""
    h, w, feat = texture.shape
    if h * w != table_size:
        raise ValueError(f"texture {w}x{h} does not hold {table_size} entries")
    return dequantize_texture(texture.reshape(table_size, feat), quant)


def _pack_planes(codes: np.ndarray) -> list[np.ndarray]:
    """Split an (H, W, C) code array into 4-channel planes, zero-padding the tail."""
    h, w, c = codes.shape
    planes = []
    for j in range(0, c, 4):
        plane = np.zeros((h, w, 4), dtype=np.uint8)
        chunk = codes[:, :, j:j + 4]
        plane[:, :, :chunk.shape[2]] = chunk
        planes.append(plane)
    return planes


def _unpack_planes(planes: list[np.ndarray], channels: int) -> np.ndarray:
    full = np.concatenate(planes, axis=2)
    return full[:, :, :channels]


def _decoder_to_json(decoder: DecoderWeights) -> list:
    return [{"weight": w.tolist(), "bias": b.tolist()} for w, b in decoder.layers]


def _decoder_from_json(layers: list) -> DecoderWeights:
    return DecoderWeights([(np.array(l["weight"], dtype=np.float64),
                            np.array(l["bias"], dtype=np.float64))
                           for l in layers])


def serialize_manifest(manifest: dict) -> str:
    """Canonical manifest text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def export_bundle(scene: Scene, path) -> dict:
    """Write the scene as a bundle directory; returns a summary with sizes.

    Tables and maps are quantized on the way out (stored params are reused
    when present, which makes export(import(x)) byte-identical to x). The
    directory is staged under a temp name and renamed into place.
    """
    path = Path(path)
    fld = scene.field
    for t in fld.tables:
        if not np.all(np.isfinite(t)):
            raise BundleError("cannot export non-finite hash tables")
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        save_glb(scene.mesh, tmp / "mesh.glb")

        w, h = table_texture_dims(fld.config.table_size)
        hash_entries = []
        stored = fld.table_quant or [None] * len(fld.tables)
        for lvl, table in enumerate(fld.tables):
            codes, quant = reshape_table_2d(table, stored[lvl])
            name = f"hash_L{lvl}.png"
            for j, plane in enumerate(_pack_planes(codes)):
                # feature_dim <= 4 keeps one plane; wider tables stack planes
                # vertically in the same file
                if j == 0:
                    stacked = plane
                else:
                    stacked = np.concatenate([stacked, plane], axis=0)
            save_png(tmp / name, stacked)
            hash_entries.append({
                "file": name, "width": w, "height": h,
                "channels": fld.config.feature_dim,
                "minimum": quant.minimum, "step": quant.step,
            })

        manifest = {
            "format": FORMAT_VERSION,
            "background": [float(c) for c in scene.background],
            "grid": {
                "num_levels": fld.config.num_levels,
                "table_size": fld.config.table_size,
                "feature_dim": fld.config.feature_dim,
                "min_resolution": fld.config.min_resolution,
                "max_resolution": fld.config.max_resolution,
            },
            "level_resolutions": list(fld.resolutions),
            "hash_textures": hash_entries,
            "decoder": _decoder_to_json(fld.decoder),
            "mesh": "mesh.glb",
        }

        if scene.maps is not None:
            maps = scene.maps
            if maps.sh_quant is not None:
                sh_codes = np.clip(round_half_away(
                    (maps.sh_map - maps.sh_quant.minimum) / maps.sh_quant.step),
                    0, 255).astype(np.uint8)
                sh_q = maps.sh_quant
            else:
                sh_codes, sh_q = quantize_texture(maps.sh_map)
            if maps.scale_quant is not None:
                scale_codes = np.clip(round_half_away(
                    (maps.scale_map - maps.scale_quant.minimum)
                    / maps.scale_quant.step), 0, 255).astype(np.uint8)
                scale_q = maps.scale_quant
            else:
                scale_codes, scale_q = quantize_texture(maps.scale_map)
            sh_files = []
            for j, plane in enumerate(_pack_planes(sh_codes)):
                name = f"disp_sh_{j}.png"
                save_png(tmp / name, plane)
                sh_files.append(name)
            save_png(tmp / "disp_scale.png", scale_codes[:, :, 0])
            manifest["displacement"] = {
                "resolution": maps.resolution,
                "sh_degree": maps.sh_degree,
                "sh": {"files": sh_files, "minimum": sh_q.minimum,
                       "step": sh_q.step},
                "scale": {"file": "disp_scale.png", "minimum": scale_q.minimum,
                          "step": scale_q.step},
            }

        (tmp / "manifest.json").write_text(serialize_manifest(manifest),
                                           encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise

    files = sorted(p.name for p in path.iterdir())
    total = sum((path / f).stat().st_size for f in files)
    return {"path": str(path), "bytes": total, "files": files}


def _parse_version(tag: str) -> int:
    prefix = "mixrt-bundle/"
    if not isinstance(tag, str) or not tag.startswith(prefix):
        raise VersionError(f"unknown bundle format: {tag!r}")
    try:
        return int(tag[len(prefix):])
    except ValueError:
        raise VersionError(f"unknown bundle format: {tag!r}") from None


def import_bundle(path) -> Scene:
    """Load a bundle directory back into a renderable scene.

    Every texture is dequantized through the manifest's affine params, and the
    params stay attached so a re-export is byte-stable. Errors are specific:
    missing files, dimension mismatches (naming the file), unknown versions.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise MissingFileError(f"missing file: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest.json is not valid JSON: {e}") from None

    major = _parse_version(manifest.get("format", ""))
    if major != 1:
        raise VersionError(f"bundle format major {major} not supported")

    try:
        grid = manifest["grid"]
        config = HashGridConfig(
            num_levels=grid["num_levels"], table_size=grid["table_size"],
            feature_dim=grid["feature_dim"],
            min_resolution=grid["min_resolution"],
            max_resolution=grid["max_resolution"])
    except (KeyError, TypeError) as e:
        raise ManifestError(f"manifest grid config invalid: {e}") from None
    resolutions = level_resolutions(config)
    if list(manifest.get("level_resolutions", [])) != resolutions:
        raise ManifestError(
            f"manifest level_resolutions {manifest.get('level_resolutions')} "
            f"do not match grid config (expected {resolutions})")

    mesh_file = path / manifest.get("mesh", "mesh.glb")
    if not mesh_file.exists():
        raise MissingFileError(f"missing file: {mesh_file}")
    mesh = load_glb(mesh_file)

    w, h = table_texture_dims(config.table_size)
    n_planes = math.ceil(config.feature_dim / 4)
    tables = []
    quants = []
    entries = manifest.get("hash_textures", [])
    if len(entries) != config.num_levels:
        raise ManifestError(
            f"manifest lists {len(entries)} hash textures for "
            f"{config.num_levels} levels")
    for lvl, entry in enumerate(entries):
        tex_path = path / entry["file"]
        arr = load_png(tex_path)
        if arr.shape[0] != h * n_planes or arr.shape[1] != w or arr.shape[2] != 4:
            raise DimensionMismatchError(
                f"{tex_path}: expected {w}x{h * n_planes}x4, got "
                f"{arr.shape[1]}x{arr.shape[0]}x{arr.shape[2]}")
        planes = [arr[h * j:h * (j + 1)] for j in range(n_planes)]
        codes = _unpack_planes(planes, config.feature_dim)
        quant = QuantizationParams(entry["minimum"], entry["step"])
        tables.append(flatten_table_2d(codes, quant, config.table_size))
        quants.append(quant)

    decoder = _decoder_from_json(manifest["decoder"])
    field = HashGridField(config, tables, decoder, table_quant=quants)

    maps = None
    if "displacement" in manifest:
        d = manifest["displacement"]
        r = d["resolution"]
        degree = d["sh_degree"]
        channels = 3 * (degree + 1) ** 2
        planes = []
        for name in d["sh"]["files"]:
            tex_path = path / name
            arr = load_png(tex_path)
            if arr.shape[0] != r or arr.shape[1] != r or arr.shape[2] != 4:
                raise DimensionMismatchError(
                    f"{tex_path}: expected {r}x{r}x4, got "
                    f"{arr.shape[1]}x{arr.shape[0]}x{arr.shape[2]}")
            planes.append(arr)
        if len(planes) != math.ceil(channels / 4):
            raise ManifestError(
                f"displacement lists {len(planes)} sh planes for "
                f"{channels} channels")
        sh_codes = _unpack_planes(planes, channels)
        sh_q = QuantizationParams(d["sh"]["minimum"], d["sh"]["step"])
        scale_path = path / d["scale"]["file"]
        scale_arr = load_png(scale_path)
        if scale_arr.shape[0] != r or scale_arr.shape[1] != r \
                or scale_arr.shape[2] != 1:
            raise DimensionMismatchError(
                f"{scale_path}: expected {r}x{r}x1, got "
                f"{scale_arr.shape[1]}x{scale_arr.shape[0]}x{scale_arr.shape[2]}")
        scale_q = QuantizationParams(d["scale"]["minimum"], d["scale"]["step"])
        maps = DisplacementMaps(
            resolution=r, sh_degree=degree,
            sh_map=dequantize_texture(sh_codes, sh_q),
            scale_map=dequantize_texture(scale_arr, scale_q),
            sh_quant=sh_q, scale_quant=scale_q)

    return Scene(mesh=mesh, field=field, maps=maps,
                 background=np.array(manifest.get("background", [0, 0, 0])))
