"""Mesh + view-dependent displacement + hash-grid field scene representation.

A scene is a low-poly proxy mesh, a pair of displacement textures that shift
ray-mesh hit points per view direction, and a multi-resolution hashed feature
grid decoded by a small MLP. The package trains such scenes from posed images,
renders them on the CPU, and bakes them into PNG/glTF/JSON bundles that a
browser viewer can replay in real time.
"""

from .displacement import (DisplacementMaps, QuantizationParams, calibrate,
                           quantize_maps, sample_maps)
from .fields import (DecoderWeights, HashGridConfig, HashGridField, RaySample,
                     ShBasis, composite, contract, decode, encode, hash_index,
                     level_resolutions, sh_eval)
from .geometry import (BvhAccel, RayHit, TriMesh, build_bvh, cluster_simplify,
                       intersect, intersect_batch, propagate_uvs)
from .renderer import (Camera, Image, RenderSettings, bench_levels,
                       bench_table_sizes, generate_ray, psnr, render_mixrt,
                       render_volumetric_reference)
from .scene import Scene
from .trainer import (AdamState, Gradients, TrainBatch, TrainConfig, backward,
                      loss, step, train)
from .assets import export_bundle, import_bundle, reshape_table_2d

__all__ = [
    "AdamState", "BvhAccel", "Camera", "DecoderWeights", "DisplacementMaps",
    "Gradients", "HashGridConfig", "HashGridField", "Image",
    "QuantizationParams", "RayHit", "RaySample", "RenderSettings", "Scene",
    "ShBasis", "TrainBatch", "TrainConfig", "TriMesh", "backward",
    "bench_levels", "bench_table_sizes", "build_bvh", "calibrate",
    "cluster_simplify", "composite", "contract", "decode", "encode",
    "export_bundle", "generate_ray", "hash_index", "import_bundle",
    "intersect", "intersect_batch", "level_resolutions", "loss",
    "propagate_uvs", "psnr", "quantize_maps", "render_mixrt",
    "render_volumetric_reference", "reshape_table_2d", "sample_maps",
    "sh_eval", "step", "train",
]
