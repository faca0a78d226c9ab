"""Triangle mesh file I/O: glTF 2.0 (.glb binary, .gltf embedded) and OBJ.

Meshes are written with exactly the attributes the pipeline needs: POSITION
(float32 VEC3), TEXCOORD_0 (float32 VEC2), and uint32 indices, a single
primitive in a single mesh. The reader accepts that subset plus the common
index component types. A mesh without texture coordinates loads with all-zero
UVs.
"""

from __future__ import annotations

import base64
import json
import struct
from pathlib import Path

import numpy as np

from .geometry import TriMesh

GLB_MAGIC = 0x46546C67
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

_COMPONENT_DTYPES = {
    5121: np.uint8,
    5123: np.uint16,
    5125: np.uint32,
    5126: np.float32,
}
_TYPE_WIDTHS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3}


def _align4(n: int) -> int:
    return (n + 3) & ~3


def _gltf_document(mesh: TriMesh):
    """Build (json dict, binary buffer) for a single-primitive glTF asset."""
    indices = mesh.indices.astype(np.uint32)
    positions = mesh.positions.astype(np.float32)
    uvs = mesh.uvs.astype(np.float32)

    blobs = [indices.tobytes(), positions.tobytes(), uvs.tobytes()]
    views = []
    buf = bytearray()
    for i, blob in enumerate(blobs):
        offset = len(buf)
        buf.extend(blob)
        buf.extend(b"\0" * (_align4(len(buf)) - len(buf)))
        target = 34963 if i == 0 else 34962   # ELEMENT_ARRAY vs ARRAY buffer
        views.append({"buffer": 0, "byteOffset": offset, "byteLength": len(blob),
                      "target": target})

    pos_min = positions.min(axis=0) if len(positions) else np.zeros(3, np.float32)
    pos_max = positions.max(axis=0) if len(positions) else np.zeros(3, np.float32)
    doc = {
        "asset": {"version": "2.0"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{
            "attributes": {"POSITION": 1, "TEXCOORD_0": 2},
            "indices": 0,
            "mode": 4,
        }]}],
        "buffers": [{"byteLength": len(buf)}],
        "bufferViews": views,
        "accessors": [
            {"bufferView": 0, "componentType": 5125, "count": int(indices.size),
             "type": "SCALAR"},
            {"bufferView": 1, "componentType": 5126, "count": len(positions),
             "type": "VEC3", "min": [float(v) for v in pos_min],
             "max": [float(v) for v in pos_max]},
            {"bufferView": 2, "componentType": 5126, "count": len(uvs),
             "type": "VEC2"},
        ],
    }
    return doc, bytes(buf)


def save_glb(mesh: TriMesh, path) -> None:
    doc, buf = _gltf_document(mesh)
    js = json.dumps(doc, separators=(",", ":")).encode("utf-8")
    js += b" " * (_align4(len(js)) - len(js))
    buf += b"\0" * (_align4(len(buf)) - len(buf))
    total = 12 + 8 + len(js) + 8 + len(buf)
    with open(path, "wb") as f:
        f.write(struct.pack("<III", GLB_MAGIC, 2, total))
        f.write(struct.pack("<II", len(js), CHUNK_JSON))
        f.write(js)
        f.write(struct.pack("<II", len(buf), CHUNK_BIN))
        f.write(buf)


def save_gltf(mesh: TriMesh, path) -> None:
    """Single-file .gltf with the buffer embedded as a data URI."""
    doc, buf = _gltf_document(mesh)
    uri = "data:application/octet-stream;base64," + base64.b64encode(buf).decode()
    doc["buffers"][0]["uri"] = uri
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def _read_glb(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"{path}: not a glb file")
    magic, version, _ = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC:
        raise ValueError(f"{path}: bad glb magic")
    if version != 2:
        raise ValueError(f"{path}: unsupported glb version {version}")
    offset = 12
    doc = None
    buf = b""
    while offset + 8 <= len(data):
        length, kind = struct.unpack_from("<II", data, offset)
        offset += 8
        chunk = data[offset:offset + length]
        offset += _align4(length)
        if kind == CHUNK_JSON:
            doc = json.loads(chunk.decode("utf-8"))
        elif kind == CHUNK_BIN:
            buf = chunk
    if doc is None:
        raise ValueError(f"{path}: glb missing JSON chunk")
    return doc, buf


def _resolve_buffer(doc, path) -> bytes:
    entry = doc["buffers"][0]
    uri = entry.get("uri")
    if uri is None:
        raise ValueError(f"{path}: buffer has no uri and no binary chunk")
    if uri.startswith("data:"):
        b64 = uri.split(",", 1)[1]
        return base64.b64decode(b64)
    return (Path(path).parent / uri).read_bytes()


def _read_accessor(doc, buf: bytes, index: int) -> np.ndarray:
    acc = doc["accessors"][index]
    view = doc["bufferViews"][acc["bufferView"]]
    dtype = _COMPONENT_DTYPES[acc["componentType"]]
    width = _TYPE_WIDTHS[acc["type"]]
    itemsize = np.dtype(dtype).itemsize * width
    stride = view.get("byteStride", itemsize)
    if stride != itemsize:
        raise ValueError("interleaved (strided) accessors are not supported")
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    count = acc["count"]
    raw = buf[start:start + count * itemsize]
    return np.frombuffer(raw, dtype=dtype).reshape(count, width).copy()


def _mesh_from_gltf(doc, buf, path) -> TriMesh:
    meshes = doc.get("meshes") or []
    if not meshes:
        raise ValueError(f"{path}: no meshes in file")
    prim = meshes[0]["primitives"][0]
    if prim.get("mode", 4) != 4:
        raise ValueError(f"{path}: only triangle primitives supported")
    attrs = prim["attributes"]
    positions = _read_accessor(doc, buf, attrs["POSITION"]).astype(np.float64)
    if "TEXCOORD_0" in attrs:
        uvs = _read_accessor(doc, buf, attrs["TEXCOORD_0"]).astype(np.float64)
    else:
        uvs = np.zeros((len(positions), 2))
    if "indices" in prim:
        indices = _read_accessor(doc, buf, prim["indices"]).reshape(-1, 3)
    else:
        indices = np.arange(len(positions), dtype=np.int64).reshape(-1, 3)
    return TriMesh(positions, uvs, indices.astype(np.int64))


def load_glb(path) -> TriMesh:
    doc, buf = _read_glb(path)
    if not buf:
        buf = _resolve_buffer(doc, path)
    return _mesh_from_gltf(doc, buf, path)


def load_gltf(path) -> TriMesh:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    buf = _resolve_buffer(doc, path)
    return _mesh_from_gltf(doc, buf, path)


def save_obj(mesh: TriMesh, path) -> None:
    """OBJ with one vt per vertex; faces reference v/vt by the same index."""
    with open(path, "w", encoding="utf-8") as f:
        for p in mesh.positions:
            f.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for uv in mesh.uvs:
            f.write(f"vt {uv[0]:.9g} {uv[1]:.9g}\n")
        for a, b, c in mesh.indices + 1:
            f.write(f"f {a}/{a} {b}/{b} {c}/{c}\n")


def load_obj(path) -> TriMesh:
    """OBJ reader: v/vt/f, fan-triangulated polygons, negative indices.

    Vertices are split per unique (position index, uv index) pair so UVs stay
    per-vertex; a file without vt lines gets zero UVs.
    """
    raw_v, raw_vt = [], []
    corners = []   # list of faces, each a list of (vi, ti)
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                raw_v.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                raw_vt.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                face = []
                for token in parts[1:]:
                    fields = token.split("/")
                    vi = int(fields[0])
                    vi = vi - 1 if vi > 0 else len(raw_v) + vi
                    ti = -1
                    if len(fields) > 1 and fields[1]:
                        ti = int(fields[1])
                        ti = ti - 1 if ti > 0 else len(raw_vt) + ti
                    face.append((vi, ti))
                for k in range(1, len(face) - 1):
                    corners.append([face[0], face[k], face[k + 1]])
    pair_index: dict[tuple[int, int], int] = {}
    positions, uvs, indices = [], [], []
    for face in corners:
        tri = []
        for vi, ti in face:
            key = (vi, ti)
            if key not in pair_index:
                pair_index[key] = len(positions)
                positions.append(raw_v[vi])
                uvs.append(raw_vt[ti] if ti >= 0 else [0.0, 0.0])
            tri.append(pair_index[key])
        indices.append(tri)
    if not positions:
        raise ValueError(f"{path}: no geometry found")
    return TriMesh(np.array(positions), np.array(uvs),
                   np.array(indices, dtype=np.int64))


def save_mesh(mesh: TriMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        save_obj(mesh, path)
    elif suffix == ".glb":
        save_glb(mesh, path)
    elif suffix == ".gltf":
        save_gltf(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format: {suffix}")


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".glb":
        return load_glb(path)
    if suffix == ".gltf":
        return load_gltf(path)
    raise ValueError(f"unsupported mesh format: {suffix}")
