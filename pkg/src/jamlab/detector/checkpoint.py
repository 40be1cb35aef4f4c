"""``JNET`` checkpoint files.

Layout (little-endian)::

    4s   magic "JNET"
    u16  format version
    u16  reserved
    32s  sha256 of the network spec JSON
    u64  init_seed
    u32  spec JSON length, followed by the JSON bytes
    u64  parameter count
    f32  parameters, PARAM_ORDER, each C-contiguous
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CheckpointError
from .network import PARAM_ORDER, DetectorModel, NetworkSpec

MAGIC = b"JNET"
VERSION = 1
_HEAD = struct.Struct("<4sHH32sQI")
_COUNT = struct.Struct("<Q")


def save_model(model: DetectorModel, path):
    spec_json = model.spec.to_json().encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, 0, model.spec.fingerprint(), model.init_seed, len(spec_json)))
        fh.write(spec_json)
        fh.write(_COUNT.pack(model.n_params()))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def read_header(path):
    with open(path, "rb") as fh:
        blob = fh.read(_HEAD.size)
        if len(blob) < _HEAD.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, _, fp, seed, n_json = _HEAD.unpack(blob)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        spec_json = fh.read(n_json)
        count = fh.read(_COUNT.size)
    if len(spec_json) < n_json or len(count) < _COUNT.size:
        raise CheckpointError(f"{path}: truncated header")
    try:
        spec = NetworkSpec(**json.loads(spec_json))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable network spec ({exc})") from exc
    if spec.fingerprint() != fp:
        raise CheckpointError(f"{path}: spec fingerprint mismatch")
    return {"magic": "JNET", "version": version, "fingerprint": fp.hex(), "init_seed": seed,
            "spec": spec, "n_params": _COUNT.unpack(count)[0],
            "offset": _HEAD.size + n_json + _COUNT.size}


def load_model(path, expected_spec: NetworkSpec | None = None) -> DetectorModel:
    hdr = read_header(path)
    spec = hdr["spec"]
    if expected_spec is not None and expected_spec != spec:
        raise CheckpointError(f"{path}: checkpoint spec {spec} does not match expected {expected_spec}")
    shapes = spec.param_shapes()
    total = sum(int(np.prod(shapes[n])) for n in PARAM_ORDER)
    if hdr["n_params"] != total:
        raise CheckpointError(f"{path}: header declares {hdr['n_params']} parameters, spec needs {total}")
    data = np.fromfile(path, dtype="<f4", offset=hdr["offset"])
    if data.size != total:
        raise CheckpointError(f"{path}: expected {total} parameters, file holds {data.size}")
    params, pos = {}, 0
    for name in PARAM_ORDER:
        n = int(np.prod(shapes[name]))
        params[name] = data[pos:pos + n].reshape(shapes[name]).astype(np.float32)
        pos += n
    return DetectorModel(spec, hdr["init_seed"], np.float32, params)
