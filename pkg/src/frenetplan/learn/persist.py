"""Policy weight files: a flat binary blob plus a JSON sidecar.

Binary layout (little-endian)::

    b"FPW\\x00"            magic
    uint32 version         currently 1
    uint32 n_arrays
    per array: uint32 ndim, then ndim x uint32 dims
    float64 data of every array, row-major, in header order

The sidecar ``<path>.json`` records the policy kind, widths, activation,
normalization constants and seed needed to rebuild the object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from .networks import POS_SCALE, CvaePolicy, MlpPolicy, OutputSpec

MAGIC = b"FPW\x00"
VERSION = 1


def write_arrays(path, arrays) -> None:
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in arrays]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        for a in arrays:
            fh.write(a.tobytes(order="C"))


def read_arrays(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParameterError(f"{path}: not a weight file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ParameterError(f"{path}: unsupported weight-file version {version}")
    off = 12
    shapes = []
    for _ in range(n):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shapes.append(struct.unpack_from(f"<{ndim}I", data, off))
        off += 4 * ndim
    out = []
    for shape in shapes:
        count = int(np.prod(shape))
        if off + 8 * count > len(data):
            raise ParameterError(f"{path}: truncated weight data")
        out.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy())
        off += 8 * count
    if off != len(data):
        raise ParameterError(f"{path}: {len(data) - off} trailing bytes")
    return out


def save_policy(policy, path, seed: int = 0, extra: dict | None = None) -> None:
    write_arrays(path, policy.params)
    meta = {
        "kind": policy.kind,
        "hidden": list(policy.hidden),
        "activation": "tanh",
        "m_seg": policy.spec.m_seg,
        "n_xi": policy.spec.n_xi,
        "v_max": policy.spec.v_max,
        "position_scale": POS_SCALE,
        "speed_scale": policy.spec.v_max,
        "seed": seed,
    }
    if isinstance(policy, CvaePolicy):
        meta["latent_dim"] = policy.latent_dim
        meta["n_steps"] = policy.n_steps
    if extra:
        meta.update(extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_policy(path):
    side = Path(str(path) + ".json")
    if not side.exists():
        raise ParameterError(f"missing metadata sidecar {side}")
    meta = json.loads(side.read_text())
    params = read_arrays(path)
    spec = OutputSpec(m_seg=meta["m_seg"], n_xi=meta["n_xi"], v_max=meta["v_max"])
    if meta["kind"] == "mlp":
        return MlpPolicy(spec, hidden=meta["hidden"], params=params)
    if meta["kind"] == "cvae":
        return CvaePolicy(spec, n_steps=meta["n_steps"], latent_dim=meta["latent_dim"],
                          hidden=meta["hidden"], params=params)
    raise ParameterError(f"unknown policy kind {meta['kind']!r}")
