"""Parameter checkpoint I/O.

Layout: one ASCII manifest line (`name:d0,d1 name:d0,...\n`) followed by the
tensors' values as little-endian float32, concatenated in manifest order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import DatasetFormatError


def save_params(path, params):
    """params: dict name -> Parameter."""
    names = list(params)
    manifest = " ".join(
        f"{name}:{','.join(str(d) for d in params[name].value.data.shape)}" for name in names
    )
    with open(path, "wb") as fh:
        fh.write(manifest.encode("ascii") + b"\n")
        for name in names:
            fh.write(params[name].value.data.astype("<f4").tobytes())


def load_params(path, params):
    """Load values into an existing dict name -> Parameter (shapes must agree)."""
    with open(path, "rb") as fh:
        manifest = fh.readline()
        blob = fh.read()
    entries = []
    for item in manifest.decode("ascii").strip().split():
        name, _, dims = item.partition(":")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        entries.append((name, shape))
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        chunk = blob[offset * 4 : (offset + count) * 4]
        if len(chunk) != count * 4:
            raise DatasetFormatError(f"checkpoint truncated at tensor {name!r}", offset * 4)
        value = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        if name not in params:
            raise DatasetFormatError(f"unknown tensor {name!r} in checkpoint")
        if params[name].value.data.shape != shape:
            raise DatasetFormatError(f"shape mismatch for tensor {name!r}")
        params[name].value.data = value
        offset += count


def params_checksum(params):
    """Deterministic scalar fingerprint of all parameter values."""
    total = 0.0
    for name in sorted(params):
        total += float(np.abs(params[name].value.data).sum())
    return total


def clone_params(params, learnable=None):
    out = {}
    for name, p in params.items():
        flag = p.learnable if learnable is None else learnable
        out[name] = Parameter(p.value.data.copy(), learnable=flag)
    return out
