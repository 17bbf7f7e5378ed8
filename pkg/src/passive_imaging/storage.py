"""Binary array bundles with JSON sidecars, and content hashing."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import FormatError


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def bundle_paths(stem):
    stem = Path(stem)
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def write_array_bundle(stem, array, meta: dict):
    """Write ``array`` as little-endian float64 plus a JSON sidecar.

    Complex arrays are stored with a trailing axis of length 2 (re, im) and
    flagged ``"complex": true`` in the sidecar. Returns the two paths.
    """
    arr = np.asarray(array)
    is_complex = np.iscomplexobj(arr)
    raw = np.stack([arr.real, arr.imag], axis=-1) if is_complex else arr
    bin_path, json_path = bundle_paths(stem)
    np.ascontiguousarray(raw, dtype="<f8").tofile(bin_path)
    sidecar = dict(meta)
    sidecar["shape"] = list(arr.shape)
    sidecar["complex"] = bool(is_complex)
    json_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    return bin_path, json_path


def read_array_bundle(stem):
    bin_path, json_path = bundle_paths(stem)
    try:
        meta = json.loads(json_path.read_text())
        shape = tuple(int(s) for s in meta["shape"])
        is_complex = bool(meta.get("complex", False))
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"unreadable sidecar {json_path}: {exc}")
    raw = np.fromfile(bin_path, dtype="<f8")
    full = shape + ((2,) if is_complex else ())
    if raw.size != int(np.prod(full)):
        raise FormatError(f"{bin_path} holds {raw.size} values, sidecar expects shape {full}")
    raw = raw.reshape(full)
    arr = raw[..., 0] + 1j * raw[..., 1] if is_complex else raw
    return arr, meta
