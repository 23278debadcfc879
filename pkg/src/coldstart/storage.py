"""Deterministic .npz writing and versioned-artifact helpers.

``numpy.savez`` stamps zip entries with the current time, which breaks
byte-for-byte reproducibility of artifacts. ``save_arrays`` writes the same
container format (readable by ``numpy.load``) with a fixed timestamp.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: str | Path, **arrays: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        return {name: data[name] for name in data.files}


def check_version(path: str | Path, found: int, expected: int, kind: str) -> None:
    if found != expected:
        raise ValueError(
            f"{kind} file {path} has format version {found}, "
            f"this build expects {expected}; regenerate the artifact"
        )


def encode_json(obj) -> np.ndarray:
    """JSON payload as a 0-d unicode array, for embedding in .npz files."""
    return np.asarray(json.dumps(obj, sort_keys=True))


def decode_json(arr: np.ndarray):
    return json.loads(str(arr))


def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
