"""Serialization for arrays, motions, and anchor sets.

Arrays (motions, codebooks, parameter matrices) share one container with two
encodings, chosen by file suffix:

* ``.json``: ``{"shape": [...], "data": [...]}`` with row-major values.
  Floats are written with repr precision, so a round-trip is bit-exact.
* anything else: binary, little-endian: the 6-byte magic ``b"ARRC1\\n"``,
  a uint32 rank, rank uint64 dimensions, then float64 values in C order.

Anchor sets exchange as JSON documents::

    {"family": "root3d" | "planar_root" | "body_point",
     "joint": int?,            # body_point only
     "anchors": [{"frame": int, "target": [floats]}]}

The family's residual tolerance is a solver-side setting and is not part of
the document; it is supplied when loading.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .motion import BODY_POINT, ControlFamily, Motion
from .scaffold import Anchor, AnchorSet

_MAGIC = b"ARRC1\n"


def save_array(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    array = np.asarray(array, dtype=np.float64)
    if path.suffix == ".json":
        doc = {"shape": list(array.shape), "data": array.reshape(-1).tolist()}
        path.write_text(json.dumps(doc))
        return
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.astype("<f8").tobytes(order="C"))


def load_array(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path} is not an array container")
    offset = len(_MAGIC)
    (ndim,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    data = np.frombuffer(raw, dtype="<f8", offset=offset)
    return data.reshape(shape).astype(np.float64)


def save_motion(path: str | Path, motion: Motion) -> None:
    save_array(path, motion.positions)


def load_motion(path: str | Path) -> Motion:
    return Motion(load_array(path))


def save_anchors(path: str | Path, anchors: AnchorSet) -> None:
    doc: dict = {"family": anchors.family.variant}
    if anchors.family.variant == BODY_POINT:
        doc["joint"] = anchors.family.joint
    doc["anchors"] = [
        {"frame": a.frame, "target": a.target.tolist()} for a in anchors.anchors
    ]
    Path(path).write_text(json.dumps(doc))


def load_anchors(path: str | Path, tolerance: float = 0.05) -> AnchorSet:
    doc = json.loads(Path(path).read_text())
    variant = doc["family"]
    joint = doc.get("joint")
    family = ControlFamily(variant, tolerance, joint if variant == BODY_POINT else None)
    anchors = tuple(
        Anchor(entry["frame"], np.asarray(entry["target"], dtype=np.float64))
        for entry in doc["anchors"]
    )
    return AnchorSet(family, anchors)
