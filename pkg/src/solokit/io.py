"""File formats: RLE-JSON instance sets, binary tensors, key=value reports."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from solokit.masks import BinaryMask, Instance, InstanceSet, RleError, RleMask, rle_decode, rle_encode


class InputError(ValueError):
    """Malformed input file; the message names the offending field."""


_TENSOR_HEADER = struct.Struct("<III")


def instances_to_json(s: InstanceSet) -> dict:
    out = []
    for inst in s:
        if not isinstance(inst.mask, BinaryMask):
            raise TypeError("RLE-JSON stores binary masks only")
        out.append({"score": inst.score, "class": inst.class_id, "counts": list(rle_encode(inst.mask).counts)})
    return {"height": s.height, "width": s.width, "instances": out}


def _field(doc, key, where, kind):
    if not isinstance(doc, dict) or key not in doc:
        raise InputError(f"{where}: missing field '{key}'")
    value = doc[key]
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise InputError(f"{where}: field '{key}' has wrong type {type(value).__name__}")
    return value


def instances_from_json(doc) -> InstanceSet:
    h = _field(doc, "height", "document", int)
    w = _field(doc, "width", "document", int)
    if h < 0 or w < 0:
        raise InputError("document: field 'height'/'width' must be non-negative")
    items = _field(doc, "instances", "document", list)
    instances = []
    for k, item in enumerate(items):
        where = f"instances[{k}]"
        score = float(_field(item, "score", where, float))
        cls = _field(item, "class", where, int)
        counts = _field(item, "counts", where, list)
        if not 0.0 <= score <= 1.0:
            raise InputError(f"{where}: field 'score' outside [0, 1]")
        if cls < 0:
            raise InputError(f"{where}: field 'class' must be non-negative")
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
            raise InputError(f"{where}: field 'counts' must hold integers")
        try:
            mask = rle_decode(RleMask(h, w, tuple(counts)))
        except RleError as exc:
            raise InputError(f"{where}: field 'counts' invalid: {exc}") from None
        instances.append(Instance(score, cls, mask))
    return InstanceSet(h, w, tuple(instances))


def read_instances(path) -> InstanceSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})") from None
    return instances_from_json(doc)


def write_instances(path, s: InstanceSet) -> None:
    Path(path).write_text(json.dumps(instances_to_json(s)) + "\n")


def write_tensor(path, t: np.ndarray) -> None:
    """(H, W, C) float64 array as three little-endian uint32 extents plus little-endian doubles."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[..., None]
    if t.ndim != 3:
        raise ValueError(f"expected a 3-D tensor, got shape {t.shape}")
    with open(path, "wb") as fh:
        fh.write(_TENSOR_HEADER.pack(*t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _TENSOR_HEADER.size:
        raise InputError(f"{path}: truncated tensor header")
    h, w, c = _TENSOR_HEADER.unpack_from(raw)
    body = raw[_TENSOR_HEADER.size:]
    if len(body) != 8 * h * w * c:
        raise InputError(f"{path}: tensor body has {len(body)} bytes, header implies {8 * h * w * c}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(h, w, c)


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_report(metrics: Mapping[str, object]) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in metrics.items())
