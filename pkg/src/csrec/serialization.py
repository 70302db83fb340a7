"""Canonical JSON: sorted keys, 17 significant digits, LF newlines.

The same bytes come out for the same value on every run, so content hashes
of datasets and checkpoints are stable.
"""
from __future__ import annotations

import hashlib
import json
import math

import numpy as np

FORMAT_VERSION = 1


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite number {x!r} cannot be serialized")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, out: list):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for k, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {key!r}")
            if k:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        if isinstance(obj, np.ndarray):
            obj = obj.tolist()
        out.append("[")
        for k, v in enumerate(obj):
            if k:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Serialize ``obj`` to a single-line canonical JSON string."""
    out: list = []
    _encode(obj, out)
    return "".join(out)


def dump_file(obj, path) -> bytes:
    data = (dumps(obj) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def dump_jsonl(records, path) -> bytes:
    data = "".join(dumps(r) + "\n" for r in records).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_file(path):
    with open(path, "rb") as fh:
        return json.loads(fh.read().decode("utf-8"))


def load_jsonl(path):
    with open(path, "rb") as fh:
        return [json.loads(line) for line in fh.read().decode("utf-8").splitlines() if line.strip()]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())
