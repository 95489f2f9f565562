"""ERTG1 container: a short ASCII header followed by raw little-endian doubles.

::

    ERTG1
    kind=grid
    dims=32,32
    origin=-1.0,-1.0
    spacing=0.0625,0.0625
    meta.method=tv
    end
    <8 * prod(dims) bytes, or twice that when meta.complex=1>

Meta values are single-line strings; numbers are written with ``repr`` so
that reading and re-writing a container reproduces it byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

__all__ = ["KINDS", "ErtgContainer", "read_ertg", "write_ertg", "atomic_write",
           "encode_value", "decode_value"]

MAGIC = "ERTG1"
KINDS = ("grid", "sinogram", "scan", "stack", "coverage")


class ErtgError(ValueError):
    """Malformed container."""


def encode_value(value) -> str:
    """Single-line text for a meta value (floats via ``repr``, sequences comma-joined)."""
    if isinstance(value, str):
        if "\n" in value:
            raise ErtgError("meta values must be single-line")
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.ndarray) or isinstance(value, (list, tuple)):
        arr = np.asarray(value)
        if arr.ndim == 1 and arr.dtype.kind in "iuf":
            return ",".join(encode_value(v.item()) for v in arr)
    return json.dumps(value, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def decode_value(text: str):
    """Best-effort inverse of :func:`encode_value` (int, float, float list, JSON or str)."""
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if "," in text and not text.lstrip().startswith(("[", "{", '"')):
        try:
            return np.array([float(t) for t in text.split(",")])
        except ValueError:
            pass
    try:
        return json.loads(text)
    except ValueError:
        return text


def _floats(text):
    return np.array([float(t) for t in text.split(",")]) if text else np.zeros(0)


@dataclass
class ErtgContainer:
    kind: str
    values: np.ndarray
    origin: Optional[np.ndarray] = None
    spacing: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ErtgError(f"kind must be one of {KINDS}")
        self.values = np.asarray(self.values)
        if self.values.dtype.kind not in "fc":
            self.values = self.values.astype(float)
        nd = self.values.ndim
        self.origin = np.zeros(nd) if self.origin is None else np.asarray(self.origin, float)
        self.spacing = np.ones(nd) if self.spacing is None else np.asarray(self.spacing, float)
        if self.origin.size != nd or self.spacing.size != nd:
            raise ErtgError("origin/spacing length must match dims")
        self.meta = {str(k): encode_value(v) for k, v in self.meta.items()}

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def get(self, key, default=None):
        """Decoded meta value."""
        return decode_value(self.meta[key]) if key in self.meta else default

    def header(self) -> bytes:
        meta = dict(self.meta)
        if self.is_complex:
            meta["complex"] = "1"
        lines = [MAGIC, f"kind={self.kind}",
                 "dims=" + ",".join(str(d) for d in self.values.shape),
                 "origin=" + encode_value(self.origin),
                 "spacing=" + encode_value(self.spacing)]
        lines += [f"meta.{k}={v}" for k, v in meta.items()]
        lines.append("end")
        return ("\n".join(lines) + "\n").encode("ascii")

    def to_bytes(self) -> bytes:
        if self.is_complex:
            vals = np.ascontiguousarray(self.values, dtype="<c16")
        else:
            vals = np.ascontiguousarray(self.values, dtype="<f8")
        return self.header() + vals.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ErtgContainer":
        fields, meta = {}, {}
        pos = 0
        first = True
        while True:
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ErtgError("header not terminated by 'end'")
            try:
                line = data[pos:nl].decode("ascii")
            except UnicodeDecodeError as exc:
                raise ErtgError("header is not ASCII") from exc
            pos = nl + 1
            if first:
                if line != MAGIC:
                    raise ErtgError("not an ERTG1 container")
                first = False
                continue
            if line == "end":
                break
            key, sep, value = line.partition("=")
            if not sep:
                raise ErtgError(f"bad header line {line!r}")
            if key.startswith("meta."):
                meta[key[5:]] = value
            else:
                fields[key] = value
        for req in ("kind", "dims"):
            if req not in fields:
                raise ErtgError(f"header lacks {req}")
        dims = tuple(int(t) for t in fields["dims"].split(",")) if fields["dims"] else ()
        is_complex = meta.pop("complex", "0") == "1"
        count = int(np.prod(dims)) if dims else 1
        need = 8 * count * (2 if is_complex else 1)
        payload = data[pos:]
        if len(payload) != need:
            raise ErtgError(f"payload has {len(payload)} bytes, header implies {need}")
        dtype = "<c16" if is_complex else "<f8"
        values = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(
            complex if is_complex else float)
        return cls(fields["kind"], values, _floats(fields.get("origin", "")) if dims else None,
                   _floats(fields.get("spacing", "")) if dims else None, meta)


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temporary file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ertg(path, container: ErtgContainer) -> None:
    atomic_write(path, container.to_bytes())


def read_ertg(path) -> ErtgContainer:
    with open(path, "rb") as fh:
        return ErtgContainer.from_bytes(fh.read())
