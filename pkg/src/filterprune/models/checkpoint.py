"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes   b"FPRUNECK"
    version      u16       currently 1
    meta_len     u32       byte length of the JSON meta block
    meta         utf-8 JSON {"meta": {...}, "layers": [...]}
    n_records    u32
    record * n_records:
        name_len u16
        name     utf-8
        dtype    u8        1 = float32, 2 = float64
        rank     u8
        extents  u32 * rank
        values   raw little-endian, product(extents) * itemsize bytes

Records hold parameters (``<layer>.weight`` ...) followed by BN running
buffers (``<layer>.running_mean`` ...). The layer list is stored so compacted
models with reduced widths reload without rebuilding from a depth label.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..exceptions import FormatError, IncompatibilityError
from ..tensor.tensor import Tensor
from .graph import LayerSpec, ModelGraph

MAGIC = b"FPRUNECK"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}
META_KEYS = ("depth", "width_scale", "num_classes", "input_shape")


def save_checkpoint(model: ModelGraph) -> bytes:
    header = json.dumps(
        {"meta": model.meta, "layers": [spec.to_dict() for spec in model.layers]},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    records = [(name, t.data) for name, t in model.params.items()]
    records += list(model.buffers.items())
    chunks.append(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise FormatError(f"cannot serialize dtype {arr.dtype} of {name!r}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = memoryview(payload)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated: needed {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(payload: bytes, expected_meta: dict | None = None) -> ModelGraph:
    """Rebuild a :class:`ModelGraph` from :func:`save_checkpoint` bytes.

    When ``expected_meta`` is given, architecture fields are compared and, for
    uncompacted checkpoints, each tensor shape is checked against a freshly
    built reference so the error names the first offending tensor.
    """
    r = _Reader(payload)
    if bytes(r.take(len(MAGIC))) != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    version, meta_len = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(bytes(r.take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt meta block: {exc}") from exc
    (n_records,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = bytes(r.take(name_len)).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"record {name!r}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _TAG_DTYPES[tag]
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * dt.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after last record")

    meta = header["meta"]
    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    if expected_meta is not None:
        _check_compatible(meta, arrays, expected_meta)

    buffer_names = {n for n in arrays if n.endswith((".running_mean", ".running_var"))}
    params = {n: Tensor(a, requires_grad=True, name=n, dtype=a.dtype) for n, a in arrays.items() if n not in buffer_names}
    buffers = {n: arrays[n] for n in buffer_names}
    try:
        return ModelGraph(layers, params, buffers, meta)
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing tensor {exc}") from exc


def _check_compatible(meta: dict, arrays: dict[str, np.ndarray], expected: dict) -> None:
    if not meta.get("compacted") and all(k in expected for k in ("depth", "num_classes", "input_shape")):
        from .resnet import build_resnet

        reference = build_resnet(
            expected["depth"],
            expected.get("width_scale", 1.0),
            expected["input_shape"],
            expected["num_classes"],
        )
        for name, t in reference.params.items():
            if name not in arrays:
                raise IncompatibilityError(f"tensor {name!r} expected by the architecture is absent from the checkpoint")
            if arrays[name].shape != t.shape:
                raise IncompatibilityError(
                    f"tensor {name!r} has shape {arrays[name].shape} in the checkpoint, expected {t.shape}"
                )
    for key in META_KEYS:
        if key in expected and _norm(meta.get(key)) != _norm(expected[key]):
            raise IncompatibilityError(f"meta field {key!r} is {meta.get(key)!r} in the checkpoint, expected {expected[key]!r}")


def _norm(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    if isinstance(v, float):
        return round(v, 12)
    return v
