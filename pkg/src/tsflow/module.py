"""The fit/transform contract shared by every algorithm, plus the type registry.

A module is configured by scalar parameters only. Anything learned by ``fit``
lives in an immutable :class:`ModuleState` whose ``blob`` is produced by the
module itself, so saving a state is just framing those bytes.

State file framing (all integers big-endian)::

    8 bytes   magic  b"TSFLWST\\x00"
    2 bytes   format version
    2 bytes   type_id length, then the UTF-8 type_id
    1 byte    fitted flag
    4 bytes   payload length, then the payload
    4 bytes   CRC-32 over everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from .core import DataSet, concat_time
from .errors import (
    CorruptState,
    InsufficientData,
    InvalidParameter,
    NotFitted,
    NotTrainable,
    SchemaMismatch,
    UnboundedLookback,
    UnknownTypeId,
)

STATE_MAGIC = b"TSFLWST\x00"
STATE_FORMAT_VERSION = 1

Param = Any  # int | float | str | bool | None


@dataclass(frozen=True)
class ModuleDescriptor:
    type_id: str
    params: Mapping[str, Param]
    requires_fit: bool
    lookback: int | None  # None: output at t may depend on the whole series
    resamples: bool = False


@dataclass(frozen=True)
class ModuleState:
    fitted: bool = False
    blob: bytes = b""


EMPTY_STATE = ModuleState()


class Module:
    """Base class for every algorithm that can sit in a step.

    Subclasses set ``type_id`` and override :meth:`apply`; trainable ones set
    ``requires_fit`` and override :meth:`fit_payload`. :meth:`check` holds the
    strict preconditions of ``transform``; the online runner skips it so that
    warm-up windows shorter than the lookback produce the same NaN/pad rows a
    batch run would.
    """

    type_id: ClassVar[str] = ""
    requires_fit: ClassVar[bool] = False
    resamples: ClassVar[bool] = False
    min_rows: ClassVar[int] = 1

    def __init__(self, **params: Param) -> None:
        self.params: dict[str, Param] = dict(params)

    @property
    def lookback(self) -> int | None:
        return 0

    def descriptor(self) -> ModuleDescriptor:
        return ModuleDescriptor(self.type_id, dict(self.params), self.requires_fit, self.lookback, self.resamples)

    def spec(self) -> dict[str, Any]:
        return {"type_id": self.type_id, "params": dict(self.params)}

    # hooks
    def check(self, inputs: DataSet) -> None:
        """Raise if ``inputs`` violates a transform precondition."""

    def fit_payload(self, inputs: DataSet, target: DataSet | None) -> bytes:
        raise NotTrainable(f"module {self.type_id!r} does not require fitting")

    def apply(self, state: ModuleState, inputs: DataSet) -> DataSet:
        raise NotImplementedError

    def online(self, state: ModuleState) -> OnlineRunner:
        if self.lookback is None:
            raise UnboundedLookback(f"module {self.type_id!r} has no finite lookback and cannot run online")
        return BufferedRunner(self, state, self.lookback)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class OnlineRunner:
    """Consumes one-row DataSets and returns the matching one-row output."""

    def push(self, row: DataSet) -> DataSet:
        raise NotImplementedError


class BufferedRunner(OnlineRunner):
    def __init__(self, module: Module, state: ModuleState, lookback: int) -> None:
        self.module = module
        self.state = state
        self.buffer: deque[DataSet] = deque(maxlen=lookback + 1)

    def push(self, row: DataSet) -> DataSet:
        self.buffer.append(row)
        window = concat_time(list(self.buffer))
        out = self.module.apply(self.state, window)
        return out.take(np.arange(out.n_rows - 1, out.n_rows))


# -- lifecycle entry points ---------------------------------------------------


def _check_target(inputs: DataSet, target: DataSet | None) -> None:
    if target is not None and len(target) and not np.array_equal(inputs.index, target.index):
        raise SchemaMismatch("fit inputs and target do not share a time index")


def fit(module: Module, inputs: DataSet, target: DataSet | None = None) -> ModuleState:
    if not module.requires_fit:
        raise NotTrainable(f"module {module.type_id!r} does not require fitting")
    _check_target(inputs, target)
    if inputs.n_rows < module.min_rows:
        raise InsufficientData(f"{module.type_id}: need at least {module.min_rows} rows, got {inputs.n_rows}")
    return ModuleState(True, module.fit_payload(inputs, target))


def transform(module: Module, state: ModuleState, inputs: DataSet) -> DataSet:
    if module.requires_fit and not state.fitted:
        raise NotFitted(f"module {module.type_id!r} has not been fitted")
    module.check(inputs)
    return module.apply(state, inputs)


def save_state(module: Module, state: ModuleState) -> bytes:
    tid = module.type_id.encode("utf-8")
    body = (
        STATE_MAGIC
        + struct.pack(">HH", STATE_FORMAT_VERSION, len(tid))
        + tid
        + struct.pack(">BI", 1 if state.fitted else 0, len(state.blob))
        + state.blob
    )
    return body + struct.pack(">I", zlib.crc32(body))


def load_state(module: Module, data: bytes) -> ModuleState:
    if len(data) < len(STATE_MAGIC) + 4 + 5 + 4 or data[: len(STATE_MAGIC)] != STATE_MAGIC:
        raise CorruptState("state blob has a bad magic number or is truncated")
    body, (crc,) = data[:-4], struct.unpack(">I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptState("state blob checksum mismatch")
    pos = len(STATE_MAGIC)
    version, tlen = struct.unpack_from(">HH", body, pos)
    if version != STATE_FORMAT_VERSION:
        raise CorruptState(f"unsupported state format version {version}")
    pos += 4
    tid = body[pos : pos + tlen].decode("utf-8", errors="replace")
    pos += tlen
    if tid != module.type_id:
        raise CorruptState(f"state blob belongs to {tid!r}, not {module.type_id!r}")
    try:
        fitted, plen = struct.unpack_from(">BI", body, pos)
    except struct.error:
        raise CorruptState("state blob is truncated") from None
    pos += 5
    if pos + plen != len(body):
        raise CorruptState("state blob payload length mismatch")
    return ModuleState(bool(fitted), bytes(body[pos:]))


# -- payload packing ----------------------------------------------------------


def pack_payload(meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray] | None = None) -> bytes:
    """Deterministic encoding of a JSON header plus raw float64 arrays."""
    arrays = arrays or {}
    header = {"meta": meta, "arrays": []}
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        header["arrays"].append([name, list(arr.shape)])
        chunks.append(arr.tobytes())
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(head)) + head + b"".join(chunks)


def unpack_payload(blob: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        (hlen,) = struct.unpack_from(">I", blob, 0)
        header = json.loads(blob[4 : 4 + hlen].decode("utf-8"))
        pos = 4 + hlen
        arrays = {}
        for name, shape in header["arrays"]:
            n = int(np.prod(shape, dtype=np.int64)) * 8
            arr = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=pos).reshape(shape)
            arrays[name] = arr.astype(np.float64)
            pos += n
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CorruptState(f"unreadable state payload: {exc}") from None
    return header["meta"], arrays


def pack_blobs(blobs: Mapping[str, bytes]) -> bytes:
    """Concatenate named byte strings behind a JSON table of contents."""
    head = json.dumps([[k, len(v)] for k, v in blobs.items()], separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(head)) + head + b"".join(blobs.values())


def unpack_blobs(data: bytes) -> dict[str, bytes]:
    try:
        (hlen,) = struct.unpack_from(">I", data, 0)
        table = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CorruptState(f"unreadable composite state: {exc}") from None
    pos = 4 + hlen
    out = {}
    for name, n in table:
        if pos + n > len(data):
            raise CorruptState("composite state is truncated")
        out[name] = bytes(data[pos : pos + n])
        pos += n
    return out


# -- registry -----------------------------------------------------------------

Factory = Callable[..., Module]
_REGISTRY: dict[str, Factory] = {}


def register(type_id: str) -> Callable[[type[Module]], type[Module]]:
    def deco(cls: type[Module]) -> type[Module]:
        if type_id in _REGISTRY and _REGISTRY[type_id] is not cls:
            raise ValueError(f"type_id {type_id!r} already registered")
        cls.type_id = type_id
        _REGISTRY[type_id] = cls
        return cls

    return deco


def registered_types() -> list[str]:
    return sorted(_REGISTRY)


def is_registered(type_id: str) -> bool:
    return type_id in _REGISTRY


def create(type_id: str, params: Mapping[str, Param] | None = None) -> Module:
    """Instantiate a registered module from its manifest form."""
    try:
        factory = _REGISTRY[type_id]
    except KeyError:
        raise UnknownTypeId(f"unknown module type_id {type_id!r}") from None
    try:
        return factory(**dict(params or {}))
    except TypeError as exc:
        raise InvalidParameter(f"{type_id}: {exc}") from None


def int_param(type_id: str, name: str, value: Param, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise InvalidParameter(f"{type_id}: parameter {name!r} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InvalidParameter(f"{type_id}: parameter {name!r} must be >= {minimum}, got {value}")
    return value


def choice_param(type_id: str, name: str, value: Param, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise InvalidParameter(f"{type_id}: parameter {name!r} must be one of {choices}, got {value!r}")
    return value
