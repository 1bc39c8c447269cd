"""Messages exchanged between the trainer and rollout workers, and their codec.

Every message travels as one frame::

    length   4 bytes, big-endian u32: size of the payload that follows
    payload  wire version (u8) | message type (u8) | body

Body fields are little-endian, in the order listed on each message class.
Parameter broadcasts embed a policy checkpoint (see ``sasgrid.policy``).
See ``docs/wire_format.md`` for the byte tables.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

from .errors import VersionMismatch, WorkerPoolFailure
from .policy import PolicyParams, decode, serialize

WIRE_VERSION = 1

BROADCAST = 1
ACK = 2
TASK = 3
RESULT = 4
ERROR = 5
SHUTDOWN = 6

ERR_STALE = 1
ERR_FAILED = 2

_PREFIX = struct.Struct(">I")
_HEAD = struct.Struct("<BB")
_TASK = struct.Struct("<IIQbdIII")
_RESULT = struct.Struct("<IdIdId")
_ACK = struct.Struct("<II")
_ERROR = struct.Struct("<IIBI")
_BCAST = struct.Struct("<I")

MAX_FRAME = 1 << 30


@dataclass(frozen=True)
class TaskMessage:
    task_id: int  # u32
    params_version: int  # u32
    seed: int  # u64
    sign: int  # i8
    sigma: float  # f64
    scenario_id: int  # u32
    k: int  # u32
    max_steps: int  # u32, 0 = whole scenario


@dataclass(frozen=True)
class ResultMessage:
    task_id: int  # u32
    total_return: float  # f64
    steps: int  # u32
    mean_risk: float  # f64
    worker_id: int  # u32
    wall_time: float  # f64


@dataclass(frozen=True)
class BroadcastMessage:
    version: int  # u32
    params: PolicyParams  # checkpoint bytes, rest of the frame


@dataclass(frozen=True)
class AckMessage:
    worker_id: int
    version: int


@dataclass(frozen=True)
class ErrorMessage:
    worker_id: int
    task_id: int
    code: int  # ERR_STALE or ERR_FAILED
    have_version: int  # params version the worker holds (0xFFFFFFFF: none)
    detail: str = ""


@dataclass(frozen=True)
class ShutdownMessage:
    pass


NO_VERSION = 0xFFFFFFFF


def encode_payload(msg) -> bytes:
    if isinstance(msg, TaskMessage):
        return _HEAD.pack(WIRE_VERSION, TASK) + _TASK.pack(
            msg.task_id, msg.params_version, msg.seed, msg.sign, msg.sigma, msg.scenario_id, msg.k, msg.max_steps)
    if isinstance(msg, ResultMessage):
        return _HEAD.pack(WIRE_VERSION, RESULT) + _RESULT.pack(
            msg.task_id, msg.total_return, msg.steps, msg.mean_risk, msg.worker_id, msg.wall_time)
    if isinstance(msg, BroadcastMessage):
        return _HEAD.pack(WIRE_VERSION, BROADCAST) + _BCAST.pack(msg.version) + serialize(msg.params, msg.version)
    if isinstance(msg, AckMessage):
        return _HEAD.pack(WIRE_VERSION, ACK) + _ACK.pack(msg.worker_id, msg.version)
    if isinstance(msg, ErrorMessage):
        return (_HEAD.pack(WIRE_VERSION, ERROR)
                + _ERROR.pack(msg.worker_id, msg.task_id, msg.code, msg.have_version)
                + msg.detail.encode("utf-8"))
    if isinstance(msg, ShutdownMessage):
        return _HEAD.pack(WIRE_VERSION, SHUTDOWN)
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode_payload(data: bytes):
    if len(data) < _HEAD.size:
        raise WorkerPoolFailure("short message")
    version, kind = _HEAD.unpack_from(data)
    if version != WIRE_VERSION:
        raise VersionMismatch(f"wire version {version}, expected {WIRE_VERSION}")
    body = data[_HEAD.size:]
    try:
        if kind == TASK:
            return TaskMessage(*_TASK.unpack(body))
        if kind == RESULT:
            return ResultMessage(*_RESULT.unpack(body))
        if kind == BROADCAST:
            (v,) = _BCAST.unpack_from(body)
            params, _ = decode(body[_BCAST.size:])
            return BroadcastMessage(v, params)
        if kind == ACK:
            return AckMessage(*_ACK.unpack(body))
        if kind == ERROR:
            head = _ERROR.unpack_from(body)
            return ErrorMessage(*head, body[_ERROR.size:].decode("utf-8", "replace"))
        if kind == SHUTDOWN:
            return ShutdownMessage()
    except struct.error as exc:
        raise WorkerPoolFailure(f"malformed message of type {kind}: {exc}") from exc
    raise WorkerPoolFailure(f"unknown message type {kind}")


def frame(msg) -> bytes:
    payload = encode_payload(msg)
    return _PREFIX.pack(len(payload)) + payload


def send(sock: socket.socket, msg) -> None:
    sock.sendall(frame(msg))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def recv(sock: socket.socket):
    """Next message from ``sock``, or None once the peer has closed it."""
    head = _recv_exact(sock, _PREFIX.size)
    if head is None:
        return None
    (n,) = _PREFIX.unpack(head)
    if n > MAX_FRAME:
        raise WorkerPoolFailure(f"frame of {n} bytes exceeds the limit")
    payload = _recv_exact(sock, n)
    if payload is None:
        return None
    return decode_payload(payload)


class FrameReader:
    """Incremental frame parser for non-blocking sockets."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        while len(self._buf) >= _PREFIX.size:
            (n,) = _PREFIX.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise WorkerPoolFailure(f"frame of {n} bytes exceeds the limit")
            if len(self._buf) < _PREFIX.size + n:
                break
            payload = bytes(self._buf[_PREFIX.size: _PREFIX.size + n])
            del self._buf[: _PREFIX.size + n]
            out.append(decode_payload(payload))
        return out
