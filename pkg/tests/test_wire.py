from __future__ import annotations

import socket
import struct

import pytest

from sasgrid import wire
from sasgrid.errors import VersionMismatch, WorkerPoolFailure
from sasgrid.policy import init_params
from sasgrid.wire import (AckMessage, BroadcastMessage, ErrorMessage, FrameReader, ResultMessage, ShutdownMessage,
                          TaskMessage)

MESSAGES = [
    TaskMessage(3, 9, 2 ** 64 - 1, -1, 0.05, 12, 100, 0),
    ResultMessage(3, -12.5, 288, 0.71, 2, 0.125),
    BroadcastMessage(9, init_params(5, 4, (3,), seed=1)),
    AckMessage(1, 9),
    ErrorMessage(1, 3, wire.ERR_FAILED, wire.NO_VERSION, "boom é"),
    ShutdownMessage(),
]


@pytest.mark.parametrize("msg", MESSAGES, ids=lambda m: type(m).__name__)
def test_round_trip(msg):
    assert wire.decode_payload(wire.encode_payload(msg)) == msg


def test_task_byte_layout():
    data = wire.frame(MESSAGES[0])
    assert struct.unpack(">I", data[:4])[0] == len(data) - 4 == 2 + 37
    assert data[4:6] == bytes([wire.WIRE_VERSION, wire.TASK])


def test_frame_reader_handles_fragments():
    blob = b"".join(wire.frame(m) for m in MESSAGES)
    reader, got = FrameReader(), []
    for i in range(0, len(blob), 7):
        got += reader.feed(blob[i: i + 7])
    assert got == MESSAGES


def test_socket_send_recv():
    a, b = socket.socketpair()
    with a, b:
        for m in MESSAGES:
            wire.send(a, m)
        assert [wire.recv(b) for _ in MESSAGES] == MESSAGES
        a.close()
        assert wire.recv(b) is None


def test_bad_frames():
    with pytest.raises(VersionMismatch):
        wire.decode_payload(bytes([99, wire.ACK]) + bytes(8))
    with pytest.raises(WorkerPoolFailure):
        wire.decode_payload(bytes([wire.WIRE_VERSION, 77]))
    with pytest.raises(WorkerPoolFailure):
        wire.decode_payload(bytes([wire.WIRE_VERSION, wire.TASK, 1, 2]))
    with pytest.raises(WorkerPoolFailure):
        wire.decode_payload(b"")
    with pytest.raises(WorkerPoolFailure):
        FrameReader().feed(struct.pack(">I", wire.MAX_FRAME + 1))
