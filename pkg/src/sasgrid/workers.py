"""Rollout worker pools.

``InProcessPool`` evaluates tasks in the calling process; ``ProcessPool``
forks local worker processes and talks to each over a socket pair using
the frames from ``sasgrid.wire``.  Both expose the same interface::

    pool.broadcast(params, version) -> number of acknowledgements
    pool.run(tasks, timeout=None)   -> list of RolloutResult, by task id

Workers rebuild perturbations from ``(seed, sign, sigma)`` and hand the
perturbed policy to an evaluator ``(params, task) -> (return, steps, risk)``.
Results are deduplicated by task id, a crashed worker's task goes back to
the queue, and a worker holding stale parameters is re-synced and retried.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
import os
import selectors
import socket
import time
from collections import deque

from . import wire
from .errors import PartialBroadcast, Timeout, WorkerPoolFailure
from .es import RolloutResult
from .policy import NoiseSample, PolicyParams, perturb
from .wire import (AckMessage, BroadcastMessage, ErrorMessage, ResultMessage, ShutdownMessage, TaskMessage)

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


def evaluate_task(evaluator, params: PolicyParams, task: TaskMessage, worker_id: int) -> ResultMessage:
    t0 = time.perf_counter()
    p = perturb(params, NoiseSample(task.seed, task.sign), task.sigma)
    ret, steps, risk = evaluator(p, task)
    return ResultMessage(task.task_id, float(ret), int(steps), float(risk), worker_id, time.perf_counter() - t0)


def _to_result(task: TaskMessage, msg: ResultMessage) -> RolloutResult:
    return RolloutResult(task.task_id, task.seed, task.sign, msg.total_return, msg.steps, msg.mean_risk,
                         task.scenario_id, msg.worker_id, msg.wall_time)


class InProcessPool:
    """Single worker living in the caller's process.

    Messages still pass through the wire codec so both pools exercise the
    same encoding.
    """

    n_workers = 1

    def __init__(self, evaluator):
        self.evaluator = evaluator
        self._params: PolicyParams | None = None
        self._version: int | None = None

    def broadcast(self, params: PolicyParams, version: int) -> int:
        msg = wire.decode_payload(wire.encode_payload(BroadcastMessage(version, params)))
        self._params, self._version = msg.params, msg.version
        return 1

    def run(self, tasks, timeout: float | None = None) -> list[RolloutResult]:
        deadline = None if timeout is None else time.monotonic() + timeout
        done: dict[int, RolloutResult] = {}
        for task in tasks:
            if task.task_id in done:
                continue
            if deadline is not None and time.monotonic() > deadline:
                missing = sorted({t.task_id for t in tasks} - set(done))
                raise Timeout(f"{len(missing)} tasks unresolved", sorted(done.values(), key=_tid), missing)
            task = wire.decode_payload(wire.encode_payload(task))
            if task.params_version != self._version:
                raise WorkerPoolFailure(f"task {task.task_id} wants params version {task.params_version}, "
                                        f"pool holds {self._version}")
            msg = wire.decode_payload(wire.encode_payload(
                evaluate_task(self.evaluator, self._params, task, 0)))
            done[task.task_id] = _to_result(task, msg)
        return sorted(done.values(), key=_tid)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _tid(r):
    return r.task_id


def _worker_main(sock: socket.socket, worker_id: int, evaluator) -> None:
    params, version = None, None
    try:
        while True:
            msg = wire.recv(sock)
            if msg is None or isinstance(msg, ShutdownMessage):
                break
            if isinstance(msg, BroadcastMessage):
                params, version = msg.params, msg.version
                wire.send(sock, AckMessage(worker_id, version))
            elif isinstance(msg, TaskMessage):
                if version != msg.params_version:
                    wire.send(sock, ErrorMessage(worker_id, msg.task_id, wire.ERR_STALE,
                                                 wire.NO_VERSION if version is None else version))
                    continue
                try:
                    res = evaluate_task(evaluator, params, msg, worker_id)
                except Exception as exc:  # report, keep serving
                    wire.send(sock, ErrorMessage(worker_id, msg.task_id, wire.ERR_FAILED, version,
                                                 f"{type(exc).__name__}: {exc}"))
                    continue
                wire.send(sock, res)
    except (BrokenPipeError, ConnectionResetError):
        pass
    finally:
        sock.close()


class _Worker:
    def __init__(self, wid: int, proc, sock: socket.socket):
        self.id = wid
        self.proc = proc
        self.sock = sock
        self.reader = wire.FrameReader()
        self.alive = True
        self.version: int | None = None
        self.busy: TaskMessage | None = None


class ProcessPool:
    """Local worker processes connected by socket pairs (fork start method)."""

    def __init__(self, evaluator, n_workers: int, quorum: float = 1.0, broadcast_timeout: float = 60.0):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        self.n_workers = n_workers
        self.quorum = quorum
        self.broadcast_timeout = broadcast_timeout
        self._last_broadcast: bytes | None = None
        self._version: int | None = None
        ctx = mp.get_context("fork")
        self.workers: list[_Worker] = []
        for wid in range(n_workers):
            parent, child = socket.socketpair()
            others = [parent] + [w.sock for w in self.workers]
            proc = ctx.Process(target=_child_entry, args=(child, others, wid, evaluator), daemon=True)
            proc.start()
            child.close()
            parent.setblocking(False)
            self.workers.append(_Worker(wid, proc, parent))

    # -- plumbing ------------------------------------------------------------------

    @property
    def live(self) -> list[_Worker]:
        return [w for w in self.workers if w.alive]

    def _send(self, w: _Worker, data: bytes) -> bool:
        try:
            w.sock.setblocking(True)
            w.sock.sendall(data)
            return True
        except OSError:
            self._mark_dead(w)
            return False
        finally:
            if w.alive:
                w.sock.setblocking(False)

    def _mark_dead(self, w: _Worker, quiet: bool = False) -> None:
        if w.alive and not quiet:
            log.warning("worker %d lost", w.id)
        w.alive = False
        try:
            w.sock.close()
        except OSError:
            pass

    def _poll(self, timeout: float | None):
        """Yield ``(worker, message)`` pairs that arrive within ``timeout``."""
        sel = selectors.DefaultSelector()
        for w in self.live:
            sel.register(w.sock, selectors.EVENT_READ, w)
        out = []
        try:
            for key, _ in sel.select(timeout):
                w = key.data
                try:
                    data = w.sock.recv(1 << 16)
                except BlockingIOError:
                    continue
                except OSError:
                    data = b""
                if not data:
                    self._mark_dead(w)
                    out.append((w, None))
                    continue
                for msg in w.reader.feed(data):
                    out.append((w, msg))
        finally:
            sel.close()
        return out

    # -- public ------------------------------------------------------------------------

    def kill(self, worker_id: int) -> None:
        """Terminate one worker (fault injection)."""
        w = self.workers[worker_id]
        if w.proc.is_alive():
            w.proc.kill()
            w.proc.join(5)
        self._mark_dead(w)

    def broadcast(self, params: PolicyParams, version: int, quorum: float | None = None) -> int:
        quorum = self.quorum if quorum is None else quorum
        self._last_broadcast = wire.frame(BroadcastMessage(version, params))
        self._version = version
        pending = set()
        for w in self.live:
            if self._send(w, self._last_broadcast):
                pending.add(w.id)
        acks = 0
        deadline = time.monotonic() + self.broadcast_timeout
        while pending and time.monotonic() < deadline:
            for w, msg in self._poll(max(0.0, deadline - time.monotonic())):
                if msg is None:
                    pending.discard(w.id)
                elif isinstance(msg, AckMessage) and msg.version == version and w.id in pending:
                    w.version = version
                    pending.discard(w.id)
                    acks += 1
            if not self.live:
                break
        need = math.ceil(quorum * self.n_workers)
        if acks < need:
            raise PartialBroadcast(f"{acks} of {self.n_workers} workers acknowledged version {version}", acks)
        return acks

    def run(self, tasks, timeout: float | None = None) -> list[RolloutResult]:
        queue = deque(tasks)
        by_id = {t.task_id: t for t in tasks}
        attempts: dict[int, int] = {}
        done: dict[int, RolloutResult] = {}
        failed: dict[int, str] = {}
        deadline = None if timeout is None else time.monotonic() + timeout

        def unresolved():
            return sorted(set(by_id) - set(done) - set(failed))

        while unresolved():
            for w in self.live:
                while w.busy is None and queue:
                    task = queue.popleft()
                    if task.task_id in done or task.task_id in failed:
                        continue
                    attempts[task.task_id] = attempts.get(task.task_id, 0) + 1
                    w.busy = task
                    if not self._send(w, wire.frame(task)):
                        queue.appendleft(task)
                        w.busy = None
                        break
            if not self.live:
                raise WorkerPoolFailure("all workers are gone", sorted(done.values(), key=_tid))
            if deadline is not None and time.monotonic() >= deadline:
                raise Timeout(f"{len(unresolved())} tasks unresolved", sorted(done.values(), key=_tid),
                              unresolved())
            wait = None if deadline is None else max(0.0, deadline - time.monotonic())
            for w, msg in self._poll(wait):
                if msg is None:
                    if w.busy is not None:
                        self._retry(w.busy, queue, attempts, failed, "worker crashed")
                        w.busy = None
                    continue
                if isinstance(msg, ResultMessage):
                    task = by_id.get(msg.task_id)
                    if task is not None and msg.task_id not in done:
                        done[msg.task_id] = _to_result(task, msg)
                    if w.busy is not None and w.busy.task_id == msg.task_id:
                        w.busy = None
                elif isinstance(msg, ErrorMessage):
                    task = w.busy
                    w.busy = None
                    if task is None:
                        continue
                    if msg.code == wire.ERR_STALE and self._last_broadcast is not None:
                        self._send(w, self._last_broadcast)
                        queue.appendleft(task)
                    else:
                        self._retry(task, queue, attempts, failed, msg.detail)
                elif isinstance(msg, AckMessage):
                    w.version = msg.version
        if failed:
            raise WorkerPoolFailure(f"tasks failed: {failed}", sorted(done.values(), key=_tid))
        return sorted(done.values(), key=_tid)

    def _retry(self, task, queue, attempts, failed, reason):
        if attempts.get(task.task_id, 0) >= MAX_ATTEMPTS:
            failed[task.task_id] = reason
        else:
            queue.appendleft(task)

    def close(self) -> None:
        for w in self.live:
            self._send(w, wire.frame(ShutdownMessage()))
        for w in self.workers:
            w.proc.join(2)
            if w.proc.is_alive():
                w.proc.kill()
                w.proc.join(2)
            if w.alive:
                self._mark_dead(w, quiet=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _child_entry(child: socket.socket, inherited, wid: int, evaluator) -> None:
    for s in inherited:  # coordinator ends copied by fork
        s.close()
    try:
        _worker_main(child, wid, evaluator)
    finally:
        os._exit(0)


def make_pool(evaluator, n_workers: int, quorum: float = 1.0):
    """``n_workers <= 1`` gives the in-process pool."""
    if n_workers <= 1:
        return InProcessPool(evaluator)
    return ProcessPool(evaluator, n_workers, quorum)
