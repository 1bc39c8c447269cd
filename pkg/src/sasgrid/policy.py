"""Feedforward policy over the action catalogue, stored as one flat vector.

Layout of ``theta``: for each layer in order, the weight matrix
``(fan_in, fan_out)`` in row-major order followed by its bias ``(fan_out,)``.
Hidden layers use ReLU, the output layer a softmax.

Checkpoint byte layout (all little-endian)::

    magic      4 bytes  b"SASP"
    version    u16
    n_sizes    u16      number of layer sizes (layers + 1)
    sizes      u32 * n_sizes
    iteration  u64      training iteration the parameters belong to
    theta      f64 * n_params
    crc32      u32      zlib CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, DimensionMismatch, VersionMismatch

DEFAULT_HIDDEN = (256, 128, 64)
MAGIC = b"SASP"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHH")


def param_count(sizes) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray
    sizes: tuple[int, ...]  # (input, hidden..., output)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if theta.size != param_count(sizes):
            raise DimensionMismatch(f"theta has {theta.size} entries, sizes {sizes} need {param_count(sizes)}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        theta.flags.writeable = False
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "theta", theta)

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @cached_property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(W, b)`` views into ``theta`` for every layer."""
        out, k = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = self.theta[k: k + a * b].reshape(a, b)
            k += a * b
            out.append((w, self.theta[k: k + b]))
            k += b
        return out

    def with_theta(self, theta) -> PolicyParams:
        return PolicyParams(theta, self.sizes)

    def __eq__(self, other):
        return (isinstance(other, PolicyParams) and self.sizes == other.sizes
                and self.theta.tobytes() == other.theta.tobytes())


def init_params(input_dim: int, output_dim: int, hidden=DEFAULT_HIDDEN, seed: int = 0) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, seeded."""
    sizes = (int(input_dim), *(int(h) for h in hidden), int(output_dim))
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(a)
        parts.append(rng.uniform(-bound, bound, a * b))
        parts.append(rng.uniform(-bound, bound, b))
    return PolicyParams(np.concatenate(parts), sizes)


def zero_params(input_dim: int, output_dim: int, hidden=DEFAULT_HIDDEN) -> PolicyParams:
    sizes = (int(input_dim), *(int(h) for h in hidden), int(output_dim))
    return PolicyParams(np.zeros(param_count(sizes)), sizes)


def logits(params: PolicyParams, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise DimensionMismatch(f"observation has {x.shape[-1]} features, policy expects {params.input_dim}")
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        x = x @ w + b
        if i < last:
            np.maximum(x, 0.0, out=x)
    return x


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: PolicyParams, obs) -> np.ndarray:
    """Action probabilities for one observation (or a batch along axis 0)."""
    return softmax(logits(params, obs))


def top_k(probs, k: int) -> np.ndarray:
    """Indices of the ``min(k, N)`` largest probabilities, descending; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be at least 1")
    p = np.asarray(probs, dtype=np.float64)
    return np.argsort(-p, kind="stable")[:k]


# -- noise ---------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSample:
    seed: int
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


def noise(seed: int, dim: int) -> np.ndarray:
    """Standard normal vector rebuilt from a 64-bit seed via a Philox stream."""
    return np.random.Generator(np.random.Philox(key=int(seed))).standard_normal(dim)


def perturb(params: PolicyParams, sample: NoiseSample, sigma: float) -> PolicyParams:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return params
    eps = noise(sample.seed, params.n_params)
    return params.with_theta(params.theta + (sample.sign * sigma) * eps)


# -- codec ---------------------------------------------------------------------


def serialize(params: PolicyParams, iteration: int = 0) -> bytes:
    body = bytearray(_HEAD.pack(MAGIC, FORMAT_VERSION, len(params.sizes)))
    body += struct.pack(f"<{len(params.sizes)}I", *params.sizes)
    body += struct.pack("<Q", int(iteration))
    body += params.theta.astype("<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def decode(data: bytes) -> tuple[PolicyParams, int]:
    """Parse a checkpoint; returns ``(params, iteration)``."""
    data = bytes(data)
    if len(data) < _HEAD.size + 4:
        raise CorruptCheckpoint("checkpoint truncated")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, reader supports {FORMAT_VERSION}")
    off = _HEAD.size
    if n < 2 or len(data) < off + 4 * n + 8 + 4:
        raise CorruptCheckpoint("checkpoint truncated")
    sizes = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    (iteration,) = struct.unpack_from("<Q", data, off)
    off += 8
    count = param_count(sizes)
    if len(data) != off + 8 * count + 4:
        raise CorruptCheckpoint(f"expected {off + 8 * count + 4} bytes, got {len(data)}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptCheckpoint("checksum mismatch")
    theta = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    try:
        return PolicyParams(theta, sizes), int(iteration)
    except ValueError as exc:
        raise CorruptCheckpoint(str(exc)) from exc


def deserialize(data: bytes, like: PolicyParams | None = None) -> PolicyParams:
    """Inverse of ``serialize``; with ``like``, shapes must match it."""
    params, _ = decode(data)
    if like is not None and params.sizes != like.sizes:
        raise VersionMismatch(f"checkpoint shapes {params.sizes} do not match policy {like.sizes}")
    return params


def save_checkpoint(path, params: PolicyParams, iteration: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize(params, iteration))
    tmp.replace(path)
    return path


def load_checkpoint(path, like: PolicyParams | None = None) -> tuple[PolicyParams, int]:
    params, iteration = decode(Path(path).read_bytes())
    if like is not None and params.sizes != like.sizes:
        raise VersionMismatch(f"checkpoint shapes {params.sizes} do not match policy {like.sizes}")
    return params, iteration
