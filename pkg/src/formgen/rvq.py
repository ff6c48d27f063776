"""Residual vector quantization over latent frames.

K codebooks of V entries each quantize d-dimensional frames stage by stage:
stage 1 quantizes the frame, stage j>1 quantizes the residual left by stage
j-1, and decoding sums the selected entries. Codebooks are trained with
stage-wise Lloyd k-means and frozen afterwards.

Presets: the desk-scale ``toy`` configuration (d=8, K=4, V=64) keeps
exhaustive test oracles fast; the full-scale configuration (d=128, K=4,
V=1024) is exposed as ``full`` for completeness.

Codec container format (little-endian, version 1)::

    bytes 0..3    magic b"RVQC"
    bytes 4..7    format version, uint32
    bytes 8..19   K, V, d as uint32
    bytes 20..    K * V * d float64 codebook entries, ordered by
                  (codebook, entry, dimension)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RVQC"
FORMAT_VERSION = 1

TOY_PRESET = {"d": 8, "num_codebooks": 4, "codebook_size": 64}
FULL_PRESET = {"d": 128, "num_codebooks": 4, "codebook_size": 1024}

DEFAULT_STEPS_PER_SECOND = 75


class RvqError(Exception):
    pass


class InsufficientData(RvqError):
    pass


class DegenerateCluster(RvqError):
    """Raised only when an empty cluster cannot be reseeded (no data);
    normal training reseeds empty clusters instead of failing."""


class DimensionMismatch(RvqError):
    pass


class TokenOutOfRange(RvqError):
    pass


@dataclass(frozen=True)
class FrameRate:
    steps_per_second: int = DEFAULT_STEPS_PER_SECOND

    def __post_init__(self):
        if self.steps_per_second < 1:
            raise ValueError("steps_per_second must be positive")


def seconds_to_steps(rate: FrameRate, seconds: int | float) -> int:
    """Exact multiplication; fractional-step results are rejected."""
    if seconds < 0:
        raise ValueError("seconds must be non-negative")
    steps = seconds * rate.steps_per_second
    if steps != int(steps):
        raise ValueError(f"{seconds} s is not a whole number of steps at {rate.steps_per_second}/s")
    return int(steps)


def steps_to_seconds(rate: FrameRate, steps: int) -> float:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    return steps / rate.steps_per_second


@dataclass(frozen=True)
class RvqCodec:
    """K codebooks of shape (V, d); immutable once constructed."""

    codebooks: np.ndarray  # (K, V, d) float64

    def __post_init__(self):
        cb = np.asarray(self.codebooks, dtype=np.float64)
        if cb.ndim != 3:
            raise ValueError("codebooks must have shape (K, V, d)")
        cb = cb.copy()
        cb.flags.writeable = False
        object.__setattr__(self, "codebooks", cb)

    @property
    def num_codebooks(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]


def random_codec(
    d: int = 8, num_codebooks: int = 4, codebook_size: int = 64, seed: int = 0
) -> RvqCodec:
    """Seeded untrained codec; adequate wherever only the token space
    matters (synthesis plumbing, demos)."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)
    books = rng.normal(0.0, scale, size=(num_codebooks, codebook_size, d))
    # Later stages quantize residuals, which shrink stage over stage.
    books *= (0.5 ** np.arange(num_codebooks))[:, None, None]
    return RvqCodec(codebooks=books)


@dataclass
class StageLog:
    """Per-iteration quantization errors and codebook snapshots for one
    residual stage."""

    errors: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)


@dataclass
class TrainingLog:
    stages: list[StageLog] = field(default_factory=list)


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (N, V) squared Euclidean distances; clamped, |x-c|^2 can round negative
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(c * c, axis=1)[None, :]
        - 2.0 * (x @ c.T)
    )
    return np.maximum(d2, 0.0)


def _lloyd_stage(
    x: np.ndarray, v: int, max_iters: int, rng: np.random.Generator, log: StageLog | None
) -> np.ndarray:
    n = x.shape[0]
    centroids = x[rng.choice(n, size=v, replace=False)].copy()
    prev_assign: np.ndarray | None = None
    for _ in range(max_iters):
        d2 = _pairwise_sq_dists(x, centroids)
        assign = np.argmin(d2, axis=1)

        new_centroids = centroids.copy()
        counts = np.bincount(assign, minlength=v)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        reseeded = False
        if not np.all(nonempty):
            # Reseed each empty cluster from the point currently farthest
            # from its centroid; moving an unused centroid cannot increase
            # the quantization error.
            point_err = d2[np.arange(n), assign].copy()
            for ci in np.flatnonzero(~nonempty):
                donor = int(np.argmax(point_err))
                if point_err[donor] <= 0.0:
                    break  # all points already sit on centroids
                new_centroids[ci] = x[donor]
                point_err[donor] = -1.0
                reseeded = True

        centroids = new_centroids
        if log is not None:
            err = float(np.mean(np.min(_pairwise_sq_dists(x, centroids), axis=1)))
            log.errors.append(err)
            log.snapshots.append(centroids.copy())
        if prev_assign is not None and not reseeded and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
    return centroids


def train_codebooks(
    frames: np.ndarray,
    num_codebooks: int = 4,
    codebook_size: int = 64,
    max_iters: int = 25,
    seed: int = 0,
    log: TrainingLog | None = None,
) -> RvqCodec:
    """Stage-wise Lloyd k-means: stage 1 fits the frames, each later stage
    fits the residuals of the stage before it.

    The per-stage quantization error is non-increasing across iterations
    (pass ``log`` to record the error trace and codebook snapshots).
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("frames must have shape (N, d)")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames must be finite")
    n = x.shape[0]
    if n < codebook_size:
        raise InsufficientData(f"{n} frames < codebook size {codebook_size}")

    rng = np.random.default_rng(seed)
    books = []
    residual = x
    for _ in range(num_codebooks):
        stage_log = StageLog() if log is not None else None
        centroids = _lloyd_stage(residual, codebook_size, max_iters, rng, stage_log)
        if log is not None:
            log.stages.append(stage_log)
        books.append(centroids)
        d2 = _pairwise_sq_dists(residual, centroids)
        residual = residual - centroids[np.argmin(d2, axis=1)]
    return RvqCodec(codebooks=np.stack(books))


def encode_frame(codec: RvqCodec, frame: np.ndarray) -> np.ndarray:
    """Greedy residual encoding; nearest entry per stage, ties to the
    lowest index."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != (codec.dim,):
        raise DimensionMismatch(f"frame has shape {x.shape}, codec dim is {codec.dim}")
    tokens = np.empty(codec.num_codebooks, dtype=np.int64)
    residual = x
    for j in range(codec.num_codebooks):
        cb = codec.codebooks[j]
        d2 = np.sum((cb - residual) ** 2, axis=1)
        tok = int(np.argmin(d2))  # argmin returns the first (lowest) index
        tokens[j] = tok
        residual = residual - cb[tok]
    return tokens


def encode_frames(codec: RvqCodec, frames: np.ndarray) -> np.ndarray:
    """Vectorized ``encode_frame`` over an (N, d) array; returns (N, K)."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codec.dim:
        raise DimensionMismatch(f"frames have shape {x.shape}, codec dim is {codec.dim}")
    tokens = np.empty((x.shape[0], codec.num_codebooks), dtype=np.int64)
    residual = x
    for j in range(codec.num_codebooks):
        cb = codec.codebooks[j]
        d2 = _pairwise_sq_dists(residual, cb)
        tok = np.argmin(d2, axis=1)
        tokens[:, j] = tok
        residual = residual - cb[tok]
    return tokens


def decode_tokens(codec: RvqCodec, tokens: np.ndarray) -> np.ndarray:
    """Sum of the selected entries across the first ``len(tokens)``
    codebooks."""
    toks = np.asarray(tokens)
    k_used = toks.shape[-1]
    if not (1 <= k_used <= codec.num_codebooks):
        raise TokenOutOfRange(f"got {k_used} tokens for {codec.num_codebooks} codebooks")
    if np.any(toks < 0) or np.any(toks >= codec.codebook_size):
        raise TokenOutOfRange(f"token out of [0, {codec.codebook_size})")
    out = codec.codebooks[0][toks[..., 0]].copy()
    for j in range(1, k_used):
        out += codec.codebooks[j][toks[..., j]]
    return out


def decode_grid(codec: RvqCodec, tokens: np.ndarray) -> np.ndarray:
    """Decode a (T, K) token matrix to (T, d) frames."""
    return decode_tokens(codec, np.asarray(tokens))


def save_codec(codec: RvqCodec, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(codec_to_bytes(codec))


def load_codec(path: str | Path) -> RvqCodec:
    return codec_from_bytes(Path(path).read_bytes())


def codec_to_bytes(codec: RvqCodec) -> bytes:
    header = MAGIC + struct.pack(
        "<IIII", FORMAT_VERSION, codec.num_codebooks, codec.codebook_size, codec.dim
    )
    body = np.ascontiguousarray(codec.codebooks, dtype="<f8").tobytes()
    return header + body


def codec_from_bytes(blob: bytes) -> RvqCodec:
    if blob[:4] != MAGIC:
        raise ValueError("not a codec container")
    version, k, v, d = struct.unpack("<IIII", blob[4:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported codec format version {version}")
    expected = 20 + k * v * d * 8
    if len(blob) != expected:
        raise ValueError(f"container is {len(blob)} bytes; expected {expected}")
    books = np.frombuffer(blob, dtype="<f8", offset=20).reshape(k, v, d)
    return RvqCodec(codebooks=books)


def codec_hash(codec: RvqCodec) -> str:
    return hashlib.sha256(codec_to_bytes(codec)).hexdigest()
