"""Codebook interleaving: the T x K token grid vs. model step sequences.

An autoregressive model consumes one step at a time. Three interleavings of
the grid are supported:

* ``parallel``  - step s carries all K tokens of grid row s (T steps).
* ``delay``     - step s carries, in slot j, the token grid[s-j][j]; slots
  that fall outside the grid are PAD. Length is T + K - 1, so codebook j's
  token for time t appears j steps late.
* ``flatten``   - one token per step, row-major (T*K steps).

PAD is an out-of-band sentinel (``None`` in memory); it is encoded as
``0xFFFFFFFF`` only in the serialized stream format below (little-endian,
version 1)::

    bytes 0..3    magic b"TOKS"
    bytes 4..7    format version, uint32
    bytes 8..19   T, K, V as uint32
    byte  20      pattern id (0=parallel, 1=delay, 2=flatten)
    bytes 21..    step slots as uint32, step-major
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TOKS"
FORMAT_VERSION = 1
PAD_WORD = 0xFFFFFFFF

PAD = None  # in-memory sentinel

Slot = int | None


class PatternError(Exception):
    pass


class InconsistentLength(PatternError):
    pass


class PadInDataPosition(PatternError):
    pass


class Pattern(enum.Enum):
    PARALLEL = "parallel"
    DELAY = "delay"
    FLATTEN = "flatten"


_PATTERN_IDS = {Pattern.PARALLEL: 0, Pattern.DELAY: 1, Pattern.FLATTEN: 2}
_IDS_PATTERN = {v: k for k, v in _PATTERN_IDS.items()}


@dataclass(frozen=True)
class TokenGrid:
    """T x K matrix of codebook token indices."""

    tokens: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.tokens, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("token grid must be 2-dimensional (T, K)")
        if arr.size and arr.min() < 0:
            raise ValueError("tokens must be non-negative")
        object.__setattr__(self, "tokens", arr)

    @property
    def num_steps(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_codebooks(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def empty(cls, num_codebooks: int) -> "TokenGrid":
        return cls(tokens=np.zeros((0, num_codebooks), dtype=np.int64))

    def slice_steps(self, start: int, stop: int) -> "TokenGrid":
        return TokenGrid(tokens=self.tokens[start:stop])


def concat_grids(*grids: TokenGrid) -> TokenGrid:
    return TokenGrid(tokens=np.concatenate([g.tokens for g in grids], axis=0))


@dataclass(frozen=True)
class StepSequence:
    """Model-facing step stream; each step is a tuple of slots."""

    steps: tuple[tuple[Slot, ...], ...]
    pattern: Pattern

    def __len__(self) -> int:
        return len(self.steps)


def expected_length(pattern: Pattern, num_steps: int, num_codebooks: int) -> int:
    if pattern is Pattern.DELAY:
        return num_steps + num_codebooks - 1
    if pattern is Pattern.FLATTEN:
        return num_steps * num_codebooks
    return num_steps


def apply_pattern(grid: TokenGrid, pattern: Pattern = Pattern.DELAY) -> StepSequence:
    """Interleave a non-empty grid into the given pattern's step stream."""
    if grid.num_steps == 0:
        raise ValueError("grid is empty")
    t, k = grid.num_steps, grid.num_codebooks
    rows = grid.tokens
    if pattern is Pattern.PARALLEL:
        steps = tuple(tuple(int(x) for x in row) for row in rows)
    elif pattern is Pattern.FLATTEN:
        steps = tuple((int(x),) for x in rows.reshape(-1))
    elif pattern is Pattern.DELAY:
        steps = tuple(
            tuple(int(rows[s - j, j]) if 0 <= s - j < t else PAD for j in range(k))
            for s in range(t + k - 1)
        )
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return StepSequence(steps=steps, pattern=pattern)


def invert_pattern(seq: StepSequence, num_steps: int, num_codebooks: int) -> TokenGrid:
    """Exact inverse of :func:`apply_pattern`; PAD slots are discarded and a
    PAD found where the pattern requires data is an error."""
    t, k = num_steps, num_codebooks
    want = expected_length(seq.pattern, t, k)
    if len(seq.steps) != want:
        raise InconsistentLength(
            f"{seq.pattern.value} sequence of {len(seq.steps)} steps; expected {want}"
        )
    out = np.empty((t, k), dtype=np.int64)

    if seq.pattern is Pattern.PARALLEL:
        for s, step in enumerate(seq.steps):
            _require_width(step, k, s)
            for j, slot in enumerate(step):
                out[s, j] = _require_data(slot, s, j)
    elif seq.pattern is Pattern.FLATTEN:
        for s, step in enumerate(seq.steps):
            _require_width(step, 1, s)
            out[s // k, s % k] = _require_data(step[0], s, 0)
    elif seq.pattern is Pattern.DELAY:
        for s, step in enumerate(seq.steps):
            _require_width(step, k, s)
            for j, slot in enumerate(step):
                if 0 <= s - j < t:
                    out[s - j, j] = _require_data(slot, s, j)
                elif slot is not PAD:
                    raise InconsistentLength(
                        f"step {s} slot {j} must be PAD for a {t}x{k} delay grid"
                    )
    else:
        raise ValueError(f"unknown pattern {seq.pattern!r}")
    return TokenGrid(tokens=out)


def _require_width(step: tuple[Slot, ...], width: int, s: int) -> None:
    if len(step) != width:
        raise InconsistentLength(f"step {s} has {len(step)} slots; expected {width}")


def _require_data(slot: Slot, s: int, j: int) -> int:
    if slot is PAD:
        raise PadInDataPosition(f"PAD at data position (step {s}, slot {j})")
    return int(slot)


def sequence_to_bytes(seq: StepSequence, num_steps: int, num_codebooks: int, vocab_size: int) -> bytes:
    want = expected_length(seq.pattern, num_steps, num_codebooks)
    if len(seq.steps) != want:
        raise InconsistentLength(
            f"{seq.pattern.value} sequence of {len(seq.steps)} steps; expected {want}"
        )
    header = MAGIC + struct.pack(
        "<IIIIB", FORMAT_VERSION, num_steps, num_codebooks, vocab_size, _PATTERN_IDS[seq.pattern]
    )
    words = [PAD_WORD if slot is PAD else int(slot) for step in seq.steps for slot in step]
    return header + np.asarray(words, dtype="<u4").tobytes()


def sequence_from_bytes(blob: bytes) -> tuple[StepSequence, int, int, int]:
    """Returns (sequence, T, K, V)."""
    if blob[:4] != MAGIC:
        raise ValueError("not a token stream")
    version, t, k, v, pat_id = struct.unpack("<IIIIB", blob[4:21])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported token stream version {version}")
    pattern = _IDS_PATTERN[pat_id]
    width = 1 if pattern is Pattern.FLATTEN else k
    words = np.frombuffer(blob, dtype="<u4", offset=21)
    length = expected_length(pattern, t, k)
    if words.size != length * width:
        raise InconsistentLength(f"{words.size} slots; expected {length * width}")
    steps = tuple(
        tuple(PAD if w == PAD_WORD else int(w) for w in words[s * width : (s + 1) * width])
        for s in range(length)
    )
    return StepSequence(steps=steps, pattern=pattern), t, k, v


def save_grid(path: str | Path, grid: TokenGrid, vocab_size: int, pattern: Pattern = Pattern.DELAY) -> None:
    seq = apply_pattern(grid, pattern)
    Path(path).write_bytes(
        sequence_to_bytes(seq, grid.num_steps, grid.num_codebooks, vocab_size)
    )


def load_grid(path: str | Path) -> tuple[TokenGrid, int]:
    """Returns (grid, vocab_size)."""
    seq, t, k, v = sequence_from_bytes(Path(path).read_bytes())
    return invert_pattern(seq, t, k), v
