"""Toy additive synthesizer: latent frames to audible WAV.

Each d-dimensional frame sets the amplitudes of d fixed sinusoids for one
frame period (1 / steps_per_second). Amplitude envelopes are overlap-added
with a Hann window of two frame periods hopped by one period, which sums
to a constant, so a stream of identical frames produces a steady tone.
Sinusoid i sits at ``base_hz * (i + 1)``; phases run over absolute sample
time, so tones are continuous across frame boundaries.

This exists to make desk-scale output audible; it carries no fidelity
claim.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 24_000


class IoError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    steps_per_second: int = 75
    base_hz: float = 110.0
    gain: float = 0.2

    @property
    def frame_period(self) -> int:
        if self.sample_rate % self.steps_per_second:
            raise ValueError("sample_rate must be a multiple of steps_per_second")
        return self.sample_rate // self.steps_per_second

    def bin_hz(self, i: int) -> float:
        return self.base_hz * (i + 1)


def synthesize(frames: np.ndarray, config: SynthConfig | None = None) -> np.ndarray:
    """Render (T, d) frames to float samples in [-1, 1]; output length is
    (T + 1) frame periods."""
    cfg = config or SynthConfig()
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("frames must be a non-empty (T, d) array")
    t_steps, dims = x.shape
    period = cfg.frame_period
    total = (t_steps + 1) * period

    window = np.hanning(2 * period + 1)[:-1]  # periodic Hann: COLA at hop=period
    envelopes = np.zeros((dims, total))
    for t in range(t_steps):
        envelopes[:, t * period : t * period + 2 * period] += x[t][:, None] * window[None, :]

    samples = np.arange(total) / cfg.sample_rate
    signal = np.zeros(total)
    for i in range(dims):
        signal += envelopes[i] * np.sin(2.0 * np.pi * cfg.bin_hz(i) * samples)
    signal *= cfg.gain

    peak = np.max(np.abs(signal))
    if peak > 1.0:
        signal /= peak
    return signal


def write_wav(path: str | Path, signal: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE) -> None:
    """16-bit PCM mono."""
    pcm = np.clip(np.asarray(signal), -1.0, 1.0)
    pcm = (pcm * 32767.0).astype("<i2")
    try:
        with wave.open(str(path), "wb") as wav:
            wav.setnchannels(1)
            wav.setsampwidth(2)
            wav.setframerate(sample_rate)
            wav.writeframes(pcm.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    try:
        with wave.open(str(path), "rb") as wav:
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0, rate


def export_wav(
    frames: np.ndarray, path: str | Path, config: SynthConfig | None = None
) -> np.ndarray:
    """Synthesize and write in one go; returns the float signal."""
    cfg = config or SynthConfig()
    signal = synthesize(frames, cfg)
    write_wav(path, signal, cfg.sample_rate)
    return signal


def silence_wav(path: str | Path, seconds: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> None:
    write_wav(path, np.zeros(int(round(seconds * sample_rate))), sample_rate)


def beep_pattern_wav(
    path: str | Path,
    num_beeps: int,
    seconds: float = 60.0,
    at_second: float | None = None,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    tone_hz: float = 880.0,
) -> None:
    """Qualification-clip stand-in for a spoken instruction: ``num_beeps``
    short tones (the instructed score) injected into a quiet bed at
    ``at_second`` (mid-clip by default). Not speech; the beep count IS the
    instruction."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    signal = 0.02 * np.sin(2.0 * np.pi * 220.0 * t)  # quiet bed tone
    start = (seconds / 2.0) if at_second is None else at_second
    beep_len = int(0.2 * sample_rate)
    gap = int(0.1 * sample_rate)
    pos = int(start * sample_rate)
    for _ in range(num_beeps):
        end = min(pos + beep_len, n)
        tt = np.arange(end - pos) / sample_rate
        signal[pos:end] += 0.5 * np.sin(2.0 * np.pi * tone_hz * tt)
        pos = end + gap
        if pos >= n:
            break
    write_wav(path, signal, sample_rate)
