import numpy as np
import pytest

from formgen.synth import (
    SynthConfig,
    beep_pattern_wav,
    export_wav,
    read_wav,
    silence_wav,
    synthesize,
    write_wav,
)


class TestSynth:
    def test_all_zero_frames_are_silence(self, tmp_path):
        frames = np.zeros((20, 4))
        path = tmp_path / "silence.wav"
        export_wav(frames, path)
        signal, rate = read_wav(path)
        assert rate == 24_000
        assert np.max(np.abs(signal)) == 0.0

    def test_duration_within_one_frame_period(self):
        cfg = SynthConfig(sample_rate=24_000, steps_per_second=75)
        frames = np.zeros((11_250, 2))
        frames[:, 0] = 0.5
        signal = synthesize(frames, cfg)
        duration = len(signal) / cfg.sample_rate
        assert abs(duration - 150.0) <= 1.0 / 75

    def test_one_hot_frame_is_single_sinusoid(self):
        cfg = SynthConfig(sample_rate=24_000, steps_per_second=75, base_hz=110.0)
        frames = np.zeros((150, 6))
        frames[:, 2] = 1.0  # bin 2 -> 330 Hz
        signal = synthesize(frames, cfg)
        steady = signal[cfg.frame_period : -cfg.frame_period]
        windowed = steady * np.hanning(len(steady))  # suppress leakage
        spectrum = np.abs(np.fft.rfft(windowed))
        freqs = np.fft.rfftfreq(len(steady), 1.0 / cfg.sample_rate)
        peak_hz = freqs[int(np.argmax(spectrum))]
        assert abs(peak_hz - cfg.bin_hz(2)) < 2.0
        # everything away from the peak is negligible
        far = spectrum[np.abs(freqs - cfg.bin_hz(2)) > 20.0]
        assert far.max() < 0.01 * spectrum.max()

    def test_constant_frames_steady_envelope(self):
        cfg = SynthConfig(sample_rate=2400, steps_per_second=10)
        frames = np.full((40, 1), 0.8)
        signal = synthesize(frames, cfg)
        interior = signal[cfg.frame_period : -cfg.frame_period]
        # overlap-added Hann windows sum to one: steady amplitude inside
        peaks = np.abs(interior)
        assert peaks.max() > 0.1

    def test_empty_frames_rejected(self):
        with pytest.raises(ValueError):
            synthesize(np.zeros((0, 4)))

    def test_wav_round_trip(self, tmp_path):
        signal = 0.5 * np.sin(np.linspace(0, 40 * np.pi, 2000))
        path = tmp_path / "t.wav"
        write_wav(path, signal, 8000)
        loaded, rate = read_wav(path)
        assert rate == 8000
        np.testing.assert_allclose(loaded, signal, atol=1e-3)

    def test_silence_helper(self, tmp_path):
        path = tmp_path / "s.wav"
        silence_wav(path, 1.5, 8000)
        signal, rate = read_wav(path)
        assert len(signal) == 12_000
        assert np.all(signal == 0.0)

    def test_beep_pattern(self, tmp_path):
        path = tmp_path / "b.wav"
        beep_pattern_wav(path, num_beeps=3, seconds=5.0, sample_rate=8000)
        signal, _ = read_wav(path)
        assert len(signal) == 40_000
        assert np.max(np.abs(signal)) > 0.3  # beeps are audible over the bed
