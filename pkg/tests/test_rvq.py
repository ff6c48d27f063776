import numpy as np
import pytest

from formgen.rvq import (
    DimensionMismatch,
    FrameRate,
    InsufficientData,
    RvqCodec,
    TokenOutOfRange,
    TrainingLog,
    codec_from_bytes,
    codec_hash,
    codec_to_bytes,
    decode_tokens,
    encode_frame,
    encode_frames,
    load_codec,
    random_codec,
    save_codec,
    seconds_to_steps,
    steps_to_seconds,
    train_codebooks,
)


def brute_force_encode(codec: RvqCodec, x: np.ndarray) -> list[int]:
    """Independent oracle: exhaustive nearest-neighbor per stage."""
    tokens = []
    residual = x.astype(np.float64).copy()
    for j in range(codec.num_codebooks):
        best, best_d = None, None
        for v in range(codec.codebook_size):
            d = float(np.sum((residual - codec.codebooks[j][v]) ** 2))
            if best_d is None or d < best_d:  # strict: lowest index wins ties
                best, best_d = v, d
        tokens.append(best)
        residual = residual - codec.codebooks[j][best]
    return tokens


class TestFrameRate:
    def test_piece_length(self):
        assert seconds_to_steps(FrameRate(75), 150) == 11250

    def test_zero(self):
        assert seconds_to_steps(FrameRate(75), 0) == 0

    def test_audio_prompt_length(self):
        assert seconds_to_steps(FrameRate(75), 15) == 1125

    def test_inverse(self):
        assert steps_to_seconds(FrameRate(75), 11250) == 150.0

    def test_fractional_rejected(self):
        with pytest.raises(ValueError):
            seconds_to_steps(FrameRate(75), 0.51)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            seconds_to_steps(FrameRate(75), -1)


class TestEncode:
    def test_two_entry_arithmetic(self):
        books = np.zeros((2, 2, 2))
        books[0] = [[0.0, 0.0], [1.0, 1.0]]
        books[1] = [[0.0, 0.0], [-0.1, 0.2]]
        codec = RvqCodec(codebooks=books)
        tokens = encode_frame(codec, np.array([0.9, 1.2]))
        assert tokens[0] == 1  # (0.9,1.2) is nearer (1,1)
        # residual (-0.1, 0.2) is exactly entry 1 of codebook 2
        assert tokens[1] == 1

    def test_codebook_entry_encodes_to_itself(self):
        codec = random_codec(d=4, num_codebooks=3, codebook_size=8, seed=0)
        books = codec.codebooks.copy()
        books[1:, 0, :] = 0.0  # give later codebooks a zero entry
        codec = RvqCodec(codebooks=books)
        entry = codec.codebooks[0][5]
        tokens = encode_frame(codec, entry)
        assert tokens[0] == 5
        # residual is exactly zero; later stages pick the entry nearest zero
        for j in (1, 2):
            zero_best = int(np.argmin(np.sum(codec.codebooks[j] ** 2, axis=1)))
            assert tokens[j] == zero_best
        # with zero vectors in every later codebook the round trip is exact
        assert np.array_equal(decode_tokens(codec, tokens), entry)

    def test_matches_brute_force_oracle(self, toy_codec, rng):
        frames = rng.normal(size=(100, toy_codec.dim))
        for x in frames:
            assert list(encode_frame(toy_codec, x)) == brute_force_encode(toy_codec, x)

    def test_batch_encode_matches_single(self, toy_codec, rng):
        frames = rng.normal(size=(50, toy_codec.dim))
        batch = encode_frames(toy_codec, frames)
        for i, x in enumerate(frames):
            assert list(batch[i]) == list(encode_frame(toy_codec, x))

    def test_dimension_mismatch(self, toy_codec):
        with pytest.raises(DimensionMismatch):
            encode_frame(toy_codec, np.zeros(3))

    def test_determinism(self, toy_codec, rng):
        x = rng.normal(size=toy_codec.dim)
        assert list(encode_frame(toy_codec, x)) == list(encode_frame(toy_codec, x))


class TestDecode:
    def test_single_codebook(self, toy_codec):
        out = decode_tokens(toy_codec, np.array([3]))
        assert np.array_equal(out, toy_codec.codebooks[0][3])

    def test_sum_of_entries(self, toy_codec):
        out = decode_tokens(toy_codec, np.array([3, 7]))
        expected = toy_codec.codebooks[0][3] + toy_codec.codebooks[1][7]
        assert np.allclose(out, expected)

    def test_token_out_of_range(self, toy_codec):
        with pytest.raises(TokenOutOfRange):
            decode_tokens(toy_codec, np.array([64]))
        with pytest.raises(TokenOutOfRange):
            decode_tokens(toy_codec, np.array([1, 2, 3, 4, 5]))

    def test_prefix_error_monotone(self, toy_codec, rng):
        for x in rng.normal(size=(50, toy_codec.dim)):
            tokens = encode_frame(toy_codec, x)
            errors = [
                float(np.sum((x - decode_tokens(toy_codec, tokens[:k])) ** 2))
                for k in range(1, toy_codec.num_codebooks + 1)
            ]
            for a, b in zip(errors, errors[1:]):
                assert b <= a + 1e-12


class TestTraining:
    def test_fixed_point_zero_error(self, rng):
        # training on exactly the V distinct vectors reproduces them
        vectors = rng.normal(size=(16, 4))
        codec = train_codebooks(vectors, num_codebooks=1, codebook_size=16, seed=3)
        tokens = encode_frames(codec, vectors)
        decoded = decode_tokens(codec, tokens)
        assert np.allclose(decoded, vectors, atol=1e-12)

    def test_error_non_increasing_per_stage(self, rng):
        frames = rng.normal(size=(600, 6))
        log = TrainingLog()
        train_codebooks(frames, num_codebooks=4, codebook_size=16, seed=1, log=log)
        assert len(log.stages) == 4
        for stage in log.stages:
            for a, b in zip(stage.errors, stage.errors[1:]):
                assert b <= a + 1e-12

    def test_logged_errors_match_independent_recomputation(self, rng):
        # brute-force the error from each logged codebook snapshot
        frames = rng.normal(size=(200, 4))
        log = TrainingLog()
        train_codebooks(frames, num_codebooks=2, codebook_size=8, seed=5, log=log)
        residual = frames
        for stage in log.stages:
            for snapshot, logged in zip(stage.snapshots, stage.errors):
                d2 = np.array(
                    [[np.sum((x - c) ** 2) for c in snapshot] for x in residual]
                )
                assert abs(float(np.mean(d2.min(axis=1))) - logged) < 1e-9
            final = stage.snapshots[-1]
            d2 = np.array([[np.sum((x - c) ** 2) for c in final] for x in residual])
            residual = residual - final[np.argmin(d2, axis=1)]

    def test_insufficient_data(self, rng):
        with pytest.raises(InsufficientData):
            train_codebooks(rng.normal(size=(15, 4)), num_codebooks=1, codebook_size=16)

    def test_empty_clusters_reseeded(self, rng):
        # many duplicated points force empty clusters; training must not fail
        base = rng.normal(size=(4, 3))
        frames = np.repeat(base, 10, axis=0) + rng.normal(scale=1e-3, size=(40, 3))
        codec = train_codebooks(frames, num_codebooks=1, codebook_size=8, seed=2)
        assert codec.codebook_size == 8
        tokens = encode_frames(codec, frames)
        err = np.mean(np.sum((frames - decode_tokens(codec, tokens)) ** 2, axis=1))
        assert err < 1e-4

    def test_deterministic(self, rng):
        frames = rng.normal(size=(100, 4))
        a = train_codebooks(frames, num_codebooks=2, codebook_size=8, seed=9)
        b = train_codebooks(frames, num_codebooks=2, codebook_size=8, seed=9)
        assert np.array_equal(a.codebooks, b.codebooks)

    def test_codec_frozen(self, rng):
        codec = train_codebooks(rng.normal(size=(40, 3)), num_codebooks=1, codebook_size=8)
        with pytest.raises(ValueError):
            codec.codebooks[0, 0, 0] = 99.0


def test_full_scale_preset():
    from formgen.rvq import FULL_PRESET, TOY_PRESET

    assert FULL_PRESET == {"d": 128, "num_codebooks": 4, "codebook_size": 1024}
    assert TOY_PRESET == {"d": 8, "num_codebooks": 4, "codebook_size": 64}


class TestContainer:
    def test_round_trip(self, toy_codec, tmp_path):
        path = tmp_path / "codec.rvq"
        save_codec(toy_codec, path)
        loaded = load_codec(path)
        assert np.array_equal(loaded.codebooks, toy_codec.codebooks)

    def test_byte_layout(self, small_codec):
        blob = codec_to_bytes(small_codec)
        assert blob[:4] == b"RVQC"
        k, v, d = small_codec.num_codebooks, small_codec.codebook_size, small_codec.dim
        assert len(blob) == 20 + k * v * d * 8
        first = np.frombuffer(blob, dtype="<f8", offset=20, count=d)
        assert np.array_equal(first, small_codec.codebooks[0][0])

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            codec_from_bytes(b"NOPE" + b"\x00" * 32)

    def test_hash_stable(self, toy_codec):
        assert codec_hash(toy_codec) == codec_hash(toy_codec)
        other = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=8)
        assert codec_hash(other) != codec_hash(toy_codec)
