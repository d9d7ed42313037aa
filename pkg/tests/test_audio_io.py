import struct

import numpy as np
from pytest import approx, raises
from scipy.io import wavfile

from wavestyle.audio_io import (
    AudioClip,
    check_compatible,
    load_wav,
    peak_normalize,
    save_wav,
)
from wavestyle.errors import FormatError, ParameterError, ParseError, ValidationError

from .mock import write_float32, write_pcm16


def test_clip_is_read_only_float64():
    clip = AudioClip([1, 2, 3], 8000)
    assert clip.samples.dtype == np.float64
    assert len(clip) == 3
    assert clip.duration == approx(3 / 8000)
    with raises(ValueError):
        clip.samples[0] = 0.0


def test_clip_rejects_bad_shapes_and_rates():
    with raises(ParameterError):
        AudioClip(np.zeros((2, 2)), 8000)
    with raises(ParameterError):
        AudioClip([0.0], 0)
    with raises(ParameterError):
        AudioClip([0.0], 44100.5)


def test_validate():
    with raises(ValidationError):
        AudioClip([], 8000).validate()
    with raises(ValidationError):
        AudioClip([0.0, np.nan], 8000).validate()
    clip = AudioClip([0.0, 0.5], 8000)
    assert clip.validate() is clip


def test_check_compatible():
    check_compatible(AudioClip([0.0], 8000), AudioClip([0.0], 8000))
    with raises(ParameterError, match="sample rates differ"):
        check_compatible(AudioClip([0.0], 8000), AudioClip([0.0], 16000))


def test_load_pcm16_scaling(tmp_path):
    path = tmp_path / "one.wav"
    wavfile.write(str(path), 8000, np.array([16384], dtype="<i2"))
    clip = load_wav(path)
    assert clip.samples.tolist() == [0.5]
    assert clip.sample_rate == 8000


def test_load_stereo_downmix(tmp_path):
    path = write_float32(tmp_path / "stereo.wav", [[0.2, 0.4]])
    assert load_wav(path).samples[0] == approx(0.3, abs=1e-7)


def test_downmix_is_channel_average(tmp_path):
    rng = np.random.default_rng(1)
    left, right = rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100)
    stereo = load_wav(write_float32(tmp_path / "lr.wav", np.stack([left, right], 1)))
    mono_l = load_wav(write_float32(tmp_path / "l.wav", left))
    mono_r = load_wav(write_float32(tmp_path / "r.wav", right))
    np.testing.assert_allclose(
        stereo.samples, (mono_l.samples + mono_r.samples) / 2, atol=1e-7
    )


def test_load_float32_sine(tmp_path):
    t = np.arange(16000) / 16000
    tone = 0.7 * np.sin(2 * np.pi * 440 * t)
    path = write_float32(tmp_path / "sine.wav", tone, 16000)
    clip = load_wav(path)
    assert len(clip) == 16000
    assert np.max(np.abs(clip.samples)) == approx(0.7, abs=1e-6)


def test_save_then_load(tmp_path):
    samples = np.random.default_rng(0).uniform(-1, 1, 1000)
    path = tmp_path / "out.wav"
    save_wav(AudioClip(samples, 22050), path)
    clip = load_wav(path)
    assert clip.sample_rate == 22050
    assert np.max(np.abs(clip.samples - samples)) < 1e-7
    assert list(tmp_path.iterdir()) == [path]


def test_save_single_zero(tmp_path):
    path = tmp_path / "zero.wav"
    save_wav(AudioClip([0.0], 8000), path)
    rate, data = wavfile.read(str(path))
    assert data.dtype == np.float32
    assert data.tolist() == [0.0]


def test_save_refuses_non_finite(tmp_path):
    with raises(ValidationError):
        save_wav(AudioClip([0.0, np.nan], 8000), tmp_path / "bad.wav")
    assert list(tmp_path.iterdir()) == []


def test_save_to_missing_directory(tmp_path):
    with raises(OSError):
        save_wav(AudioClip([0.0], 8000), tmp_path / "missing" / "out.wav")


def test_unsupported_bit_depth(tmp_path):
    path = tmp_path / "int32.wav"
    wavfile.write(str(path), 8000, np.zeros(10, dtype="<i4"))
    with raises(FormatError):
        load_wav(path)


def test_not_a_wav_file(tmp_path):
    path = tmp_path / "text.wav"
    path.write_bytes(b"this is not audio at all")
    with raises(FormatError):
        load_wav(path)


def test_truncated_file(tmp_path):
    path = write_pcm16(tmp_path / "cut.wav", np.zeros(100))
    raw = path.read_bytes()
    path.write_bytes(raw[:-50])
    with raises(ParseError):
        load_wav(path)

    path.write_bytes(raw[:8])
    with raises(ParseError):
        load_wav(path)


def _riff(block_align, data=b"\x00\x00" * 4, channels=1, bits=16):
    fmt = struct.pack("<HHIIHH", 1, channels, 8000, 16000, block_align, bits)
    body = (
        b"WAVE"
        + b"fmt "
        + struct.pack("<I", len(fmt))
        + fmt
        + b"data"
        + struct.pack("<I", len(data))
        + data
    )
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_bad_block_alignment(tmp_path):
    path = tmp_path / "align.wav"
    path.write_bytes(_riff(block_align=2))
    assert len(load_wav(path)) == 4

    for block_align in (0, 4):
        path.write_bytes(_riff(block_align=block_align))
        with raises(ParseError, match="blocks of %d bytes" % block_align):
            load_wav(path)


def test_peak_normalize():
    out = peak_normalize(AudioClip([0.2, -0.5], 8000), 1.0)
    np.testing.assert_allclose(out.samples, [0.4, -1.0])

    out = peak_normalize(AudioClip([2.0], 8000), 0.9)
    np.testing.assert_allclose(out.samples, [0.9])

    zeros = AudioClip(np.zeros(4), 8000)
    assert peak_normalize(zeros) is zeros


def test_peak_normalize_is_idempotent():
    clip = AudioClip(np.random.default_rng(2).standard_normal(64), 8000)
    once = peak_normalize(clip)
    twice = peak_normalize(once)
    np.testing.assert_allclose(once.samples, twice.samples, rtol=1e-15)


def test_peak_normalize_target_range():
    for target in (0.0, -0.5, 1.5):
        with raises(ParameterError):
            peak_normalize(AudioClip([1.0], 8000), target)
