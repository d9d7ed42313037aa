import numpy as np
import pytest
from pytest import approx, raises

from wavestyle import graph
from wavestyle.audio_io import AudioClip
from wavestyle.errors import InputTooShortError, ParameterError
from wavestyle.spectral import (
    DFT,
    ComplexSpectra,
    FeatureVariant,
    Frame,
    FrameMatrix,
    FrontEndConfig,
    Magnitude,
    Phase,
    PhaseDifferential,
    Plane,
    assemble_features,
    dft_forward,
    export_spectrogram,
    frame_count,
    frame_signal,
    hann_window,
    inverse_dft_overlap_add,
    magnitude,
    phase,
    phase_differential,
    unwrap,
)

from .mock import sine, tiny_front_end


def spectra_of(frames):
    return dft_forward(FrameMatrix(np.atleast_2d(np.asarray(frames, dtype=float))))


def test_front_end_defaults():
    cfg = FrontEndConfig()
    assert (cfg.n_fft, cfg.hop, cfg.bins) == (2048, 512, 1025)
    assert cfg.variant is FeatureVariant.REAL_IMAG_MAG
    assert FrontEndConfig(variant="mag-only").variant is FeatureVariant.MAG_ONLY


def test_default_hop_falls_back_to_half():
    assert FrontEndConfig(n_fft=6).hop == 3
    assert FrontEndConfig(n_fft=2).hop == 1
    assert FrontEndConfig(n_fft=8).hop == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_fft": 7},
        {"n_fft": 0},
        {"n_fft": 64, "hop": 10},
        {"epsilon": 0.0},
        {"layout": "diagonal"},
    ],
)
def test_front_end_rejects(kwargs):
    with raises(ParameterError):
        FrontEndConfig(**kwargs)


def test_hann_window():
    np.testing.assert_allclose(hann_window(4), [0, 0.5, 1.0, 0.5], atol=1e-15)
    np.testing.assert_allclose(hann_window(2), [0, 1], atol=1e-15)
    for n in (1, 3):
        with raises(ParameterError):
            hann_window(n)


def test_hann_half_overlap_sums_to_one():
    w = hann_window(16)
    total = np.zeros(64)
    for start in range(0, 64 - 16 + 1, 8):
        total[start : start + 16] += w
    np.testing.assert_allclose(total[16:-16], 1.0, atol=1e-15)


def test_frame_signal():
    cfg = FrontEndConfig(n_fft=4, hop=2)
    ramp = AudioClip(np.arange(8.0), 1)
    frames = frame_signal(ramp, cfg)
    assert len(frames) == 3 == frame_count(8, cfg)
    expected = np.array([2, 3, 4, 5]) * hann_window(4)
    np.testing.assert_allclose(frames.values[1], expected)

    zeros = frame_signal(AudioClip(np.zeros(9), 1), cfg)
    assert len(zeros) == 3
    assert not zeros.values.any()


def test_frame_signal_too_short():
    with raises(InputTooShortError):
        frame_signal(AudioClip(np.zeros(3), 1), FrontEndConfig(n_fft=4, hop=2))


def test_dft_forward_closed_forms():
    s = spectra_of([1.0, 0, 0, 0])
    np.testing.assert_allclose(s.real, [[1, 1, 1]])
    np.testing.assert_allclose(s.imag, [[0, 0, 0]], atol=1e-15)

    s = spectra_of([1.0, 1, 1, 1])
    np.testing.assert_allclose(s.real, [[4, 0, 0]], atol=1e-15)

    s = spectra_of([1.0, 0, -1, 0])
    np.testing.assert_allclose(s.real, [[0, 2, 0]], atol=1e-15)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_dft_forward_matches_dense_matrix(n):
    x = np.random.default_rng(n).standard_normal((3, n))
    k = np.arange(n)
    b = np.arange(n // 2 + 1)[:, None]
    s = spectra_of(x)
    np.testing.assert_allclose(s.real, x @ np.cos(2 * np.pi * b * k / n).T, atol=1e-10)
    np.testing.assert_allclose(s.imag, -x @ np.sin(2 * np.pi * b * k / n).T, atol=1e-10)


def test_parseval_per_frame():
    n = 32
    x = np.random.default_rng(3).standard_normal((5, n))
    s = spectra_of(x)
    power = s.real**2 + s.imag**2
    spectral = (power[:, 0] + 2 * power[:, 1:-1].sum(axis=1) + power[:, -1]) / n
    np.testing.assert_allclose(np.sum(x * x, axis=1), spectral, rtol=1e-9)


@pytest.mark.parametrize("hop", [32, 16])
def test_inverse_roundtrip(hop):
    cfg = FrontEndConfig(n_fft=64, hop=hop)
    clip = AudioClip(np.random.default_rng(4).uniform(-1, 1, 8000), 8000)
    spectra = dft_forward(frame_signal(clip, cfg))
    out_len = (spectra.frames - 1) * hop + 64
    back = inverse_dft_overlap_add(spectra, cfg, out_len, sample_rate=8000)
    assert back.sample_rate == 8000
    interior = slice(64, out_len - 64)
    assert np.max(np.abs(back.samples[interior] - clip.samples[interior])) < 1e-6


def test_inverse_of_zero_spectra():
    cfg = FrontEndConfig(n_fft=8, hop=4)
    spectra = ComplexSpectra(np.zeros((3, 5)), np.zeros((3, 5)))
    assert not inverse_dft_overlap_add(spectra, cfg, 16).samples.any()


def test_inverse_single_frame():
    cfg = FrontEndConfig(n_fft=8, hop=4)
    x = np.random.default_rng(5).standard_normal(8)
    spectra = dft_forward(frame_signal(AudioClip(x, 1), cfg))
    back = inverse_dft_overlap_add(spectra, cfg, 8).samples
    # sample 0 sits under a zero window and is dropped
    assert back[0] == 0.0
    np.testing.assert_allclose(back[1:], x[1:], atol=1e-12)


def test_inverse_shape_checks():
    cfg = FrontEndConfig(n_fft=8, hop=4)
    with raises(ParameterError):
        inverse_dft_overlap_add(ComplexSpectra(*np.zeros((2, 2, 4))), cfg, 12)
    with raises(ParameterError):
        inverse_dft_overlap_add(ComplexSpectra(*np.zeros((2, 2, 5))), cfg, 40)


def test_magnitude():
    s = ComplexSpectra(np.array([[3.0, 0.0]]), np.array([[4.0, 0.0]]))
    m = magnitude(s, 1e-10)
    assert m[0, 0] == approx(5.0)
    assert m[0, 1] == approx(1e-5)
    with raises(ParameterError):
        magnitude(s, 0.0)


def test_phase_values():
    s = ComplexSpectra(
        np.array([[0.0, 1.0, -1.0, 0.0, -1.0]]), np.array([[1.0, 0.0, 0.0, 0.0, -0.0]])
    )
    np.testing.assert_allclose(phase(s), [[np.pi / 2, 0, np.pi, 0, np.pi]])


def test_phase_differential():
    np.testing.assert_allclose(phase_differential([[0.5], [0.7]]), [[0.5], [0.2]])
    np.testing.assert_allclose(
        phase_differential([[1.0, 2.0]] * 3), [[1.0, 2.0], [0, 0], [0, 0]]
    )
    np.testing.assert_allclose(phase_differential([[0.3]]), [[0.3]])


def test_unwrap():
    np.testing.assert_allclose(
        unwrap([3 * np.pi / 2, -3 * np.pi / 2, 0.3, np.pi, -np.pi, 7 * np.pi]),
        [-np.pi / 2, np.pi / 2, 0.3, np.pi, np.pi, np.pi],
    )


def test_unwrap_range():
    out = unwrap(np.random.default_rng(6).uniform(-50, 50, 1000))
    assert np.all(out > -np.pi) and np.all(out <= np.pi)


def test_unwrap_is_idempotent():
    once = unwrap(np.random.default_rng(12).uniform(-50, 50, (20, 7)))
    np.testing.assert_array_equal(unwrap(once), once)
    edges = unwrap([np.pi, -np.pi, 3 * np.pi])
    np.testing.assert_array_equal(unwrap(edges), edges)


def test_magnitude_ignores_a_joint_sign_flip():
    rng = np.random.default_rng(13)
    s = ComplexSpectra(rng.standard_normal((5, 9)), rng.standard_normal((5, 9)))
    flipped = ComplexSpectra(-s.real, -s.imag)
    np.testing.assert_array_equal(magnitude(flipped), magnitude(s))


def test_assemble_feature_shapes():
    s = ComplexSpectra(np.ones((2, 3)), np.zeros((2, 3)))
    cfg = FrontEndConfig(n_fft=4, hop=2)
    tensor = assemble_features(s, cfg)
    assert tensor.shape == (2, 9, 1)
    assert tensor.layout.blocks == ("real", "imag", "magnitude")

    variant = FeatureVariant.MAG_UNWRAPPED_PHASE_DIFF
    cfg = FrontEndConfig(n_fft=8, hop=2, variant=variant)
    s = ComplexSpectra(np.ones((2, 5)), np.ones((2, 5)))
    assert assemble_features(s, cfg).shape == (2, 10, 1)


def test_real_imag_features_match_dft():
    frames = np.zeros((1, 8))
    frames[0, 0] = 1.0
    s = spectra_of(frames)
    cfg = FrontEndConfig(n_fft=8, hop=4, variant=FeatureVariant.REAL_IMAG)
    tensor = assemble_features(s, cfg)
    np.testing.assert_allclose(tensor.block("real"), s.real)
    np.testing.assert_allclose(tensor.block("imag"), s.imag)


def test_interleaved_layout_holds_same_values():
    s = spectra_of(np.random.default_rng(7).standard_normal((3, 8)))
    block = assemble_features(s, FrontEndConfig(n_fft=8, hop=4))
    mixed = assemble_features(s, FrontEndConfig(n_fft=8, hop=4, layout="interleaved"))
    assert mixed.layout.interleaved
    for name in ("real", "imag", "magnitude"):
        np.testing.assert_allclose(mixed.block(name), block.block(name))
    np.testing.assert_allclose(mixed.values[:, :3, 0], np.stack(
        [s.real[:, 0], s.imag[:, 0], block.block("magnitude")[:, 0]], axis=1
    ))


def test_mag_only_is_log_magnitude():
    s = spectra_of(np.random.default_rng(8).standard_normal((2, 8)))
    cfg = FrontEndConfig(n_fft=8, hop=4, variant=FeatureVariant.MAG_ONLY)
    tensor = assemble_features(s, cfg)
    np.testing.assert_allclose(tensor.block("magnitude"), np.log(magnitude(s) + 1e-10))


def test_missing_block():
    s = ComplexSpectra(np.ones((1, 3)), np.zeros((1, 3)))
    tensor = assemble_features(s, FrontEndConfig(n_fft=4, hop=2))
    with raises(ParameterError):
        tensor.block("phase")


def test_export_spectrogram(tmp_path):
    s = ComplexSpectra(np.ones((2, 3)), np.zeros((2, 3)))
    csv, pgm = export_spectrogram(s, tmp_path / "spec.csv")
    rows = csv.read_text().strip().split("\n")
    assert len(rows) == 2
    assert all(len(r.split(",")) == 3 for r in rows)
    assert pgm.name == "spec.pgm"
    assert pgm.read_bytes().startswith(b"P5\n2 3\n255\n")


def test_export_zero_spectrogram_is_constant(tmp_path):
    s = ComplexSpectra(np.zeros((4, 5)), np.zeros((4, 5)))
    _, pgm = export_spectrogram(s, tmp_path / "zero.csv")
    pixels = pgm.read_bytes()[len(b"P5\n4 5\n255\n") :]
    assert len(pixels) == 20
    assert len(set(pixels)) == 1


def test_export_sine_peaks_at_tone_bin(tmp_path):
    cfg = FrontEndConfig(n_fft=64, hop=16)
    # 1000 Hz at 8 kHz lands on bin 8 of a 64 point DFT
    clip = sine(1000.0, seconds=0.1)
    spectra = dft_forward(frame_signal(clip, cfg))
    csv, _ = export_spectrogram(spectra, tmp_path / "s.csv")
    values = np.loadtxt(csv, delimiter=",")
    assert set(np.argmax(values, axis=1)) == {8}


def test_export_to_missing_directory(tmp_path):
    s = ComplexSpectra(np.ones((1, 3)), np.zeros((1, 3)))
    with raises(OSError):
        export_spectrogram(s, tmp_path / "nowhere" / "spec.csv")


def test_magnitude_gradient():
    g = graph.Graph()
    x = g.input((4, 2, 3))
    g.output(g.apply(Magnitude(1e-10), x))
    spectra = np.random.default_rng(9).standard_normal((4, 2, 3))
    assert graph.gradient_check(g, spectra) < 1e-6


def test_phase_gradient():
    g = graph.Graph()
    x = g.input((4, 2, 3))
    g.output(g.apply(Phase(), x))
    # keep away from the branch cut on the negative real axis
    spectra = np.random.default_rng(10).uniform(0.5, 2.0, (4, 2, 3))
    assert graph.gradient_check(g, spectra) < 1e-6


@pytest.mark.parametrize(
    "op, shape",
    [
        (Frame(tiny_front_end()), (160,)),
        (DFT(), (3, 16)),
        (Plane(1), (3, 2, 9)),
        (PhaseDifferential(), (5, 4)),
    ],
)
def test_linear_op_adjoints(op, shape):
    assert op.linear
    assert graph.adjoint_check(op, np.zeros(shape)) < 1e-8


def test_dft_backward_is_transposed_matrix():
    n = 8
    k = np.arange(n)
    b = np.arange(n // 2 + 1)[:, None]
    dense = np.concatenate(
        [np.cos(2 * np.pi * b * k / n), -np.sin(2 * np.pi * b * k / n)]
    )
    upstream = np.random.default_rng(11).standard_normal((1, 2, n // 2 + 1))
    op = DFT()
    _, cache = op.forward(np.zeros((1, n)))
    (grad,) = op.backward(upstream, cache)
    np.testing.assert_allclose(grad[0], dense.T @ upstream[0].ravel(), atol=1e-10)
