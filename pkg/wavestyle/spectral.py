"""Short-time spectral front-ends.

Plain array functions (:func:`frame_signal`, :func:`dft_forward`, :func:`magnitude`,
...) compute the transforms directly. The matching :class:`~wavestyle.graph.Op`
classes (:class:`Frame`, :class:`DFT`, :class:`Magnitude`, ...) wrap the same
arithmetic together with its adjoint so a waveform can be optimized through them.

Feature tensors stack their component blocks in height, always in the order real,
imaginary, magnitude, then the phase derived block.
"""

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import graph
from .audio_io import AudioClip
from .errors import InputTooShortError, ParameterError, ShapeError
from .utils import PathLike, atomic_path

__all__ = [
    "FeatureVariant",
    "FrontEndConfig",
    "FrameMatrix",
    "ComplexSpectra",
    "FeatureLayout",
    "FeatureTensor",
    "hann_window",
    "frame_signal",
    "frame_count",
    "framed_length",
    "dft_forward",
    "inverse_dft_overlap_add",
    "magnitude",
    "phase",
    "phase_differential",
    "unwrap",
    "assemble_features",
    "feature_nodes",
    "export_spectrogram",
    "Frame",
    "DFT",
    "Plane",
    "Magnitude",
    "Phase",
    "PhaseDifferential",
    "Unwrap",
]

logger = logging.getLogger(__name__)

ENVELOPE_FLOOR = 1e-8
TWO_PI = 2.0 * np.pi


class FeatureVariant(enum.Enum):
    REAL_IMAG = "real-imag"
    MAG_PHASE = "mag-phase"
    MAG_PHASE_DIFF = "mag-phase-diff"
    MAG_UNWRAPPED_PHASE_DIFF = "mag-unwrapped-phase-diff"
    REAL_IMAG_MAG = "real-imag-mag"
    MAG_ONLY = "mag-only"

    @property
    def blocks(self) -> Tuple[str, ...]:
        return _VARIANT_BLOCKS[self]


_VARIANT_BLOCKS: Dict[FeatureVariant, Tuple[str, ...]] = {
    FeatureVariant.REAL_IMAG: ("real", "imag"),
    FeatureVariant.MAG_PHASE: ("magnitude", "phase"),
    FeatureVariant.MAG_PHASE_DIFF: ("magnitude", "phase_diff"),
    FeatureVariant.MAG_UNWRAPPED_PHASE_DIFF: ("magnitude", "unwrapped_phase_diff"),
    FeatureVariant.REAL_IMAG_MAG: ("real", "imag", "magnitude"),
    FeatureVariant.MAG_ONLY: ("magnitude",),
}

LAYOUTS = ("block", "interleaved")


@dataclass(frozen=True)
class FrontEndConfig:
    """Framing, transform and feature settings shared by analysis and synthesis.

    ``hop`` defaults to a quarter of ``n_fft``, or half when ``n_fft`` is not a
    multiple of four. Only hops of ``n_fft / 2`` and ``n_fft / 4`` are accepted since
    those are overlap-add exact for the periodic Hann window.
    """

    n_fft: int = 2048
    hop: Optional[int] = None
    variant: FeatureVariant = FeatureVariant.REAL_IMAG_MAG
    epsilon: float = 1e-10
    layout: str = "block"
    log_magnitude: bool = False

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft % 2:
            raise ParameterError(
                "n_fft must be an even integer >= 2, not %r." % self.n_fft
            )
        if self.hop is None:
            hop = self.n_fft // 4 if self.n_fft % 4 == 0 else self.n_fft // 2
            object.__setattr__(self, "hop", hop)
        if self.hop * 2 != self.n_fft and self.hop * 4 != self.n_fft:
            raise ParameterError(
                "hop must be n_fft/2 or n_fft/4 (%d or %d), not %r."
                % (self.n_fft // 2, self.n_fft // 4, self.hop)
            )
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive, not %r." % self.epsilon)
        if self.layout not in LAYOUTS:
            raise ParameterError(
                "layout must be one of %s, not %r." % (LAYOUTS, self.layout)
            )
        object.__setattr__(self, "variant", FeatureVariant(self.variant))

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class FrameMatrix:
    """Windowed frames, one per row."""

    values: np.ndarray = field(repr=False)

    @property
    def n_fft(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ComplexSpectra:
    """Per frame DFT of real frames, split into real and imaginary planes."""

    real: np.ndarray = field(repr=False)
    imag: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ShapeError(
                "Real and imaginary planes must be matching matrices, not %s and %s."
                % (self.real.shape, self.imag.shape)
            )

    @property
    def frames(self) -> int:
        return self.real.shape[0]

    @property
    def bins(self) -> int:
        return self.real.shape[1]

    def stacked(self) -> np.ndarray:
        """The ``frames x 2 x bins`` array used as a graph value."""
        return np.stack([self.real, self.imag], axis=1)

    @classmethod
    def from_stacked(cls, values: np.ndarray) -> "ComplexSpectra":
        return cls(values[:, 0].copy(), values[:, 1].copy())

    @classmethod
    def from_complex(cls, values: np.ndarray) -> "ComplexSpectra":
        return cls(values.real.copy(), values.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


@dataclass(frozen=True)
class FeatureLayout:
    """Which height rows of a :class:`FeatureTensor` hold which component."""

    blocks: Tuple[str, ...]
    bins: int
    interleaved: bool = False

    @property
    def height(self) -> int:
        return len(self.blocks) * self.bins

    def __contains__(self, block: str) -> bool:
        return block in self.blocks

    def rows(self, block: str) -> np.ndarray:
        try:
            i = self.blocks.index(block)
        except ValueError:
            raise ParameterError(
                "Layout %s has no %r block." % (self.blocks, block)
            ) from None
        if self.interleaved:
            return np.arange(self.bins) * len(self.blocks) + i
        return np.arange(i * self.bins, (i + 1) * self.bins)


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray = field(repr=False)
    layout: FeatureLayout

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def block(self, name: str) -> np.ndarray:
        return self.values[:, self.layout.rows(name), 0]


def hann_window(n: int) -> np.ndarray:
    """The periodic Hann window ``0.5 * (1 - cos(2 pi k / n))``."""
    if n < 2 or n % 2:
        raise ParameterError("Window length must be even and >= 2, not %r." % n)
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(TWO_PI * k / n))


def frame_count(length: int, cfg: FrontEndConfig) -> int:
    if length < cfg.n_fft:
        raise InputTooShortError(
            "Need at least n_fft=%d samples, got %d." % (cfg.n_fft, length)
        )
    return (length - cfg.n_fft) // cfg.hop + 1


def framed_length(frames: int, cfg: FrontEndConfig) -> int:
    """Number of samples spanned by ``frames`` frames."""
    return (frames - 1) * cfg.hop + cfg.n_fft


def _frame(samples: np.ndarray, n_fft: int, hop: int, window: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(samples, n_fft)[::hop]
    return windows * window


def frame_signal(clip: AudioClip, cfg: FrontEndConfig) -> FrameMatrix:
    """Cut ``clip`` into Hann windowed frames; trailing samples that do not fill a
    frame are dropped."""
    frame_count(len(clip), cfg)
    return FrameMatrix(_frame(clip.samples, cfg.n_fft, cfg.hop, hann_window(cfg.n_fft)))


def dft_forward(frames: FrameMatrix) -> ComplexSpectra:
    return ComplexSpectra.from_complex(np.fft.rfft(frames.values, axis=-1))


def _overlap_add(frames: np.ndarray, hop: int, out_len: int) -> np.ndarray:
    n_frames, n_fft = frames.shape
    index = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    out = np.zeros(out_len)
    np.add.at(out, index, frames)
    return out


def inverse_dft_overlap_add(
    spectra: ComplexSpectra, cfg: FrontEndConfig, out_len: int, sample_rate: int = 1
) -> AudioClip:
    """Least squares inverse of :func:`frame_signal` followed by :func:`dft_forward`.

    Each frame is inverted, windowed again, overlap-added and divided by the summed
    squared window. Samples whose envelope is below ``1e-8`` are set to zero.
    """
    if spectra.bins != cfg.bins:
        raise ParameterError(
            "Spectra have %d bins but n_fft=%d needs %d."
            % (spectra.bins, cfg.n_fft, cfg.bins)
        )
    span = framed_length(spectra.frames, cfg)
    if not span <= out_len < span + cfg.hop:
        raise ParameterError(
            "%d frames of hop %d cover %d samples; out_len=%d does not match."
            % (spectra.frames, cfg.hop, span, out_len)
        )
    window = hann_window(cfg.n_fft)
    frames = np.fft.irfft(spectra.to_complex(), n=cfg.n_fft, axis=-1) * window
    numerator = _overlap_add(frames, cfg.hop, out_len)
    envelope = _overlap_add(
        np.broadcast_to(window * window, frames.shape), cfg.hop, out_len
    )
    samples = np.zeros(out_len)
    np.divide(numerator, envelope, out=samples, where=envelope >= ENVELOPE_FLOOR)
    return AudioClip(samples, sample_rate)


def magnitude(spectra: ComplexSpectra, epsilon: float = 1e-10) -> np.ndarray:
    """``sqrt(real^2 + imag^2 + epsilon)``, smooth at zero energy."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive, not %r." % epsilon)
    return np.sqrt(spectra.real**2 + spectra.imag**2 + epsilon)


def _phase(real: np.ndarray, imag: np.ndarray) -> np.ndarray:
    angle = np.arctan2(imag, real)
    # -0.0 imaginary parts would otherwise land on -pi
    angle = np.where(angle <= -np.pi, np.pi, angle)
    return np.where((real == 0) & (imag == 0), 0.0, angle)


def phase(spectra: ComplexSpectra) -> np.ndarray:
    """Principal phase in ``(-pi, pi]``; the phase of a zero bin is 0."""
    return _phase(spectra.real, spectra.imag)


def phase_differential(phases: np.ndarray) -> np.ndarray:
    """Frame to frame phase difference; the first frame is kept as is."""
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape[0] < 1:
        raise ParameterError("Need at least one frame of phases.")
    out = phases.copy()
    out[1:] = phases[1:] - phases[:-1]
    return out


def unwrap(diffs: np.ndarray) -> np.ndarray:
    """Map every value into ``(-pi, pi]`` by adding a multiple of ``2 pi``."""
    diffs = np.asarray(diffs, dtype=np.float64)
    out = diffs - TWO_PI * np.ceil((diffs - np.pi) / TWO_PI)
    out = np.where(out <= -np.pi, out + TWO_PI, out)
    return np.where(out > np.pi, out - TWO_PI, out)


def feature_nodes(
    g: graph.Graph, spectra: graph.Node, cfg: FrontEndConfig
) -> Tuple[graph.Node, FeatureLayout]:
    """Add the nodes assembling ``cfg.variant`` features from a spectra node.

    ``spectra`` holds ``frames x 2 x bins`` values (see :meth:`ComplexSpectra.stacked`).
    Returns a ``frames x height x 1`` node and its layout.
    """
    frames, _, bins = spectra.shape
    variant = cfg.variant
    made: Dict[str, graph.Node] = {}

    def mag() -> graph.Node:
        if "mag" not in made:
            made["mag"] = g.apply(Magnitude(cfg.epsilon), spectra)
        return made["mag"]

    def phases() -> graph.Node:
        if "phase" not in made:
            made["phase"] = g.apply(Phase(), spectra)
        return made["phase"]

    blocks = []
    for name in variant.blocks:
        if name == "real":
            node = g.apply(Plane(0), spectra)
        elif name == "imag":
            node = g.apply(Plane(1), spectra)
        elif name == "magnitude":
            node = mag()
            if variant is FeatureVariant.MAG_ONLY or cfg.log_magnitude:
                node = g.apply(graph.Log(cfg.epsilon), node)
        elif name == "phase":
            node = phases()
        elif name == "phase_diff":
            node = g.apply(PhaseDifferential(), phases())
        elif name == "unwrapped_phase_diff":
            node = g.apply(Unwrap(), g.apply(PhaseDifferential(), phases()))
        else:  # pragma: no cover
            raise ParameterError("Unknown feature block %r." % name)
        blocks.append(node)

    interleaved = cfg.layout == "interleaved"
    layout = FeatureLayout(variant.blocks, bins, interleaved=interleaved)
    if len(blocks) == 1:
        joined = blocks[0]
    elif layout.interleaved:
        joined = g.apply(graph.Stack(2), *blocks)
    else:
        joined = g.apply(graph.Concat(1), *blocks)
    return g.apply(graph.Reshape((frames, layout.height, 1)), joined), layout


def assemble_features(spectra: ComplexSpectra, cfg: FrontEndConfig) -> FeatureTensor:
    """Stack the component blocks of ``cfg.variant`` in height, with one channel."""
    g = graph.Graph()
    source = g.input((spectra.frames, 2, spectra.bins))
    node, layout = feature_nodes(g, source, cfg)
    g.output(node)
    return FeatureTensor(graph.forward(g, spectra.stacked()), layout)


def export_spectrogram(spectra: ComplexSpectra, path: PathLike) -> Tuple[Path, Path]:
    """Write ``log(|X| + 1e-6)`` as CSV (one row per frame) plus a PGM image.

    The image has frequency on the vertical axis with low bins at the bottom and
    values scaled to 0..255. It is written next to ``path`` with a ``.pgm`` suffix.
    """
    csv_path = Path(path)
    pgm_path = csv_path.with_suffix(".pgm")
    values = np.log(np.hypot(spectra.real, spectra.imag) + 1e-6)

    with atomic_path(csv_path) as tmp:
        np.savetxt(tmp, values, delimiter=",", newline="\r\n", fmt="%.9g")

    low, high = float(values.min()), float(values.max())
    if high > low:
        scaled = (values - low) / (high - low) * 255.0
    else:
        scaled = np.zeros_like(values)
    image = np.round(scaled).astype(np.uint8).T[::-1]
    height, width = image.shape
    with atomic_path(pgm_path) as tmp:
        with open(tmp, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (width, height))
            f.write(np.ascontiguousarray(image).tobytes())

    logger.debug("Wrote spectrogram %s and %s", csv_path, pgm_path)
    return csv_path, pgm_path


class Frame(graph.Op):
    """Samples to Hann windowed frames."""

    name = "frame"
    linear = True

    def __init__(self, cfg: FrontEndConfig):
        self.n_fft = cfg.n_fft
        self.hop = cfg.hop
        self.window = hann_window(cfg.n_fft)

    def output_shape(self, shape):
        if len(shape) != 1:
            raise ShapeError("framing expects a 1-d signal, not %s" % (shape,))
        if shape[0] < self.n_fft:
            raise InputTooShortError(
                "need at least %d samples, got %d" % (self.n_fft, shape[0])
            )
        return ((shape[0] - self.n_fft) // self.hop + 1, self.n_fft)

    def forward(self, x):
        return _frame(x, self.n_fft, self.hop, self.window), len(x)

    def backward(self, grad, cache):
        return (_overlap_add(grad * self.window, self.hop, cache),)


class DFT(graph.Op):
    """Real input DFT of each row, as ``frames x 2 x bins`` (real, imaginary)."""

    name = "dft"
    linear = True

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] % 2:
            raise ShapeError("DFT expects frames x even n_fft, not %s" % (shape,))
        return (shape[0], 2, shape[1] // 2 + 1)

    def forward(self, x):
        spectrum = np.fft.rfft(x, axis=-1)
        return np.stack([spectrum.real, spectrum.imag], axis=1), x.shape[1]

    def backward(self, grad, cache):
        n = cache
        bins = grad.shape[2]
        padded = np.zeros((grad.shape[0], n), dtype=np.complex128)
        padded[:, :bins] = grad[:, 0] + 1j * grad[:, 1]
        # d/dx of sum_b gR_b * Re(X_b) + gI_b * Im(X_b)
        return (np.fft.ifft(padded, axis=-1).real * n,)


class Plane(graph.Op):
    """Select the real (0) or imaginary (1) plane of stacked spectra."""

    name = "plane"
    linear = True

    def __init__(self, index: int):
        if index not in (0, 1):
            raise ParameterError("plane index must be 0 or 1, not %r" % index)
        self.index = index

    def output_shape(self, shape):
        if len(shape) != 3 or shape[1] != 2:
            raise ShapeError("expected frames x 2 x bins, not %s" % (shape,))
        return (shape[0], shape[2])

    def forward(self, x):
        return x[:, self.index].copy(), x.shape

    def backward(self, grad, cache):
        out = np.zeros(cache)
        out[:, self.index] = grad
        return (out,)


class _SpectraOp(graph.Op):
    def output_shape(self, shape):
        if len(shape) != 3 or shape[1] != 2:
            raise ShapeError("expected frames x 2 x bins, not %s" % (shape,))
        return (shape[0], shape[2])


class Magnitude(_SpectraOp):
    name = "magnitude"

    def __init__(self, epsilon: float):
        self.epsilon = epsilon

    def forward(self, x):
        real, imag = x[:, 0], x[:, 1]
        m = np.sqrt(real * real + imag * imag + self.epsilon)
        return m, (real, imag, m)

    def backward(self, grad, cache):
        real, imag, m = cache
        return (np.stack([grad * real / m, grad * imag / m], axis=1),)


class Phase(_SpectraOp):
    """``atan2(imag, real)`` with zero value and zero gradient at the origin."""

    name = "phase"

    def forward(self, x):
        real, imag = x[:, 0], x[:, 1]
        return _phase(real, imag), (real, imag)

    def backward(self, grad, cache):
        real, imag = cache
        power = real * real + imag * imag
        scale = np.zeros_like(power)
        np.divide(grad, power, out=scale, where=power > 0)
        return (np.stack([-imag * scale, real * scale], axis=1),)


class PhaseDifferential(graph.Op):
    name = "phase_differential"
    linear = True

    def output_shape(self, shape):
        if len(shape) != 2 or shape[0] < 1:
            raise ShapeError("expected frames x bins, not %s" % (shape,))
        return shape

    def forward(self, x):
        return phase_differential(x), None

    def backward(self, grad, cache):
        out = grad.copy()
        out[:-1] -= grad[1:]
        return (out,)


class Unwrap(graph.Op):
    """Principal value mapping; a shift by a locally constant multiple of 2 pi."""

    name = "unwrap"

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return unwrap(x), None

    def backward(self, grad, cache):
        return (grad,)
