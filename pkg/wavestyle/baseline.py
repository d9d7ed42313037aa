"""Magnitude domain style transfer followed by Griffin-Lim phase reconstruction.

This is the comparison path: a log-magnitude spectrogram is optimized through the
``"baseline-ulyanov"`` network (bins as channels, a 1-d convolution over time) with
the same losses and optimizer as :mod:`wavestyle.stylizer`, then turned back into
audio by Griffin-Lim.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from . import graph
from .audio_io import AudioClip, check_compatible
from .errors import ParameterError
from .models import GriffinLimTrace, LossReport
from .network import Network, NetworkConfig, build_network, load_preset, tap_nodes
from .spectral import (
    ComplexSpectra,
    FeatureLayout,
    FeatureVariant,
    FrontEndConfig,
    assemble_features,
    dft_forward,
    frame_count,
    frame_signal,
    framed_length,
    inverse_dft_overlap_add,
)
from .stylizer import (
    StyleTransferConfig,
    Targets,
    attach_losses,
    filter_matrix,
    gram,
    initial_values,
    optimize,
)

__all__ = [
    "GriffinLimConfig",
    "magnitude_distance",
    "griffin_lim",
    "log_magnitudes",
    "optimize_log_magnitudes",
    "ulyanov_stylize",
]

logger = logging.getLogger(__name__)

PHASE_INITS = ("zero", "random")


@dataclass(frozen=True)
class GriffinLimConfig:
    iterations: int = 100
    init_phase: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("Griffin-Lim needs at least one iteration.")
        if self.init_phase not in PHASE_INITS:
            raise ParameterError(
                "init_phase must be one of %s, not %r." % (PHASE_INITS, self.init_phase)
            )


def _bin_weights(bins: int) -> np.ndarray:
    # interior bins stand for a conjugate pair in the full spectrum
    weights = np.full(bins, 2.0)
    weights[0] = weights[-1] = 1.0
    return weights


def magnitude_distance(spectra: ComplexSpectra, target_mags: np.ndarray) -> float:
    """Distance between ``|spectra|`` and ``target_mags`` over the full spectrum."""
    diff = np.hypot(spectra.real, spectra.imag) - target_mags
    return float(np.sqrt(np.sum(_bin_weights(spectra.bins) * diff * diff)))


def griffin_lim(
    target_mags: np.ndarray,
    fe: FrontEndConfig,
    gl: GriffinLimConfig,
    trace: Optional[GriffinLimTrace] = None,
    sample_rate: int = 1,
) -> AudioClip:
    """Recover a signal whose STFT magnitudes approach ``target_mags``.

    Alternates between imposing the target magnitudes on the current phase and
    taking the least squares inverse STFT. If given, ``trace`` records the spectral
    distance of the starting signal and after every iteration; it never increases.
    """
    target = np.asarray(target_mags, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != fe.bins:
        raise ParameterError(
            "Expected frames x %d magnitudes, not %s." % (fe.bins, target.shape)
        )
    if not np.all(np.isfinite(target)) or np.any(target < 0):
        raise ParameterError("Target magnitudes must be finite and non-negative.")

    out_len = framed_length(target.shape[0], fe)
    if gl.init_phase == "random":
        rng = np.random.default_rng(gl.seed)
        rotation = np.exp(2j * np.pi * rng.random(target.shape))
    else:
        rotation = np.ones(target.shape, dtype=np.complex128)

    clip = inverse_dft_overlap_add(
        ComplexSpectra.from_complex(target * rotation), fe, out_len, sample_rate
    )
    for iteration in range(gl.iterations + 1):
        spectrum = dft_forward(frame_signal(clip, fe))
        if trace is not None:
            trace.record(magnitude_distance(spectrum, target))
        if iteration == gl.iterations:
            break
        rotation = np.exp(1j * np.angle(spectrum.to_complex()))
        clip = inverse_dft_overlap_add(
            ComplexSpectra.from_complex(target * rotation), fe, out_len, sample_rate
        )
    return clip


def log_magnitudes(clip: AudioClip, fe: FrontEndConfig) -> np.ndarray:
    """``log(magnitude + epsilon)`` as a ``frames x bins`` matrix."""
    fe = replace(fe, variant=FeatureVariant.MAG_ONLY)
    features = assemble_features(dft_forward(frame_signal(clip, fe)), fe)
    return features.values[:, :, 0]


def _magnitude_taps(frames: int, network: Network):
    bins = network.config.front_end.bins
    g = graph.Graph()
    source = g.input((frames, bins))
    features = g.apply(graph.Reshape((frames, bins, 1)), source)
    layout = FeatureLayout(("magnitude",), bins)
    return g, tap_nodes(g, features, layout, network)


def optimize_log_magnitudes(
    content: AudioClip,
    style: AudioClip,
    cfg: StyleTransferConfig,
    fe: FrontEndConfig,
    net: Optional[NetworkConfig] = None,
    report: Optional[LossReport] = None,
) -> Tuple[np.ndarray, np.ndarray, LossReport]:
    """Optimize a ``frames x bins`` log-magnitude matrix against the two clips.

    Returns the optimized values, the content clip's own log-magnitudes and the
    report. ``net`` defaults to the ``"baseline-ulyanov"`` preset; its front-end is
    replaced by ``fe`` with the magnitude-only variant.
    """
    check_compatible(content, style)
    content.validate()
    style.validate()
    fe = replace(fe, variant=FeatureVariant.MAG_ONLY)
    net_cfg = load_preset("baseline-ulyanov") if net is None else net
    network = build_network(replace(net_cfg, front_end=fe, bins_as_channels=True))

    span = framed_length(frame_count(len(content), fe), fe)
    content_mags = log_magnitudes(
        AudioClip(content.samples[:span], content.sample_rate), fe
    )
    style_mags = log_magnitudes(style, fe)

    g, taps = _magnitude_taps(len(style_mags), network)
    g.output(taps[-1][1])
    graph.forward(g, style_mags)
    style_grams = [
        gram(filter_matrix(g.value(node))) for tap, node in taps if tap.role == "style"
    ]

    g, taps = _magnitude_taps(len(content_mags), network)
    g.output(taps[-1][1])
    graph.forward(g, content_mags)
    content_acts = [g.value(node).copy() for tap, node in taps if tap.role == "content"]

    targets = Targets(tuple(content_acts), tuple(style_grams))
    objective = attach_losses(g, taps, targets, cfg)
    report = LossReport() if report is None else report
    logger.info(
        "Optimizing %d x %d log-magnitudes (%d iterations)",
        content_mags.shape[0],
        content_mags.shape[1],
        cfg.iterations,
    )
    log_mags = optimize(objective, initial_values(content_mags, cfg), cfg, report)
    return log_mags, content_mags, report


def ulyanov_stylize(
    content: AudioClip,
    style: AudioClip,
    cfg: StyleTransferConfig,
    fe: FrontEndConfig,
    gl: GriffinLimConfig,
    net: Optional[NetworkConfig] = None,
    report: Optional[LossReport] = None,
) -> Tuple[AudioClip, LossReport]:
    """Stylize in the log-magnitude domain and reconstruct phase with Griffin-Lim.

    See :func:`optimize_log_magnitudes` for ``net`` and ``report``.
    """
    log_mags, _, report = optimize_log_magnitudes(content, style, cfg, fe, net, report)
    fe = replace(fe, variant=FeatureVariant.MAG_ONLY)
    mags = np.maximum(np.exp(log_mags) - fe.epsilon, 0.0)
    trace = GriffinLimTrace()
    clip = griffin_lim(mags, fe, gl, trace=trace, sample_rate=content.sample_rate)
    if not trace.is_monotone():
        logger.warning("Griffin-Lim distance increased: %s", trace.distances)
    logger.info(
        "Griffin-Lim distance %g -> %g after %d iterations",
        trace.distances[0],
        trace.distances[-1],
        gl.iterations,
    )
    return clip, report
