"""Style transfer by optimizing a waveform directly.

The waveform goes through the front-end and the random network; content taps are
compared to the content clip's activations, style taps are compared through Gram
matrices to the style clip's, and Adam updates the samples using the gradient from
:func:`wavestyle.graph.backward`.

Losses are normalized by element counts rather than by ``1 / (4 N^2 M^2)``:

- content: ``sum((x - c)^2) / N`` averaged over content taps
- style: ``sum((G_x - G_s)^2) / F^2`` averaged over style taps, with
  ``G = A A^T / (F T)``
- total: ``content_weight * content + style_weight * style``
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import graph
from .audio_io import AudioClip, check_compatible
from .errors import NumericalError, ParameterError, ShapeError
from .models import LossReport
from .network import Network, NetworkConfig, Tap, build_network, tap_nodes
from .spectral import DFT, Frame, Magnitude, feature_nodes, frame_count, framed_length

__all__ = [
    "StyleTransferConfig",
    "AdamState",
    "LossComponents",
    "Targets",
    "Objective",
    "adam_step",
    "filter_matrix",
    "gram",
    "content_loss",
    "style_loss",
    "signal_taps",
    "compute_targets",
    "attach_losses",
    "total_loss_and_grad",
    "initial_values",
    "optimize",
    "stylize",
    "ContentLoss",
    "StyleLoss",
]

logger = logging.getLogger(__name__)

INITS = ("noise", "content")


@dataclass(frozen=True)
class StyleTransferConfig:
    content_weight: float = 1.0
    style_weight: float = 1e-2
    iterations: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    init: str = "noise"
    noise_sigma: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.content_weight < 0 or self.style_weight < 0:
            raise ParameterError("Loss weights must be non-negative.")
        if not self.content_weight + self.style_weight > 0:
            raise ParameterError("At least one loss weight must be positive.")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0, not %r." % self.iterations)
        if not self.learning_rate > 0:
            raise ParameterError(
                "learning_rate must be positive, not %r." % self.learning_rate
            )
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ParameterError("%s must lie in [0, 1)." % name)
        if not self.adam_epsilon > 0:
            raise ParameterError("adam_epsilon must be positive.")
        if self.init not in INITS:
            raise ParameterError("init must be one of %s, not %r." % (INITS, self.init))
        if not self.noise_sigma > 0:
            raise ParameterError("noise_sigma must be positive.")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    t: int = 0

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, cfg: StyleTransferConfig
) -> Tuple[np.ndarray, AdamState]:
    """One bias corrected Adam update. Inputs are left untouched."""
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ShapeError(
            "Adam shapes differ: params %s, grad %s, state %s"
            % (params.shape, grad.shape, state.m.shape)
        )
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    updated = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return updated, AdamState(m, v, t)


def filter_matrix(x: np.ndarray) -> np.ndarray:
    """View an activation tensor as ``filters x time`` (last axis holds filters)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError("Activations need at least two axes, not %s." % (x.shape,))
    return x.reshape(-1, x.shape[-1]).T


def gram(activations: np.ndarray) -> np.ndarray:
    """``A A^T / (F T)`` for a ``filters x time`` matrix ``A``."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] < 1:
        raise ShapeError("gram() expects a filters x time matrix, not %s." % (a.shape,))
    filters, steps = a.shape
    g = a @ a.T / (filters * steps)
    return 0.5 * (g + g.T)


def content_loss(x_act: np.ndarray, c_act: np.ndarray) -> float:
    x_act, c_act = np.asarray(x_act), np.asarray(c_act)
    if x_act.shape != c_act.shape:
        raise ParameterError(
            "Content activations differ in shape: %s vs %s" % (x_act.shape, c_act.shape)
        )
    return float(np.sum((x_act - c_act) ** 2) / x_act.size)


def style_loss(x_acts: Sequence[np.ndarray], s_grams: Sequence[np.ndarray]) -> float:
    if len(x_acts) != len(s_grams):
        raise ParameterError(
            "%d style taps for %d targets." % (len(x_acts), len(s_grams))
        )
    total = 0.0
    for act, target in zip(x_acts, s_grams):
        a = filter_matrix(act)
        filters = a.shape[0]
        if target.shape != (filters, filters):
            raise ParameterError(
                "Style tap has %d filters but its target Gram is %s."
                % (filters, target.shape)
            )
        total += float(np.sum((gram(a) - target) ** 2)) / filters**2
    return total / len(x_acts)


class ContentLoss(graph.Op):
    name = "content_loss"

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def output_shape(self, shape):
        if shape != self.target.shape:
            raise ShapeError("activations %s vs target %s" % (shape, self.target.shape))
        return ()

    def forward(self, x):
        diff = x - self.target
        return np.asarray(np.sum(diff * diff) / diff.size), diff

    def backward(self, grad, cache):
        return (grad * 2.0 * cache / cache.size,)


class StyleLoss(graph.Op):
    name = "style_loss"

    def __init__(self, target_gram: np.ndarray):
        self.target = np.asarray(target_gram, dtype=np.float64)

    def output_shape(self, shape):
        if len(shape) < 2 or (shape[-1], shape[-1]) != self.target.shape:
            raise ShapeError(
                "activations %s vs target Gram %s" % (shape, self.target.shape)
            )
        return ()

    def forward(self, x):
        a = filter_matrix(x)
        filters, steps = a.shape
        diff = gram(a) - self.target
        return np.asarray(np.sum(diff * diff) / filters**2), (a, diff, x.shape)

    def backward(self, grad, cache):
        a, diff, shape = cache
        filters, steps = a.shape
        d_gram = grad * 2.0 * diff / filters**2
        # G is symmetric in A, so dL/dA = (dG + dG^T) A / (F T)
        d_a = (d_gram + d_gram.T) @ a / (filters * steps)
        return (d_a.T.reshape(shape),)


@dataclass(frozen=True)
class LossComponents:
    total: float
    content: float
    style: float


@dataclass(frozen=True)
class Targets:
    """Content activations and style Gram matrices, in tap order per role."""

    content: Tuple[np.ndarray, ...] = field(repr=False)
    style_grams: Tuple[np.ndarray, ...] = field(repr=False)


class Objective:
    """A graph whose output is the weighted total loss, plus its component nodes."""

    def __init__(
        self, g: graph.Graph, total: graph.Node, content: graph.Node, style: graph.Node
    ):
        self.graph = g
        self.total = total
        self.content = content
        self.style = style

    def evaluate(self, x: np.ndarray) -> Tuple[LossComponents, np.ndarray]:
        graph.forward(self.graph, x)
        losses = LossComponents(
            float(self.graph.value(self.total)),
            float(self.graph.value(self.content)),
            float(self.graph.value(self.style)),
        )
        return losses, graph.backward(self.graph)


def _as_network(net: Union[Network, NetworkConfig]) -> Network:
    return net if isinstance(net, Network) else build_network(net)


def signal_taps(
    n_samples: int, network: Network
) -> Tuple[graph.Graph, List[Tuple[Tap, graph.Node]]]:
    """Build waveform -> frames -> DFT -> features -> network for ``n_samples``."""
    fe = network.config.front_end
    g = graph.Graph()
    x = g.input((n_samples,))
    spectra = g.apply(DFT(), g.apply(Frame(fe), x))
    features, layout = feature_nodes(g, spectra, fe)
    magnitude = None
    if "magnitude" not in layout and any(
        t.point == "magnitude" for t in network.config.taps
    ):
        magnitude = g.apply(Magnitude(fe.epsilon), spectra)
    return g, tap_nodes(g, features, layout, network, magnitude=magnitude)


def _collect(g: graph.Graph, taps, x: np.ndarray, role: str) -> List[np.ndarray]:
    g.output(taps[-1][1])
    graph.forward(g, x)
    return [g.value(node).copy() for tap, node in taps if tap.role == role]


def compute_targets(
    content: AudioClip, style: AudioClip, net: Union[Network, NetworkConfig]
) -> Targets:
    """Content activations from ``content`` and style Grams from ``style``."""
    network = _as_network(net)
    fe = network.config.front_end
    span = framed_length(frame_count(len(content), fe), fe)
    g, taps = signal_taps(span, network)
    content_acts = _collect(g, taps, content.samples[:span], "content")

    style_span = framed_length(frame_count(len(style), fe), fe)
    g, taps = signal_taps(style_span, network)
    style_acts = _collect(g, taps, style.samples[:style_span], "style")
    return Targets(
        tuple(content_acts), tuple(gram(filter_matrix(a)) for a in style_acts)
    )


def attach_losses(
    g: graph.Graph,
    taps: Sequence[Tuple[Tap, graph.Node]],
    targets: Targets,
    cfg: StyleTransferConfig,
) -> Objective:
    content_nodes = [node for tap, node in taps if tap.role == "content"]
    style_nodes = [node for tap, node in taps if tap.role == "style"]
    if len(content_nodes) != len(targets.content) or len(style_nodes) != len(
        targets.style_grams
    ):
        raise ParameterError(
            "Network has %d content and %d style taps; targets have %d and %d."
            % (
                len(content_nodes),
                len(style_nodes),
                len(targets.content),
                len(targets.style_grams),
            )
        )
    content = g.apply(
        graph.WeightedSum([1.0 / len(content_nodes)] * len(content_nodes)),
        *(g.apply(ContentLoss(t), n) for n, t in zip(content_nodes, targets.content)),
    )
    style = g.apply(
        graph.WeightedSum([1.0 / len(style_nodes)] * len(style_nodes)),
        *(g.apply(StyleLoss(t), n) for n, t in zip(style_nodes, targets.style_grams)),
    )
    weights = graph.WeightedSum([cfg.content_weight, cfg.style_weight])
    total = g.apply(weights, content, style)
    g.output(total)
    return Objective(g, total, content, style)


def total_loss_and_grad(
    x: AudioClip,
    targets: Targets,
    net: Union[Network, NetworkConfig],
    cfg: StyleTransferConfig,
) -> Tuple[LossComponents, np.ndarray]:
    """Weighted loss of ``x`` against ``targets`` and its gradient w.r.t. samples."""
    g, taps = signal_taps(len(x), _as_network(net))
    losses, grad = attach_losses(g, taps, targets, cfg).evaluate(x.samples)
    if not (np.isfinite(losses.total) and np.all(np.isfinite(grad))):
        raise NumericalError("Non-finite loss or gradient.", iteration=0)
    return losses, grad


def initial_values(content: np.ndarray, cfg: StyleTransferConfig) -> np.ndarray:
    """Seeded ``normal(0, noise_sigma)`` noise, or a copy of ``content``."""
    if cfg.init == "content":
        return np.array(content, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal(np.shape(content)) * cfg.noise_sigma


def optimize(
    objective: Objective, x0: np.ndarray, cfg: StyleTransferConfig, report: LossReport
) -> np.ndarray:
    """Run ``cfg.iterations`` Adam steps from ``x0`` recording losses in ``report``.

    The loss recorded for iteration ``k`` is the loss of the values the ``k``-th
    step started from. The values left by the last step are evaluated once more
    without being recorded. The lowest-loss values seen are returned and
    :meth:`LossReport.keep` notes which they were, so the returned loss never
    exceeds the loss at iteration 0.

    Raises:
        ParameterError: if ``report`` already holds rows.
        NumericalError: on a non-finite loss or gradient.
    """
    if len(report):
        raise ParameterError(
            "Expected an empty LossReport, this one holds %d rows." % len(report)
        )
    x = np.array(x0, dtype=np.float64)
    if cfg.iterations == 0:
        return x
    state = AdamState.zeros(x.shape)
    best, best_total, best_iteration = x, np.inf, 0
    for iteration in range(cfg.iterations + 1):
        start = time.perf_counter()
        losses, grad = objective.evaluate(x)
        finite = np.isfinite(losses.total) and np.all(np.isfinite(grad))
        if finite and losses.total < best_total:
            best, best_total, best_iteration = x, losses.total, iteration
        if iteration == cfg.iterations:
            break
        if not finite:
            raise NumericalError(
                "Non-finite loss (%r) at iteration %d." % (losses.total, iteration),
                iteration=iteration,
                report=report,
            )
        x, state = adam_step(x, grad, state, cfg)
        report.record(
            losses.total, losses.content, losses.style, time.perf_counter() - start
        )
    report.keep(best_iteration, best_total)
    if report.total[-1] > report.total[0]:
        logger.warning(
            "Loss rose from %g to %g over %d iterations; "
            "consider a smaller learning rate.",
            report.total[0],
            report.total[-1],
            len(report),
        )
    logger.debug("Kept iteration %d with loss %g", best_iteration, best_total)
    return best


def stylize(
    content: AudioClip,
    style: AudioClip,
    net: Union[Network, NetworkConfig],
    cfg: StyleTransferConfig,
    report: Optional[LossReport] = None,
) -> Tuple[AudioClip, LossReport]:
    """Optimize a waveform whose content resembles ``content`` and style ``style``.

    The output spans the samples covered by the content clip's frames. Views
    registered on ``report`` observe every iteration.
    """
    check_compatible(content, style)
    content.validate()
    style.validate()
    network = _as_network(net)
    fe = network.config.front_end
    span = framed_length(frame_count(len(content), fe), fe)
    frame_count(len(style), fe)

    targets = compute_targets(content, style, network)
    g, taps = signal_taps(span, network)
    objective = attach_losses(g, taps, targets, cfg)

    report = LossReport() if report is None else report
    logger.info(
        "Stylizing %d samples with %s (%d iterations)",
        span,
        network.config.preset or "custom network",
        cfg.iterations,
    )
    x = optimize(objective, initial_values(content.samples[:span], cfg), cfg, report)
    return AudioClip(x, content.sample_rate), report
