"""Shallow convolutional networks with fixed random filters.

The filters are drawn once from a seeded generator and never trained; only the
network input is ever optimized. A network declares "taps", the points whose
activations feed the content and style losses:

- ``"features"``: the assembled front-end features, before any linear layer.
- ``"magnitude"``: the magnitude rows of the features.
- ``"layer<i>"``: the output of the i-th layer (after its ReLU), conv or dense.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import graph
from .errors import ParameterError, ShapeError
from .spectral import FeatureLayout, FeatureTensor, FeatureVariant, FrontEndConfig

__all__ = [
    "LayerSpec",
    "DenseSpec",
    "Tap",
    "NetworkConfig",
    "ConvLayer",
    "DenseLayer",
    "Network",
    "Activation",
    "ActivationSet",
    "PRESETS",
    "init_filters",
    "build_network",
    "conv2d_forward",
    "relu",
    "tap_nodes",
    "forward_collect",
    "load_preset",
    "Conv2D",
    "Dense",
    "ReLU",
]

logger = logging.getLogger(__name__)

ROLES = ("content", "style")
_LAYER_POINT = re.compile(r"^layer(\d+)$")


@dataclass(frozen=True)
class LayerSpec:
    time_width: int = 9
    height_span: int = 3
    filters: int = 128
    stride: Tuple[int, int] = (1, 1)
    relu: bool = True

    def __post_init__(self):
        if min(self.time_width, self.height_span, self.filters) < 1:
            raise ParameterError("Layer dimensions must be positive: %r" % (self,))
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise ParameterError(
                "Strides must be a pair of integers >= 1: %r" % (self,)
            )
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))


@dataclass(frozen=True)
class DenseSpec:
    """A fully connected layer applied to each frame on its own.

    It sees every height row and channel of a frame and produces a
    ``frames x 1 x units`` output.
    """

    units: int = 128
    relu: bool = True

    def __post_init__(self):
        if self.units < 1:
            raise ParameterError("A dense layer needs units >= 1, not %r." % self.units)


AnyLayerSpec = Union[LayerSpec, DenseSpec]


@dataclass(frozen=True)
class Tap:
    point: str
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ParameterError(
                "Tap role must be one of %s, not %r." % (ROLES, self.role)
            )

    @property
    def layer(self) -> Optional[int]:
        match = _LAYER_POINT.match(self.point)
        return int(match.group(1)) if match else None


@dataclass(frozen=True)
class NetworkConfig:
    layers: Tuple[AnyLayerSpec, ...]
    taps: Tuple[Tap, ...]
    seed: int = 0
    front_end: FrontEndConfig = field(default_factory=FrontEndConfig)
    bins_as_channels: bool = False
    preset: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "taps", tuple(self.taps))
        for spec in self.layers:
            if not isinstance(spec, (LayerSpec, DenseSpec)):
                raise ParameterError("Not a layer specification: %r" % (spec,))
        for tap in self.taps:
            if tap.point in ("features", "magnitude"):
                continue
            if tap.layer is None or not 1 <= tap.layer <= len(self.layers):
                raise ParameterError(
                    "Tap %r does not name an existing point of a %d layer network."
                    % (tap.point, len(self.layers))
                )
        roles = {tap.role for tap in self.taps}
        if roles != set(ROLES):
            raise ParameterError(
                "A network needs at least one content and one style tap, got %s."
                % sorted(roles)
            )

    @property
    def in_channels(self) -> int:
        return self.front_end.bins if self.bins_as_channels else 1

    @property
    def feature_height(self) -> int:
        """Height rows the first layer sees."""
        if self.bins_as_channels:
            return 1
        return len(self.front_end.variant.blocks) * self.front_end.bins

    @property
    def depth(self) -> int:
        """Layers that actually have to run to produce every tap."""
        return max((tap.layer or 0) for tap in self.taps)

    def resized(
        self,
        filters: Optional[int] = None,
        time_width: Optional[int] = None,
        depth: Optional[int] = None,
    ) -> "NetworkConfig":
        """Change the filter count, time kernel width or number of layers.

        ``filters`` and ``time_width`` apply to every conv layer. Added layers copy
        the first layer, and every layer receives the taps the first layer has.
        """
        depth = len(self.layers) if depth is None else depth
        if depth < 1:
            raise ParameterError("A network needs at least one layer, not %r." % depth)
        layers = list(self.layers[:depth])
        layers += [self.layers[0]] * (depth - len(layers))
        changes = {"filters": filters, "time_width": time_width}
        changes = {k: v for k, v in changes.items() if v is not None}
        if changes:
            layers = [
                replace(spec, **changes) if isinstance(spec, LayerSpec) else spec
                for spec in layers
            ]
        fixed = [t for t in self.taps if t.layer is None]
        first = [t.role for t in self.taps if t.layer == 1]
        per_layer = [
            Tap("layer%d" % i, role) for i in range(1, depth + 1) for role in first
        ]
        return replace(self, layers=tuple(layers), taps=tuple(fixed + per_layer))

    def with_dense(self, units: int, relu: bool = True) -> "NetworkConfig":
        """Append a :class:`DenseSpec` tapped for both content and style."""
        point = "layer%d" % (len(self.layers) + 1)
        return replace(
            self,
            layers=self.layers + (DenseSpec(units, relu),),
            taps=self.taps + (Tap(point, "content"), Tap(point, "style")),
        )


@dataclass(frozen=True)
class ConvLayer:
    """A realized layer: ``kernel`` is ``time x height x in_channels x filters``."""

    kernel: np.ndarray = field(repr=False)
    stride: Tuple[int, int] = (1, 1)
    relu: bool = True

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=np.float64)
        if kernel.ndim != 4:
            raise ShapeError("Kernels have four dimensions, not %d." % kernel.ndim)
        if not np.all(np.isfinite(kernel)):
            raise ParameterError("Kernel contains non-finite values.")
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise ParameterError("Strides must be >= 1, not %r." % (self.stride,))
        kernel.flags.writeable = False
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))

    @property
    def time_width(self) -> int:
        return self.kernel.shape[0]

    @property
    def height_span(self) -> int:
        return self.kernel.shape[1]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def filters(self) -> int:
        return self.kernel.shape[3]


@dataclass(frozen=True)
class DenseLayer:
    """A realized fully connected layer: ``weight`` is ``inputs x units``.

    ``inputs`` is the height times the channels of the frames it is applied to.
    """

    weight: np.ndarray = field(repr=False)
    relu: bool = True

    def __post_init__(self):
        weight = np.array(self.weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ShapeError("Dense weights have two dimensions, not %d." % weight.ndim)
        if not np.all(np.isfinite(weight)):
            raise ParameterError("Dense weights contain non-finite values.")
        weight.flags.writeable = False
        object.__setattr__(self, "weight", weight)

    @property
    def inputs(self) -> int:
        return self.weight.shape[0]

    @property
    def units(self) -> int:
        return self.weight.shape[1]


Layer = Union[ConvLayer, DenseLayer]


@dataclass(frozen=True)
class Network:
    config: NetworkConfig
    layers: Tuple[Layer, ...]


@dataclass(frozen=True)
class Activation:
    point: str
    role: str
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ActivationSet:
    entries: Tuple[Activation, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def content(self) -> List[np.ndarray]:
        return [e.values for e in self.entries if e.role == "content"]

    @property
    def style(self) -> List[np.ndarray]:
        return [e.values for e in self.entries if e.role == "style"]


def init_filters(cfg: NetworkConfig) -> Tuple[Layer, ...]:
    """Draw every kernel and dense weight from ``normal(0, 2 / fan_in)``.

    One generator seeded with ``cfg.seed`` serves all layers in order.
    """
    rng = np.random.default_rng(cfg.seed)
    height, channels = cfg.feature_height, cfg.in_channels
    layers: List[Layer] = []
    for i, spec in enumerate(cfg.layers, 1):
        if isinstance(spec, DenseSpec):
            if height < 1:
                raise ShapeError("Layer %d has no rows left to connect." % i)
            fan_in = height * channels
            weight = rng.standard_normal((fan_in, spec.units)) * np.sqrt(2.0 / fan_in)
            layers.append(DenseLayer(weight, spec.relu))
            height, channels = 1, spec.units
            continue
        shape = (spec.time_width, spec.height_span, channels, spec.filters)
        sigma = np.sqrt(2.0 / (spec.time_width * spec.height_span * channels))
        kernel = rng.standard_normal(shape) * sigma
        layers.append(ConvLayer(kernel, spec.stride, spec.relu))
        height = (height - spec.height_span) // spec.stride[1] + 1
        channels = spec.filters
    return tuple(layers)


def build_network(cfg: NetworkConfig) -> Network:
    network = Network(cfg, init_filters(cfg))
    logger.debug(
        "Realized %s network with weights %s",
        cfg.preset or "custom",
        [_weights(layer).shape for layer in network.layers],
    )
    return network


def _weights(layer: Layer) -> np.ndarray:
    return layer.kernel if isinstance(layer, ConvLayer) else layer.weight


def conv2d_forward(x: Union[FeatureTensor, np.ndarray], layer: ConvLayer) -> np.ndarray:
    """Valid cross-correlation over (time, height) of a ``time x height x channels``
    input."""
    values = (
        x.values if isinstance(x, FeatureTensor) else np.asarray(x, dtype=np.float64)
    )
    op = Conv2D(layer)
    op.output_shape(values.shape)
    return op.forward(values)[0]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Conv2D(graph.Op):
    name = "conv2d"
    linear = True

    def __init__(self, layer: ConvLayer):
        self.layer = layer

    def output_shape(self, shape):
        kt, kh, channels, filters = self.layer.kernel.shape
        st, sh = self.layer.stride
        if len(shape) != 3:
            raise ShapeError(
                "conv2d expects time x height x channels, not %s" % (shape,)
            )
        if shape[2] != channels:
            raise ShapeError(
                "input has %d channels, kernel expects %d" % (shape[2], channels)
            )
        if shape[0] < kt or shape[1] < kh:
            raise ShapeError(
                "kernel %dx%d is larger than input %dx%d" % (kt, kh, shape[0], shape[1])
            )
        return ((shape[0] - kt) // st + 1, (shape[1] - kh) // sh + 1, filters)

    def forward(self, x):
        kernel = self.layer.kernel
        kt, kh = kernel.shape[:2]
        st, sh = self.layer.stride
        windows = np.lib.stride_tricks.sliding_window_view(x, (kt, kh), axis=(0, 1))
        windows = windows[::st, ::sh]
        return np.tensordot(windows, kernel, axes=([3, 4, 2], [0, 1, 2])), x.shape

    def backward(self, grad, cache):
        kernel = self.layer.kernel
        kt, kh = kernel.shape[:2]
        st, sh = self.layer.stride
        steps_t, steps_h = grad.shape[:2]
        out = np.zeros(cache)
        for i in range(kt):
            for j in range(kh):
                out[
                    i : i + st * (steps_t - 1) + 1 : st,
                    j : j + sh * (steps_h - 1) + 1 : sh,
                ] += np.tensordot(grad, kernel[i, j], axes=([2], [1]))
        return (out,)


class Dense(graph.Op):
    """Multiply each frame, flattened over height and channels, by a weight."""

    name = "dense"
    linear = True

    def __init__(self, layer: DenseLayer):
        self.layer = layer

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(
                "dense expects time x height x channels, not %s" % (shape,)
            )
        if shape[1] * shape[2] != self.layer.inputs:
            raise ShapeError(
                "frames of %d x %d values for a dense layer of %d inputs"
                % (shape[1], shape[2], self.layer.inputs)
            )
        return (shape[0], 1, self.layer.units)

    def forward(self, x):
        flat = x.reshape(len(x), -1)
        return (flat @ self.layer.weight)[:, np.newaxis, :], x.shape

    def backward(self, grad, cache):
        return ((grad[:, 0, :] @ self.layer.weight.T).reshape(cache),)


class ReLU(graph.Op):
    """``max(0, x)``; the subgradient at exactly 0 is 0."""

    name = "relu"

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return relu(x), x > 0

    def backward(self, grad, cache):
        return (grad * cache,)


def tap_nodes(
    g: graph.Graph,
    features: graph.Node,
    layout: FeatureLayout,
    network: Network,
    magnitude: Optional[graph.Node] = None,
) -> List[Tuple[Tap, graph.Node]]:
    """Add the network to ``g`` on top of a ``frames x height x 1`` features node.

    Raw feature taps come out as ``frames x height`` matrices so their rows (bins)
    act as filters for Gram statistics. ``magnitude`` is used for a magnitude tap
    when the feature layout has no magnitude block.
    """
    cfg = network.config
    frames, height, _ = features.shape
    flat = g.apply(graph.Reshape((frames, height)), features)
    points: Dict[str, graph.Node] = {"features": flat}

    if any(t.point == "magnitude" for t in cfg.taps):
        if "magnitude" in layout:
            rows = layout.rows("magnitude")
            points["magnitude"] = g.apply(graph.Gather(1, rows), flat)
        elif magnitude is not None:
            points["magnitude"] = magnitude
        else:
            raise ParameterError(
                "A magnitude tap needs a magnitude block; layout has %s."
                % (layout.blocks,)
            )

    x = features
    if cfg.bins_as_channels:
        x = g.apply(graph.Reshape((frames, 1, height)), features)
    for i, layer in enumerate(network.layers[: cfg.depth], 1):
        op = Conv2D(layer) if isinstance(layer, ConvLayer) else Dense(layer)
        x = g.apply(op, x)
        if layer.relu:
            x = g.apply(ReLU(), x)
        points["layer%d" % i] = x

    return [(tap, points[tap.point]) for tap in cfg.taps]


def forward_collect(
    features: FeatureTensor, network: Union[Network, NetworkConfig]
) -> ActivationSet:
    """Run ``network`` on ``features`` and return the tapped activations.

    A :class:`NetworkConfig` is realized with :func:`build_network` first.
    """
    if isinstance(network, NetworkConfig):
        network = build_network(network)
    g = graph.Graph()
    source = g.input(features.shape)
    taps = tap_nodes(g, source, features.layout, network)
    g.output(taps[-1][1])
    graph.forward(g, features.values)
    return ActivationSet(
        tuple(Activation(tap.point, tap.role, g.value(node)) for tap, node in taps)
    )


def _spectral_network(
    name: str, variant: FeatureVariant, height_span: int
) -> NetworkConfig:
    return NetworkConfig(
        layers=(LayerSpec(time_width=9, height_span=height_span, filters=128),),
        taps=(
            Tap("features", "content"),
            Tap("magnitude", "style"),
            Tap("layer1", "content"),
            Tap("layer1", "style"),
        ),
        front_end=FrontEndConfig(variant=variant),
        preset=name,
    )


PRESETS = ("rim-k3", "mag-updiff-k2", "baseline-ulyanov")


def load_preset(name: str) -> NetworkConfig:
    """Return one of the named architectures in :data:`PRESETS`."""
    if name == "rim-k3":
        return _spectral_network(name, FeatureVariant.REAL_IMAG_MAG, 3)
    elif name == "mag-updiff-k2":
        return _spectral_network(name, FeatureVariant.MAG_UNWRAPPED_PHASE_DIFF, 2)
    elif name == "baseline-ulyanov":
        return NetworkConfig(
            layers=(LayerSpec(time_width=11, height_span=1, filters=2048),),
            taps=(Tap("layer1", "content"), Tap("layer1", "style")),
            front_end=FrontEndConfig(variant=FeatureVariant.MAG_ONLY),
            bins_as_channels=True,
            preset=name,
        )
    raise ParameterError("Unknown preset %r; expected one of %s." % (name, PRESETS))
