"""A static reverse-mode differentiation engine for fixed feed-forward pipelines.

A :class:`Graph` is built once, node by node, with :meth:`Graph.input` and
:meth:`Graph.apply`. Shapes are checked while building so a mismatched pipeline fails
before any sample is processed. :func:`forward` then evaluates every node in build
order and caches what each op needs, and :func:`backward` walks the nodes in reverse,
accumulating gradients in ``float64``.

Examples:
    .. code-block:: python

        import numpy as np
        from wavestyle import graph

        g = graph.Graph()
        x = g.input((3,))
        g.output(g.apply(graph.Scale(2.0), x))

        graph.forward(g, np.array([1.0, 2.0, 3.0]))  # [2, 4, 6]
        graph.backward(g, np.ones(3))  # [2, 2, 2]
"""

from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GraphError, ParameterError, ShapeError, StateError

__all__ = [
    "Shape",
    "Op",
    "Node",
    "Graph",
    "forward",
    "backward",
    "gradient_check",
    "adjoint_check",
    "linearization_check",
    "Identity",
    "Scale",
    "Reshape",
    "Concat",
    "Stack",
    "Gather",
    "Log",
    "WeightedSum",
]

Shape = Tuple[int, ...]


class Op:
    """A differentiable operation.

    Subclasses implement :meth:`output_shape`, :meth:`forward` and :meth:`backward`.
    ``forward`` returns the output together with whatever it wants handed back to
    ``backward``; it must not modify its inputs.
    """

    name = "op"
    linear = False

    def output_shape(self, *shapes: Shape) -> Shape:
        raise NotImplementedError()

    def forward(self, *inputs: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError()

    def backward(self, grad: np.ndarray, cache: Any) -> Tuple[np.ndarray, ...]:
        raise NotImplementedError()

    def __repr__(self):
        return "%s()" % type(self).__name__


class Node:
    __slots__ = ("op", "inputs", "shape", "index")

    def __init__(self, op: Optional[Op], inputs: Tuple["Node", ...], shape: Shape):
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.index = -1

    def __repr__(self):
        return "Node(%d, %r, %s)" % (self.index, self.op, self.shape)


class Graph:
    """A directed acyclic graph of :class:`Op` applications with a single input."""

    def __init__(self):
        self._nodes: List[Node] = []
        self._input: Optional[Node] = None
        self._output: Optional[Node] = None
        self._values: Optional[List[np.ndarray]] = None
        self._caches: Optional[List[Any]] = None

    def __len__(self) -> int:
        return len(self._nodes)

    def input(self, shape: Sequence[int]) -> Node:
        if self._input is not None:
            raise GraphError("A graph has exactly one input.")
        node = self._add(Node(None, (), tuple(int(s) for s in shape)))
        self._input = node
        return node

    def apply(self, op: Op, *inputs: Node) -> Node:
        for n in inputs:
            if not self._owns(n):
                raise GraphError("%r does not belong to this graph." % n)
        try:
            shape = op.output_shape(*(n.shape for n in inputs))
        except ShapeError as error:
            raise GraphError("Cannot apply %r: %s" % (op, error)) from error
        return self._add(Node(op, tuple(inputs), tuple(shape)))

    def output(self, node: Node) -> Node:
        if not self._owns(node):
            raise GraphError("%r does not belong to this graph." % node)
        self._output = node
        return node

    def value(self, node: Node) -> np.ndarray:
        """The value ``node`` took during the last :func:`forward`."""
        if self._values is None:
            raise StateError("The graph has not been evaluated yet.")
        return self._values[node.index]

    def _owns(self, node: Node) -> bool:
        return 0 <= node.index < len(self._nodes) and self._nodes[node.index] is node

    def _add(self, node: Node) -> Node:
        node.index = len(self._nodes)
        self._nodes.append(node)
        self._values = self._caches = None
        return node

    def _check_runnable(self):
        if self._input is None or self._output is None or len(self._nodes) < 2:
            raise GraphError("The graph has no operations or no declared output.")


def forward(graph: Graph, x: np.ndarray) -> np.ndarray:
    """Evaluate ``graph`` on ``x`` and cache activations for :func:`backward`."""
    graph._check_runnable()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != graph._input.shape:
        raise ShapeError(
            "Graph input has shape %s, expected %s." % (x.shape, graph._input.shape)
        )
    values: List[np.ndarray] = []
    caches: List[Any] = []
    for node in graph._nodes:
        if node.op is None:
            out, cache = x, None
        else:
            out, cache = node.op.forward(*(values[n.index] for n in node.inputs))
        values.append(out)
        caches.append(cache)
    graph._values, graph._caches = values, caches
    return values[graph._output.index]


def backward(graph: Graph, upstream: Optional[np.ndarray] = None) -> np.ndarray:
    """Return the gradient of the graph output with respect to its input.

    ``upstream`` is the gradient flowing into the output and defaults to one (for a
    scalar output).
    """
    if graph._values is None or graph._caches is None:
        raise StateError("backward() called before forward().")
    out_node = graph._output
    if upstream is None:
        upstream = np.ones(out_node.shape)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out_node.shape:
        raise ShapeError(
            "Upstream gradient has shape %s, expected %s."
            % (upstream.shape, out_node.shape)
        )

    grads: List[Optional[np.ndarray]] = [None] * len(graph._nodes)
    grads[out_node.index] = upstream
    for node in reversed(graph._nodes[: out_node.index + 1]):
        grad = grads[node.index]
        if grad is None or node.op is None:
            continue
        parent_grads = node.op.backward(grad, graph._caches[node.index])
        for parent, g in zip(node.inputs, parent_grads):
            if grads[parent.index] is None:
                grads[parent.index] = np.array(g, dtype=np.float64)
            else:
                grads[parent.index] = grads[parent.index] + g

    result = grads[graph._input.index]
    if result is None:
        return np.zeros(graph._input.shape)
    return result


def gradient_check(
    graph: Graph,
    x: np.ndarray,
    h: float = 1e-5,
    coordinates: int = 64,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences.

    Non-scalar outputs are reduced to a scalar by a fixed random projection. Returns
    the largest relative error over a random subset of ``coordinates`` input entries,
    using ``max(|a|, |b|, 1e-8)`` as the denominator.
    """
    if not h > 0:
        raise ParameterError("Finite difference step must be positive, not %r." % h)
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = forward(graph, x)
    weights = np.ones(()) if out.ndim == 0 else rng.standard_normal(out.shape)

    def f(v):
        return float(np.sum(forward(graph, v) * weights))

    f(x)
    analytic = backward(graph, weights)

    size = x.size
    picks = rng.choice(size, size=min(coordinates, size), replace=False)
    worst = 0.0
    for i in picks:
        bumped = x.copy()
        bumped.flat[i] = x.flat[i] + h
        plus = f(bumped)
        bumped.flat[i] = x.flat[i] - h
        minus = f(bumped)
        numeric = (plus - minus) / (2 * h)
        a = analytic.flat[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def adjoint_check(op: Op, *inputs: np.ndarray, seed: int = 0) -> float:
    """Dot product test ``<A v, u> == <v, A^T u>`` for a linear op.

    Only the shapes of ``inputs`` are used; ``v`` holds one random tensor per input
    and the right hand side sums over all of them. Returns the relative mismatch
    between the two inner products.
    """
    rng = np.random.default_rng(seed)
    vs = [rng.standard_normal(np.shape(x)) for x in inputs]
    av, cache = op.forward(*vs)
    u = rng.standard_normal(np.shape(av))
    atu = op.backward(u, cache)
    if len(atu) != len(vs):
        raise ShapeError(
            "%r returned %d gradients for %d inputs" % (op, len(atu), len(vs))
        )
    lhs = float(np.sum(av * u))
    rhs = sum(float(np.sum(v * g)) for v, g in zip(vs, atu))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def linearization_check(
    op: Op, *inputs: np.ndarray, h: float = 1e-6, seed: int = 0
) -> float:
    """:func:`adjoint_check` for any op, linearized at ``inputs``.

    The Jacobian product ``J v`` is taken by central differences along a random
    direction ``v`` and compared with ``v . backward(u)`` from the cache of the
    forward pass at ``inputs``. ``inputs`` must be away from kinks and branch cuts.
    """
    if not h > 0:
        raise ParameterError("Finite difference step must be positive, not %r." % h)
    rng = np.random.default_rng(seed)
    points = [np.asarray(x, dtype=np.float64) for x in inputs]
    out, cache = op.forward(*points)
    vs = [rng.standard_normal(p.shape) for p in points]
    u = rng.standard_normal(np.shape(out))
    plus, _ = op.forward(*(p + h * v for p, v in zip(points, vs)))
    minus, _ = op.forward(*(p - h * v for p, v in zip(points, vs)))
    lhs = float(np.sum((plus - minus) / (2 * h) * u))
    rhs = sum(float(np.sum(v * g)) for v, g in zip(vs, op.backward(u, cache)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def _prod(shape: Shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


class Identity(Op):
    name = "identity"
    linear = True

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return x.copy(), None

    def backward(self, grad, cache):
        return (grad,)


class Scale(Op):
    name = "scale"
    linear = True

    def __init__(self, factor: float):
        self.factor = float(factor)

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return x * self.factor, None

    def backward(self, grad, cache):
        return (grad * self.factor,)


class Reshape(Op):
    name = "reshape"
    linear = True

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, shape):
        if _prod(shape) != _prod(self.shape):
            raise ShapeError("cannot reshape %s into %s" % (shape, self.shape))
        return self.shape

    def forward(self, x):
        return x.reshape(self.shape), x.shape

    def backward(self, grad, cache):
        return (grad.reshape(cache),)


class Concat(Op):
    """Join inputs along ``axis``; all other dimensions must agree."""

    name = "concat"
    linear = True

    def __init__(self, axis: int):
        self.axis = axis

    def output_shape(self, *shapes):
        if not shapes:
            raise ShapeError("nothing to concatenate")
        first = shapes[0]
        axis = self.axis % len(first)
        for s in shapes[1:]:
            if len(s) != len(first) or any(
                a != b for i, (a, b) in enumerate(zip(s, first)) if i != axis
            ):
                raise ShapeError("mismatched shapes %s and %s" % (first, s))
        total = sum(s[axis] for s in shapes)
        return first[:axis] + (total,) + first[axis + 1 :]

    def forward(self, *xs):
        return np.concatenate(xs, axis=self.axis), [x.shape[self.axis] for x in xs]

    def backward(self, grad, cache):
        splits = np.cumsum(cache)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Stack(Op):
    """Stack equally shaped inputs along a new ``axis``."""

    name = "stack"
    linear = True

    def __init__(self, axis: int):
        self.axis = axis

    def output_shape(self, *shapes):
        if not shapes or any(s != shapes[0] for s in shapes):
            raise ShapeError("cannot stack shapes %s" % (shapes,))
        shape = list(shapes[0])
        shape.insert(self.axis % (len(shape) + 1), len(shapes))
        return tuple(shape)

    def forward(self, *xs):
        return np.stack(xs, axis=self.axis), len(xs)

    def backward(self, grad, cache):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(cache))


class Gather(Op):
    """Select ``indices`` along ``axis``."""

    name = "gather"
    linear = True

    def __init__(self, axis: int, indices: Sequence[int]):
        self.axis = axis
        self.indices = np.asarray(indices, dtype=np.intp)

    def output_shape(self, shape):
        axis = self.axis % len(shape)
        if len(self.indices) and (
            self.indices.min() < 0 or self.indices.max() >= shape[axis]
        ):
            raise ShapeError("indices out of range for axis of size %d" % shape[axis])
        return shape[:axis] + (len(self.indices),) + shape[axis + 1 :]

    def forward(self, x):
        return np.take(x, self.indices, axis=self.axis), x.shape

    def backward(self, grad, cache):
        out = np.zeros(cache)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.indices, np.moveaxis(grad, self.axis, 0))
        return (out,)


class Log(Op):
    """Natural logarithm of ``x + offset``."""

    name = "log"

    def __init__(self, offset: float = 0.0):
        self.offset = float(offset)

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        shifted = x + self.offset
        return np.log(shifted), shifted

    def backward(self, grad, cache):
        return (grad / cache,)


class WeightedSum(Op):
    """``sum_i w_i * x_i`` over scalar inputs."""

    name = "weighted_sum"
    linear = True

    def __init__(self, weights: Sequence[float]):
        self.weights = tuple(float(w) for w in weights)

    def output_shape(self, *shapes):
        if len(shapes) != len(self.weights):
            raise ShapeError(
                "%d inputs for %d weights" % (len(shapes), len(self.weights))
            )
        if any(s != () for s in shapes):
            raise ShapeError("weighted sums combine scalars, not %s" % (shapes,))
        return ()

    def forward(self, *xs):
        total = np.zeros(())
        for w, x in zip(self.weights, xs):
            total = total + w * x
        return total, None

    def backward(self, grad, cache):
        return tuple(grad * w for w in self.weights)
