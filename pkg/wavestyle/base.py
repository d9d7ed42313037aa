"""Observable records for long running optimizations.

A :class:`Model` is written into by the optimizer. Callers watch it by registering
a :func:`view`, a function called as ``view(model, events)`` where ``events`` is a
tuple of plain dicts. Which method calls turn into events is declared on the model
class with :class:`Control` attributes::

    class Trace(Model):

        _control_push = Control("push", after="_after_push")

        def __init__(self):
            self.values = []

        def push(self, value):
            self.values.append(value)

        def _after_push(self, answer, notify):
            notify(index=len(self.values) - 1, value=answer["value"])
"""

from contextlib import contextmanager
from functools import wraps
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

__all__ = ["Model", "Control", "view", "unview", "views", "notifier", "mute"]

Event = Dict[str, Any]
Events = Tuple[Event, ...]
ViewFunction = Callable[["Model", Events], None]
Callback = Union[Callable[..., Any], str, None]


class Model:
    """Base class of anything a :func:`view` can watch."""

    _views: List[ViewFunction]
    _muted: int

    def __new__(cls, *args: Any, **kwargs: Any) -> "Model":
        self = super().__new__(cls)
        self._views = []
        self._muted = 0
        return self

    def _emit(self, events: Events) -> None:
        if self._muted or not events:
            return
        for function in list(self._views):
            function(self, events)


def _require_model(model: Any) -> "Model":
    if not isinstance(model, Model):
        raise TypeError("Expected a Model, not %r." % (model,))
    return model


def views(model: Model) -> List[ViewFunction]:
    """A copy of the view functions registered on ``model``."""
    return list(_require_model(model)._views)


def view(model: Model, function: Optional[ViewFunction] = None) -> Any:
    """Register ``function`` to receive the events of ``model``.

    Without ``function`` a decorator is returned::

        report = LossReport()

        @view(report)
        def printer(report, events):
            for e in events:
                print("iter=%(iteration)d total=%(total)g" % e)
    """
    _require_model(model)

    def register(function: ViewFunction) -> ViewFunction:
        model._views.append(function)
        return function

    if function is None:
        return register
    register(function)
    return None


def unview(model: Model, function: ViewFunction) -> None:
    """Stop sending events of ``model`` to ``function``.

    Raises:
        ValueError: if ``function`` is not a view of ``model``.
    """
    try:
        _require_model(model)._views.remove(function)
    except ValueError:
        raise ValueError("%r is not a view of %r." % (function, model)) from None


@contextmanager
def notifier(model: Model) -> Iterator[Callable[..., None]]:
    """Yield a ``notify(**data)`` function; collected events go out on exit."""
    collected: List[Event] = []
    yield lambda *args, **kwargs: collected.append(dict(*args, **kwargs))
    model._emit(tuple(collected))


@contextmanager
def mute(model: Model) -> Iterator[None]:
    """Silence the views of ``model`` inside the block. Mutes nest."""
    _require_model(model)._muted += 1
    try:
        yield None
    finally:
        model._muted -= 1


class Control:
    """Turn calls of the named model methods into events.

    ``before`` runs ahead of the method as ``before(call, notify)`` where ``call``
    has the method ``name``, its ``args`` and ``kwargs``. ``after`` runs once the
    method returned as ``after(answer, notify)`` where ``answer`` has the ``name``,
    the value ``before`` returned (as ``"before"``) and the method's own ``value``.
    Callbacks are functions taking the model first, or names of model methods.

    Parameters:
        methods: method names as a list or a comma separated string.
        before: callback run before each call.
        after: callback run after each call.
    """

    def __init__(
        self,
        methods: Union[List[str], Tuple[str, ...], str],
        *,
        before: Callback = None,
        after: Callback = None,
    ):
        if isinstance(methods, str):
            methods = [m.strip() for m in methods.split(",")]
        elif not isinstance(methods, (list, tuple)):
            raise ValueError("methods must be a string or a list of strings.")
        self.methods = tuple(methods)
        self.before = before
        self.after = after

    def __set_name__(self, owner: type, name: str) -> None:
        if not issubclass(owner, Model):
            raise TypeError("Controls belong on a Model, not %r." % owner)
        for method in self.methods:
            setattr(owner, method, self._wrap(method, getattr(owner, method)))

    @staticmethod
    def _bind(model: Model, callback: Callback) -> Optional[Callable[..., Any]]:
        if callback is None:
            return None
        if isinstance(callback, str):
            return getattr(model, callback)
        return lambda *args: callback(model, *args)  # type: ignore

    def _wrap(self, name: str, method: Callable[..., Any]) -> Callable[..., Any]:
        control = self

        @wraps(method)
        def controlled(model, *args, **kwargs):
            before = control._bind(model, control.before)
            after = control._bind(model, control.after)
            before_value = None
            if before is not None:
                with notifier(model) as notify:
                    call = {"name": name, "args": args, "kwargs": kwargs}
                    before_value = before(call, notify)
            value = method(model, *args, **kwargs)
            if after is not None:
                answer = {"name": name, "before": before_value, "value": value}
                with notifier(model) as notify:
                    after(answer, notify)
            return value

        return controlled
