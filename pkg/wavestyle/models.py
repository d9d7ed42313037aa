"""Observable records of optimization progress."""

from typing import List, Optional, Tuple

import numpy as np

from .base import Control, Model
from .errors import StateError
from .utils import PathLike, atomic_path

__all__ = ["LossReport", "GriffinLimTrace"]


class LossReport(Model):
    """Per iteration ``(total, content, style)`` losses and wall time.

    Every :meth:`record` notifies views with a single event holding ``iteration``,
    ``total``, ``content``, ``style`` and ``seconds``.
    ``kept`` is the ``(iteration, total)`` of the values an optimizer returned;
    iteration ``len(report)`` stands for the values left by the last step.
    """

    _control_record = Control("record", after="_control_after_record")

    def __init__(self):
        self.total: List[float] = []
        self.content: List[float] = []
        self.style: List[float] = []
        self.seconds: List[float] = []
        self.kept: Optional[Tuple[int, float]] = None

    def __len__(self) -> int:
        return len(self.total)

    def record(
        self, total: float, content: float, style: float, seconds: float
    ) -> None:
        self.total.append(float(total))
        self.content.append(float(content))
        self.style.append(float(style))
        self.seconds.append(float(seconds))

    def keep(self, iteration: int, total: float) -> None:
        if not 0 <= iteration <= len(self):
            raise StateError(
                "Cannot keep iteration %d of %d recorded." % (iteration, len(self))
            )
        self.kept = (int(iteration), float(total))

    def _control_after_record(self, answer, notify):
        notify(
            iteration=len(self) - 1,
            total=self.total[-1],
            content=self.content[-1],
            style=self.style[-1],
            seconds=self.seconds[-1],
        )

    def final(self) -> Tuple[float, float, float]:
        """The last recorded ``(total, content, style)``."""
        if not self.total:
            raise StateError("No iterations recorded.")
        return self.total[-1], self.content[-1], self.style[-1]

    def rows(self) -> List[Tuple[int, float, float, float, float]]:
        return [
            (i, t, c, s, w)
            for i, (t, c, s, w) in enumerate(
                zip(self.total, self.content, self.style, self.seconds)
            )
        ]

    def to_csv(self, path: PathLike) -> None:
        table = np.array(self.rows(), dtype=np.float64).reshape(-1, 5)
        with atomic_path(path) as tmp:
            np.savetxt(
                tmp,
                table,
                delimiter=",",
                newline="\r\n",
                fmt=["%d", "%.12g", "%.12g", "%.12g", "%.6f"],
                header="iteration,total,content,style,seconds",
                comments="",
            )


class GriffinLimTrace(Model):
    """Spectral distance after each Griffin-Lim iteration (index 0 is the start)."""

    _control_record = Control("record", after="_control_after_record")

    def __init__(self):
        self.distances: List[float] = []

    def __len__(self) -> int:
        return len(self.distances)

    def record(self, distance: float) -> None:
        self.distances.append(float(distance))

    def _control_after_record(self, answer, notify):
        notify(iteration=len(self) - 1, distance=self.distances[-1])

    def is_monotone(self, slack: float = 1e-9) -> bool:
        d = np.asarray(self.distances)
        return bool(np.all(d[1:] <= d[:-1] + slack))
