import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

PathLike = Union[str, "os.PathLike[str]"]


class Sentinel:
    __slots__ = "_name"

    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name  # pragma: no cover


Undefined = Sentinel("Undefined")


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """Yield a temporary sibling of ``path`` which replaces it on success.

    Nothing is left behind if the body raises, so readers never observe a partially
    written artifact.
    """
    target = Path(path)
    fd, tmp = tempfile.mkstemp(
        prefix="." + target.name + ".", suffix=".part", dir=str(target.parent)
    )
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.remove(tmp)
        except OSError:  # pragma: no cover
            pass
        raise
