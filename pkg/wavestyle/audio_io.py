"""Reading, validating, conditioning and writing mono audio clips.

This is the only module which touches files containing sound. Inputs may be 16 bit
PCM or 32 bit IEEE float WAV files with one or two channels, outputs are always 32
bit float mono.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, ParameterError, ParseError, ValidationError
from .utils import PathLike, atomic_path

__all__ = [
    "AudioClip",
    "load_wav",
    "save_wav",
    "peak_normalize",
    "check_compatible",
]

logger = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3

_SUPPORTED = {(WAVE_FORMAT_PCM, 16), (WAVE_FORMAT_IEEE_FLOAT, 32)}


@dataclass(frozen=True)
class AudioClip:
    """A mono waveform with samples nominally in ``[-1, 1]``.

    The samples are stored as a read-only ``float64`` array.
    """

    samples: np.ndarray = field(repr=False)
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ParameterError(
                "Expected a one dimensional array of samples, not shape %s."
                % (samples.shape,)
            )
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(
                "Sample rate must be a positive integer, not %r." % self.sample_rate
            )
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> "AudioClip":
        """Raise :class:`ValidationError` unless the clip may enter a computation."""
        if not len(self.samples):
            raise ValidationError("Audio clip contains no samples.")
        if not np.all(np.isfinite(self.samples)):
            bad = int(np.count_nonzero(~np.isfinite(self.samples)))
            raise ValidationError("Audio clip contains %d non-finite samples." % bad)
        return self


def check_compatible(content: AudioClip, style: AudioClip) -> None:
    """Content and style must share a sample rate; we never resample."""
    if content.sample_rate != style.sample_rate:
        raise ParameterError(
            "Content and style sample rates differ (%d Hz vs %d Hz)."
            % (content.sample_rate, style.sample_rate)
        )


def _probe(path: PathLike) -> Tuple[int, int, int]:
    """Walk the RIFF chunks and return ``(format_tag, channels, bits)``.

    Only the header is interpreted here; decoding is left to :mod:`scipy.io.wavfile`.
    """
    with open(path, "rb") as f:
        raw = f.read()

    if len(raw) < 12:
        raise ParseError("%s is too short to be a WAV file." % path)
    riff, _, wave = struct.unpack_from("<4sI4s", raw, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise FormatError("%s is not a RIFF/WAVE file." % path)

    fmt = None
    offset = 12
    while offset + 8 <= len(raw):
        chunk_id, size = struct.unpack_from("<4sI", raw, offset)
        body = offset + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(raw):
                raise ParseError("%s has a truncated fmt chunk." % path)
            tag, channels, _, _, block_align, bits = struct.unpack_from(
                "<HHIIHH", raw, body
            )
            fmt = (tag, channels, bits, block_align)
        elif chunk_id == b"data":
            if fmt is None:
                raise ParseError("%s has a data chunk before its fmt chunk." % path)
            tag, channels, bits, block_align = fmt
            if (tag, bits) not in _SUPPORTED:
                raise FormatError(
                    "%s uses format tag %d with %d bits per sample; only 16 bit PCM "
                    "and 32 bit float are supported." % (path, tag, bits)
                )
            if channels not in (1, 2):
                raise FormatError(
                    "%s has %d channels; only mono and stereo are supported."
                    % (path, channels)
                )
            if block_align == 0 or block_align != channels * bits // 8:
                raise ParseError(
                    "%s declares blocks of %d bytes for %d channels of %d bits."
                    % (path, block_align, channels, bits)
                )
            if body + size > len(raw) or size % block_align:
                raise ParseError(
                    "%s declares %d data bytes but holds %d."
                    % (path, size, len(raw) - body)
                )
            return tag, channels, bits
        # chunks are word aligned
        offset = body + size + (size & 1)

    if fmt is None:
        raise ParseError("%s has no fmt chunk." % path)
    raise ParseError("%s has no data chunk." % path)


def load_wav(path: PathLike) -> AudioClip:
    """Read a WAV file as a mono clip.

    Stereo files are downmixed by averaging the channels and 16 bit samples are scaled
    by ``1 / 32768``.

    Raises:
        FormatError: for codecs other than 16 bit PCM or 32 bit float.
        ParseError: for truncated or malformed files.
    """
    tag, channels, bits = _probe(path)
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError, struct.error) as error:
        raise ParseError("Could not decode %s: %s" % (path, error)) from error

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:  # pragma: no cover
        raise FormatError("Unexpected sample type %s in %s." % (data.dtype, path))

    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    logger.debug(
        "Loaded %s: %d samples at %d Hz (format %d, %d bit, %d channels)",
        path,
        len(samples),
        rate,
        tag,
        bits,
        channels,
    )
    return AudioClip(samples, rate)


def save_wav(clip: AudioClip, path: PathLike) -> None:
    """Write ``clip`` as a 32 bit float mono WAV file.

    The file is written under a temporary name and renamed once complete.

    Raises:
        ValidationError: if the clip holds non-finite samples.
        OSError: if the destination cannot be written.
    """
    if not np.all(np.isfinite(clip.samples)):
        raise ValidationError("Refusing to write non-finite samples to %s." % path)
    with atomic_path(path) as tmp:
        wavfile.write(str(tmp), clip.sample_rate, clip.samples.astype("<f4"))
    logger.debug("Wrote %d samples to %s", len(clip), path)


def peak_normalize(clip: AudioClip, target_peak: float = 0.9) -> AudioClip:
    """Scale ``clip`` so its largest absolute sample equals ``target_peak``.

    An all-zero clip is returned unchanged.
    """
    if not 0.0 < target_peak <= 1.0:
        raise ParameterError("Target peak must lie in (0, 1], not %r." % target_peak)
    peak = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
    if peak == 0.0:
        return clip
    return AudioClip(clip.samples * (target_peak / peak), clip.sample_rate)
