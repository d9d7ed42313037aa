"""Command line entry point: ``wavestyle --content a.wav --style b.wav``.

Settings are resolved as flag > JSON config file > default. A config file holds flat
keys named like the flags (``--n-fft`` becomes ``n_fft``); the ``manifest.json`` of a
previous run is accepted too, which reproduces that run.

Exit codes are 0 on success, 1 when a stage fails and 2 for usage errors.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

from . import __version__
from .audio_io import AudioClip, check_compatible, load_wav, peak_normalize, save_wav
from .base import view
from .baseline import GriffinLimConfig, ulyanov_stylize
from .errors import NumericalError, ParameterError, StageError
from .models import LossReport
from .network import PRESETS, NetworkConfig, load_preset
from .spectral import LAYOUTS, dft_forward, export_spectrogram, frame_signal
from .stylizer import INITS, StyleTransferConfig, stylize
from .utils import Undefined, atomic_path

__all__ = ["RunConfig", "RunManifest", "parse_args", "network_config", "run", "main"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    content: str
    style: str
    output_dir: str = "wavestyle-out"
    preset: str = "rim-k3"
    baseline: bool = False
    n_fft: int = 2048
    hop: Optional[int] = None
    epsilon: float = 1e-10
    layout: str = "block"
    log_magnitude: bool = False
    filters: Optional[int] = None
    kernel_time: Optional[int] = None
    layers: Optional[int] = None
    dense: Optional[int] = None
    content_weight: float = 1.0
    style_weight: float = 1e-2
    iterations: int = 1000
    lr: float = 1e-3
    init: str = "noise"
    seed: int = 0
    gl_iterations: int = 100
    gl_init: str = "zero"
    peak: float = 0.9
    progress_every: int = 50
    verbose: bool = False

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ParameterError("Unknown preset %r." % self.preset)
        if self.progress_every < 1:
            raise ParameterError("progress_every must be >= 1.")

    @property
    def uses_baseline(self) -> bool:
        return self.baseline or self.preset == "baseline-ulyanov"

    def transfer(self) -> StyleTransferConfig:
        return StyleTransferConfig(
            content_weight=self.content_weight,
            style_weight=self.style_weight,
            iterations=self.iterations,
            learning_rate=self.lr,
            init=self.init,
            seed=self.seed,
        )

    def griffin_lim(self) -> GriffinLimConfig:
        return GriffinLimConfig(
            iterations=self.gl_iterations, init_phase=self.gl_init, seed=self.seed
        )


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit a run."""

    config: Dict[str, Any]
    seeds: Dict[str, int]
    digests: Dict[str, str]
    version: str = __version__
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavestyle",
        description="Audio style transfer by optimizing a waveform directly.",
        argument_default=Undefined,
    )
    add = parser.add_argument
    add("--content", help="WAV file providing the content.")
    add("--style", help="WAV file providing the style.")
    add("--output-dir", help="Directory receiving out.wav, spectrograms and reports.")
    add("--config", help="JSON file of settings (flags override it).")
    add("--preset", choices=PRESETS, help="Network architecture.")
    add("--baseline", action="store_true", help="Run the magnitude + Griffin-Lim path.")
    add("--n-fft", type=int, help="Frame length in samples.")
    add("--hop", type=int, help="Hop size; n_fft/2 or n_fft/4.")
    add("--epsilon", type=float, help="Magnitude smoothing constant.")
    add("--layout", choices=LAYOUTS, help="Feature layout in height.")
    add("--log-magnitude", action="store_true", help="Log-compress magnitude features.")
    add("--filters", type=int, help="Filters per conv layer.")
    add("--kernel-time", type=int, help="Time width of the conv kernels.")
    add("--layers", type=int, help="Number of conv layers.")
    add("--dense", type=int, help="Append a random dense layer of this many units.")
    add("--content-weight", type=float, help="Weight of the content loss.")
    add("--style-weight", type=float, help="Weight of the style loss.")
    add("--iterations", type=int, help="Adam iterations.")
    add("--lr", type=float, help="Adam learning rate.")
    add("--init", choices=INITS, help="Start from noise or from the content.")
    add("--seed", type=int, help="Seed for filters, noise and random phases.")
    add("--gl-iterations", type=int, help="Griffin-Lim iterations.")
    add("--gl-init", choices=("zero", "random"), help="Griffin-Lim starting phase.")
    add("--peak", type=float, help="Peak level of the written output.")
    add("--progress-every", type=int, help="Report progress every N iterations.")
    add("--verbose", action="store_true", help="Log debug detail.")
    add("--version", action="version", version="%(prog)s " + __version__)
    return parser


def _read_config(path: str, parser: argparse.ArgumentParser) -> Dict[str, Any]:
    with open(path) as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        parser.error("config file %s is not valid JSON: %s" % (path, error))
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        parser.error("config file %s must hold a JSON object" % path)
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        parser.error("unknown keys in %s: %s" % (path, ", ".join(unknown)))
    return data


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Resolve a :class:`RunConfig` from command line arguments.

    Raises:
        SystemExit: with code 2 for usage errors.
        OSError: if the config file cannot be read.
    """
    parser = _parser()
    args = parser.parse_args(argv)
    given = {k: v for k, v in vars(args).items() if v is not Undefined}

    values: Dict[str, Any] = {}
    config_path = given.pop("config", None)
    if config_path is not None:
        values.update(_read_config(config_path, parser))
    values.update(given)

    missing = [name for name in ("content", "style") if not values.get(name)]
    if missing:
        parser.error(
            "the following arguments are required: %s"
            % ", ".join("--" + m for m in missing)
        )
    try:
        return RunConfig(**values)
    except (ParameterError, TypeError) as error:
        parser.error(str(error))
        raise  # pragma: no cover


def network_config(config: RunConfig) -> NetworkConfig:
    net = load_preset("baseline-ulyanov" if config.uses_baseline else config.preset)
    front_end = replace(
        net.front_end,
        n_fft=config.n_fft,
        hop=config.hop,
        epsilon=config.epsilon,
        layout=config.layout,
        log_magnitude=config.log_magnitude,
    )
    net = replace(net, front_end=front_end, seed=config.seed)
    net = net.resized(
        filters=config.filters, time_width=config.kernel_time, depth=config.layers
    )
    return net if config.dense is None else net.with_dense(config.dense)


@contextmanager
def _stage(name: str, timings: Dict[str, float], key: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield None
    except Exception as error:
        raise StageError(name, error) from error
    finally:
        timings[key] = timings.get(key, 0.0) + time.perf_counter() - start
    logger.debug("%s finished in %.3fs", key, timings[key])


def _digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            sha.update(block)
    return sha.hexdigest()


def _progress(every: int, last: int):
    def printer(report: LossReport, events):
        for e in events:
            k = e["iteration"]
            if k % every == 0 or k == last:
                logger.info(
                    "iter=%d total=%.9g content=%.9g style=%.9g",
                    k,
                    e["total"],
                    e["content"],
                    e["style"],
                )

    return printer


def _spectrograms(
    clips: Dict[str, AudioClip], net: NetworkConfig, outdir: Path
) -> List[str]:
    written = []
    for name, clip in clips.items():
        spectra = dft_forward(frame_signal(clip, net.front_end))
        for path in export_spectrogram(spectra, outdir / ("%s_spectrogram.csv" % name)):
            written.append(path.name)
    return written


def run(config: RunConfig) -> int:
    """Execute a run described by ``config`` and write its artifacts.

    Returns the process exit code.
    """
    outdir = Path(config.output_dir)
    timings: Dict[str, float] = {}
    report = LossReport()
    view(report, _progress(config.progress_every, config.iterations - 1))

    try:
        with _stage("cli", timings, "setup"):
            outdir.mkdir(parents=True, exist_ok=True)

        with _stage("audio_io", timings, "load"):
            content = load_wav(config.content)
            style = load_wav(config.style)
            check_compatible(content, style)
            digests = {
                "content": _digest(config.content),
                "style": _digest(config.style),
            }

        with _stage("network", timings, "network"):
            net = network_config(config)

        if config.uses_baseline:
            with _stage("baseline", timings, "baseline"):
                clip, _ = ulyanov_stylize(
                    content,
                    style,
                    config.transfer(),
                    net.front_end,
                    config.griffin_lim(),
                    net=net,
                    report=report,
                )
        else:
            with _stage("stylizer", timings, "stylize"):
                clip, _ = stylize(content, style, net, config.transfer(), report=report)

        outputs = ["out.wav"]
        with _stage("audio_io", timings, "save"):
            clip = peak_normalize(clip, config.peak)
            save_wav(clip, outdir / "out.wav")

        with _stage("spectral", timings, "spectrograms"):
            outputs += _spectrograms(
                {"content": content, "style": style, "output": clip}, net, outdir
            )

        with _stage("cli", timings, "report"):
            report.to_csv(outdir / "loss.csv")
            outputs += ["loss.csv", "manifest.json"]
            manifest = RunManifest(
                config=asdict(config),
                seeds={
                    "network": config.seed,
                    "init": config.seed,
                    "griffin_lim": config.seed,
                },
                digests=digests,
                timings=timings,
                outputs=outputs,
            )
            with atomic_path(outdir / "manifest.json") as tmp:
                tmp.write_text(manifest.to_json())
    except StageError as error:
        if isinstance(error.error, NumericalError) and len(report):
            report.to_csv(outdir / "loss.csv")
        logger.error("%s", error)
        return 1

    logger.info("Wrote %s to %s", ", ".join(outputs), outdir)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_args(argv)
    except OSError as error:
        print("wavestyle: cannot read config: %s" % error, file=sys.stderr)
        return 2
    logging.basicConfig(
        stream=sys.stderr,
        format="%(message)s",
        level=logging.DEBUG if config.verbose else logging.INFO,
    )
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
