import hashlib
import json
import logging

import numpy as np
import pytest
from pytest import raises

from wavestyle import __version__
from wavestyle.cli import RunConfig, RunManifest, main, network_config, parse_args, run
from wavestyle.network import DenseSpec
from wavestyle.spectral import FeatureVariant

from .mock import RATE, write_float32, write_pcm16

FAST = (
    "--n-fft 64 --hop 16 --filters 4 --kernel-time 3 --iterations 5 --lr 0.01 "
    "--gl-iterations 3 --progress-every 2"
).split()


@pytest.fixture
def inputs(tmp_path):
    t = np.arange(1200) / RATE
    content = write_pcm16(tmp_path / "content.wav", 0.5 * np.sin(2 * np.pi * 440 * t))
    style = write_float32(
        tmp_path / "style.wav", np.random.default_rng(0).uniform(-0.3, 0.3, 1000)
    )
    return str(content), str(style)


def argv(inputs, outdir, *extra):
    content, style = inputs
    paths = ["--content", content, "--style", style, "--output-dir", str(outdir)]
    return paths + FAST + list(extra)


def test_parse_preset():
    config = parse_args("--preset rim-k3 --content a.wav --style b.wav".split())
    assert config.preset == "rim-k3"
    assert (config.content, config.style) == ("a.wav", "b.wav")
    assert config.iterations == 1000
    assert config.lr == 1e-3
    assert config.init == "noise"


def test_defaults_resolve_to_rim_network():
    net = network_config(RunConfig(content="a.wav", style="b.wav"))
    assert net.preset == "rim-k3"
    assert net.front_end.n_fft == 2048
    assert net.front_end.hop == 512
    assert net.layers[0].filters == 128


def test_flags_reshape_the_network():
    args = "--content a --style b --layers 2 --filters 6 --layout interleaved"
    config = parse_args(args.split())
    net = network_config(config)
    assert len(net.layers) == 2
    assert net.layers[1].filters == 6
    assert net.front_end.layout == "interleaved"


def test_dense_flag_appends_a_tapped_layer():
    net = network_config(
        parse_args(["--content", "a", "--style", "b", "--layers", "2", "--dense", "5"])
    )
    assert net.layers[-1] == DenseSpec(5)
    assert [(t.point, t.role) for t in net.taps][-2:] == [
        ("layer3", "content"),
        ("layer3", "style"),
    ]


def test_baseline_flag_selects_magnitude_network():
    net = network_config(parse_args(["--content", "a", "--style", "b", "--baseline"]))
    assert net.bins_as_channels
    assert net.front_end.variant is FeatureVariant.MAG_ONLY


@pytest.mark.parametrize(
    "args",
    [
        ["--bogus"],
        ["--content", "a.wav"],
        ["--style", "b.wav"],
        ["--content", "a", "--style", "b", "--init", "zeros"],
        ["--content", "a", "--style", "b", "--preset", "vgg"],
        ["--content", "a", "--style", "b", "--iterations", "many"],
        ["--content", "a", "--style", "b", "--progress-every", "0"],
    ],
)
def test_usage_errors(args):
    with raises(SystemExit) as info:
        parse_args(args)
    assert info.value.code == 2


def test_version(capsys):
    with raises(SystemExit) as info:
        parse_args(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "config.json"
    settings = {"iterations": 200, "n_fft": 512, "content": "a.wav", "style": "b.wav"}
    path.write_text(json.dumps(settings))
    config = parse_args(["--config", str(path), "--iterations", "50"])
    assert config.iterations == 50
    assert config.n_fft == 512
    assert config.content == "a.wav"


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"iterations": 200, "learning_rate": 0.1}))
    with raises(SystemExit) as info:
        parse_args(["--config", str(path), "--content", "a", "--style", "b"])
    assert info.value.code == 2


def test_config_file_not_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("iterations = 200")
    with raises(SystemExit) as info:
        parse_args(["--config", str(path), "--content", "a", "--style", "b"])
    assert info.value.code == 2


def test_unreadable_config(tmp_path, capsys):
    missing = str(tmp_path / "missing.json")
    with raises(OSError):
        parse_args(["--config", missing, "--content", "a", "--style", "b"])
    assert main(["--config", missing, "--content", "a", "--style", "b"]) == 2
    assert "missing.json" in capsys.readouterr().err


def test_manifest_json_roundtrip():
    manifest = RunManifest(
        config={"iterations": 5, "hop": None},
        seeds={"network": 1},
        digests={"content": "ab"},
        timings={"load": 0.5},
        outputs=["out.wav"],
    )
    assert RunManifest.from_json(manifest.to_json()) == manifest
    assert manifest.version == __version__


def test_smoke_run(tmp_path, inputs, caplog):
    caplog.set_level(logging.INFO, logger="wavestyle")
    outdir = tmp_path / "out"
    assert run(parse_args(argv(inputs, outdir))) == 0

    names = sorted(p.name for p in outdir.iterdir())
    assert names == sorted(
        [
            "out.wav",
            "loss.csv",
            "manifest.json",
            "content_spectrogram.csv",
            "content_spectrogram.pgm",
            "style_spectrogram.csv",
            "style_spectrogram.pgm",
            "output_spectrogram.csv",
            "output_spectrogram.pgm",
        ]
    )

    messages = [r.getMessage() for r in caplog.records]
    progress = [m for m in messages if m.startswith("iter=")]
    assert [line.split()[0] for line in progress] == ["iter=0", "iter=2", "iter=4"]
    assert progress[0].split()[1].startswith("total=")

    loss_rows = (outdir / "loss.csv").read_text().strip().split("\n")
    assert len(loss_rows) == 6

    manifest = RunManifest.from_json((outdir / "manifest.json").read_text())
    assert manifest.version == __version__
    assert manifest.config["iterations"] == 5
    assert set(manifest.outputs) == set(names)
    for key, path in zip(("content", "style"), inputs):
        with open(path, "rb") as f:
            assert manifest.digests[key] == hashlib.sha256(f.read()).hexdigest()
    stages = {"load", "network", "stylize", "save", "spectrograms"}
    assert stages <= set(manifest.timings)


def test_output_is_peak_normalized(tmp_path, inputs):
    from wavestyle.audio_io import load_wav

    outdir = tmp_path / "out"
    assert run(parse_args(argv(inputs, outdir, "--peak", "0.5"))) == 0
    samples = load_wav(outdir / "out.wav").samples
    assert np.max(np.abs(samples)) == pytest.approx(0.5, abs=1e-6)


def test_rerun_from_manifest_is_identical(tmp_path, inputs):
    first = tmp_path / "first"
    assert run(parse_args(argv(inputs, first))) == 0
    second = tmp_path / "second"
    config = parse_args(
        ["--config", str(first / "manifest.json"), "--output-dir", str(second)]
    )
    assert run(config) == 0
    assert (first / "out.wav").read_bytes() == (second / "out.wav").read_bytes()


def test_baseline_run(tmp_path, inputs):
    outdir = tmp_path / "out"
    assert run(parse_args(argv(inputs, outdir, "--baseline"))) == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["config"]["baseline"] is True
    assert "baseline" in manifest["timings"]


def test_dense_run(tmp_path, inputs):
    outdir = tmp_path / "out"
    assert run(parse_args(argv(inputs, outdir, "--dense", "6"))) == 0
    manifest = RunManifest.from_json((outdir / "manifest.json").read_text())
    assert manifest.config["dense"] == 6


def test_mismatched_rates_fail_in_audio_io(tmp_path, inputs, caplog):
    caplog.set_level(logging.ERROR, logger="wavestyle")
    other = write_float32(tmp_path / "fast.wav", np.zeros(2000), rate=16000)
    code = run(parse_args(argv((inputs[0], str(other)), tmp_path / "out")))
    assert code == 1
    assert any(r.getMessage().startswith("audio_io:") for r in caplog.records)
    assert not (tmp_path / "out" / "out.wav").exists()


def test_missing_input_fails_in_audio_io(tmp_path, inputs, caplog):
    caplog.set_level(logging.ERROR, logger="wavestyle")
    missing = str(tmp_path / "nope.wav")
    assert run(parse_args(argv((missing, inputs[1]), tmp_path / "out"))) == 1
    assert any(r.getMessage().startswith("audio_io:") for r in caplog.records)


def test_bad_hop_fails_in_network(tmp_path, inputs, caplog):
    caplog.set_level(logging.ERROR, logger="wavestyle")
    assert run(parse_args(argv(inputs, tmp_path / "out", "--hop", "10"))) == 1
    assert any(r.getMessage().startswith("network:") for r in caplog.records)


def test_main_runs(tmp_path, inputs):
    assert main(argv(inputs, tmp_path / "out")) == 0
    assert (tmp_path / "out" / "out.wav").exists()
