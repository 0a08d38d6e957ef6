"""Command suite tying the pipeline together.

Every run writes its resolved configuration next to its artifacts
(`<artifact>.run.json`); re-running from the same configuration reproduces
the artifacts byte-identically (the wall-clock timestamp lives in a separate
`created_at` field of the sidecar, never inside an artifact).

Exit codes: 0 success, 2 configuration, 3 data, 4 numeric, 5 network.
"""

from __future__ import annotations

import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import classifier, dataset, evaluation, pipeline, transport
from .classifier import TrainConfig
from .dataset import DatasetManifest, DynamicThreshold, FixedThreshold
from .dsp_frontend import DspConfig
from .errors import (
    ConfigError,
    DataError,
    NetworkError,
    NumericError,
    RoughsenseError,
)
from .gate_and_synth import GateConfig

EXIT_CODES = [
    (ConfigError, 2),
    (ValueError, 2),
    (DataError, 3),
    (NumericError, 4),
    (NetworkError, 5),
]


def _exit_code(exc: Exception) -> int:
    for klass, code in EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _write_run_config(artifact: Path, command: str, config: dict) -> None:
    sidecar = artifact.with_name(artifact.name + ".run.json")
    payload = {
        "command": command,
        "config": config,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _dsp_from_flags(piezo_only: bool, hann: bool) -> DspConfig:
    return DspConfig(
        channel_mode="piezo_only" if piezo_only else "dual",
        window_fn="hann" if hann else "rect",
    )


def _threshold_mode(mode: str, fixed_dbfs: float, dynamic_ratio: float):
    if mode == "fixed":
        return FixedThreshold(dbfs=fixed_dbfs)
    return DynamicThreshold(ratio=dynamic_ratio)


@click.group()
def main() -> None:
    """Audio-based surface roughness sensing and vibrotactile rendering."""


def _run(func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except RoughsenseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


@main.command()
@click.option("--manifest", type=click.Path(path_type=Path), help="Recording manifest.")
@click.option("--synthetic", is_flag=True, help="Train on the synthetic dataset instead.")
@click.option("--chunks-per-class", default=2000, show_default=True)
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--batch-size", default=6000, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--noise-sigma", default=None, type=float, help="Default: 0.01 x mean feature RMS.")
@click.option(
    "--noise-domain", type=click.Choice(["feature", "sample"]), default="feature",
    show_default=True,
)
@click.option("--seed", default=0, show_default=True)
@click.option(
    "--threshold-mode", type=click.Choice(["fixed", "dynamic"]), default="fixed",
    show_default=True,
)
@click.option("--threshold-dbfs", default=-26.0, show_default=True)
@click.option("--dynamic-ratio", default=0.5, show_default=True)
@click.option("--hop-s", default=0.128, show_default=True)
@click.option("--codec", default="none", show_default=True, help="Condition training audio.")
@click.option("--piezo-only", is_flag=True, help="Zero MEMS features at train and eval.")
@click.option("--hann", is_flag=True, help="Hann analysis window (ablation).")
@click.option("--eval-after", is_flag=True, help="Evaluate on the test split after training.")
def train(**opts) -> None:
    """Extract labeled chunks and train the classifier."""
    _run(_cmd_train, **opts)


def _cmd_train(
    manifest, synthetic, chunks_per_class, model_path, epochs, batch_size, lr,
    noise_sigma, noise_domain, seed, threshold_mode, threshold_dbfs, dynamic_ratio,
    hop_s, codec, piezo_only, hann, eval_after,
) -> None:
    if synthetic == (manifest is not None):
        raise ConfigError("exactly one of --manifest or --synthetic is required")
    dsp = _dsp_from_flags(piezo_only, hann)
    codec_obj = None if codec == "none" else transport.get_codec(codec)
    test_chunks = None
    if synthetic:
        chunks = dataset.synth_dataset(seed, chunks_per_class, dsp)
        if eval_after:
            test_chunks = dataset.synth_dataset(seed + 1, max(1, chunks_per_class // 4), dsp)
    else:
        mf = DatasetManifest.load(manifest)
        if eval_after and not mf.split("test").entries:
            raise ConfigError("--eval-after requires a non-empty test split in the manifest")
        recordings, errors = dataset.ingest(mf.split("train"))
        for err in errors:
            click.echo(f"ingest error: {err.path}: {err.reason}", err=True)
        if not recordings:
            raise DataError("no usable training recordings")
        mode = _threshold_mode(threshold_mode, threshold_dbfs, dynamic_ratio)
        chunks = dataset.chunk_and_label(recordings, mode, dsp, hop_s=hop_s, codec=codec_obj)
        if eval_after:
            test_recs, test_errors = dataset.ingest(mf.split("test"))
            for err in test_errors:
                click.echo(f"ingest error: {err.path}: {err.reason}", err=True)
            test_chunks = dataset.chunk_and_label(
                test_recs, mode, dsp, hop_s=hop_s, codec=codec_obj
            )

    counts = chunks.class_counts()
    click.echo(f"chunks: {counts} (threshold {chunks.threshold.describe()})")
    config = TrainConfig(
        epochs=epochs, batch_size=batch_size, learning_rate=lr,
        noise_sigma=noise_sigma, noise_domain=noise_domain, seed=seed,
    )
    params = classifier.train(config, chunks, dsp)
    classifier.save_model(params, model_path)
    curve_path = model_path.with_name(model_path.name + ".losscurve.txt")
    curve_lines = ["epoch\tmean_nll"] + [
        f"{i + 1}\t{v:.6f}" for i, v in enumerate(params.metadata["loss_curve"])
    ]
    curve_path.write_text("\n".join(curve_lines) + "\n")
    _write_run_config(
        model_path,
        "train",
        {
            "manifest": str(manifest) if manifest else None,
            "synthetic": synthetic,
            "chunks_per_class": chunks_per_class,
            "epochs": epochs,
            "batch_size": batch_size,
            "lr": lr,
            "noise_sigma": params.metadata["noise_sigma"],
            "noise_domain": noise_domain,
            "seed": seed,
            "threshold": chunks.threshold.describe(),
            "codec": codec,
            "dsp": dsp.fingerprint(),
        },
    )
    click.echo(f"model written to {model_path}")
    click.echo("loss curve: " + ", ".join(f"{v:.4f}" for v in params.metadata["loss_curve"]))
    if eval_after and test_chunks is not None:
        report = evaluation.evaluate(params, test_chunks, dsp)
        click.echo(report.format_text())


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", type=click.Path(path_type=Path))
@click.option("--synthetic", is_flag=True, help="Evaluate on a synthetic test set.")
@click.option("--chunks-per-class", default=500, show_default=True)
@click.option("--seed", default=1, show_default=True, help="Synthetic test-set seed.")
@click.option("--split", default="test", show_default=True)
@click.option(
    "--threshold-mode", type=click.Choice(["model", "fixed", "dynamic"]), default="model",
    show_default=True, help="'model' reuses the threshold recorded at training time.",
)
@click.option("--threshold-dbfs", default=-26.0, show_default=True)
@click.option("--dynamic-ratio", default=0.5, show_default=True)
@click.option("--hop-s", default=0.128, show_default=True)
@click.option("--codec", default="none", show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path))
@click.option("--json", "json_path", type=click.Path(path_type=Path))
def eval_cmd(**opts) -> None:
    """Confusion matrix and per-class accuracies for a trained model."""
    _run(_cmd_eval, **opts)


def _cmd_eval(
    model_path, manifest, synthetic, chunks_per_class, seed, split,
    threshold_mode, threshold_dbfs, dynamic_ratio, hop_s, codec, report_path, json_path,
) -> None:
    if synthetic == (manifest is not None):
        raise ConfigError("exactly one of --manifest or --synthetic is required")
    params = classifier.load_model(model_path)
    fp = params.fingerprint
    dsp = DspConfig(
        input_rate_hz=fp["input_rate_hz"],
        analysis_rate_hz=fp["analysis_rate_hz"],
        window_samples=fp["window_samples"],
        window_fn=fp["window_fn"],
        channel_mode=fp["channel_mode"],
    )
    classifier.check_fingerprint(params, dsp.fingerprint())
    if synthetic:
        chunks = dataset.synth_dataset(seed, chunks_per_class, dsp)
    else:
        mf = DatasetManifest.load(manifest).split(split)
        if not mf.entries:
            raise ConfigError(f"manifest has no entries in split {split!r}")
        recordings, errors = dataset.ingest(mf)
        for err in errors:
            click.echo(f"ingest error: {err.path}: {err.reason}", err=True)
        if not recordings:
            raise DataError("no usable evaluation recordings")
        if threshold_mode == "model":
            recorded = params.metadata.get("threshold", {})
            if recorded.get("mode") == "dynamic":
                mode = DynamicThreshold(ratio=recorded.get("ratio") or dynamic_ratio)
            else:
                values = list(recorded.get("dbfs_by_label", {}).values())
                mode = FixedThreshold(dbfs=values[0] if values else threshold_dbfs)
        else:
            mode = _threshold_mode(threshold_mode, threshold_dbfs, dynamic_ratio)
        codec_obj = None if codec == "none" else transport.get_codec(codec)
        chunks = dataset.chunk_and_label(recordings, mode, dsp, hop_s=hop_s, codec=codec_obj)
    report = evaluation.evaluate(params, chunks, dsp)
    text = report.format_text()
    click.echo(text, nl=False)
    if report_path:
        Path(report_path).write_text(text)
        _write_run_config(
            Path(report_path),
            "eval",
            {"model": str(model_path), "manifest": str(manifest) if manifest else None,
             "synthetic": synthetic, "split": split, "threshold_mode": threshold_mode},
        )
    if json_path:
        Path(json_path).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")


@main.command()
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--decisions", "decisions_path", type=click.Path(path_type=Path), required=True)
@click.option("--osc-wav", "osc_path", type=click.Path(path_type=Path), required=True)
@click.option("--latency-report", "latency_path", type=click.Path(path_type=Path))
@click.option("--threshold-dbfs", default=-26.0, show_default=True)
@click.option(
    "--modulation", type=click.Choice(["confidence", "hard"]), default="confidence",
    show_default=True,
)
@click.option("--loss-rate", default=0.0, show_default=True)
@click.option("--reorder-prob", default=0.0, show_default=True)
@click.option("--jitter-ms", default=0.0, show_default=True)
@click.option("--impair-seed", default=0, show_default=True)
@click.option("--codec", default="passthrough", show_default=True)
def simulate(**opts) -> None:
    """Run the full chain offline: decisions, oscillator WAV, latency report."""
    _run(_cmd_simulate, **opts)


def _cmd_simulate(
    input_path, model_path, decisions_path, osc_path, latency_path, threshold_dbfs,
    modulation, loss_rate, reorder_prob, jitter_ms, impair_seed, codec,
) -> None:
    params = classifier.load_model(model_path)
    fp = params.fingerprint
    dsp = DspConfig(
        input_rate_hz=fp["input_rate_hz"],
        analysis_rate_hz=fp["analysis_rate_hz"],
        window_samples=fp["window_samples"],
        window_fn=fp["window_fn"],
        channel_mode=fp["channel_mode"],
    )
    rate, data = dataset.read_wav(input_path)
    if data.shape[1] != 2:
        raise DataError(f"{input_path}: expected 2 channels, found {data.shape[1]}")
    if rate != dsp.input_rate_hz:
        raise ConfigError(
            f"{input_path}: rate {rate} does not match configured {dsp.input_rate_hz}"
        )
    buffers = list(pipeline.buffers_from_channels(data[:, 0], data[:, 1], dsp))

    impaired = loss_rate > 0 or reorder_prob > 0 or jitter_ms > 0
    jitter_depth = 0
    if impaired:
        codec_obj = transport.get_codec(codec)
        packets = [transport.encode_frame(b, codec_obj, b.frame_index) for b in buffers]
        packets = transport.impair(
            packets,
            loss_rate=loss_rate,
            reorder_prob=reorder_prob,
            jitter_ms=jitter_ms,
            seed=impair_seed,
            buffer_duration_ms=1000.0 * dsp.buffer_duration_s,
        )
        jb = transport.JitterBuffer(
            buffer_samples=dsp.buffer_samples, sample_rate_hz=dsp.input_rate_hz
        )
        buffers = [b for pkt in packets for b in jb.receive(pkt)]
        buffers.extend(jb.flush())
        jitter_depth = jb.depth
        click.echo(f"transport stats: {jb.stats.as_line()}")

    proc = pipeline.StreamProcessor(
        params, dsp, GateConfig(threshold_dbfs=threshold_dbfs), modulation=modulation
    )
    rendered = [proc.process_buffer(buf)[1] for buf in buffers]
    decisions_text = pipeline.decisions_to_text(proc.decisions)
    Path(decisions_path).write_text(decisions_text)
    waveform = np.concatenate(rendered) if rendered else np.zeros(0)
    dataset.write_wav(osc_path, dsp.input_rate_hz, waveform.astype(np.float32))
    report = pipeline.LatencyReport(
        buffer_samples=dsp.buffer_samples,
        sample_rate_hz=dsp.input_rate_hz,
        jitter_depth=jitter_depth,
        inference_mean_ms=proc.timing.mean_ms,
        inference_max_ms=proc.timing.max_ms,
    )
    if latency_path:
        Path(latency_path).write_text(report.format_text())
    _write_run_config(
        Path(decisions_path),
        "simulate",
        {
            "input": str(input_path), "model": str(model_path),
            "threshold_dbfs": threshold_dbfs, "modulation": modulation,
            "loss_rate": loss_rate, "reorder_prob": reorder_prob,
            "jitter_ms": jitter_ms, "impair_seed": impair_seed, "codec": codec,
        },
    )
    click.echo(
        f"{len(proc.decisions)} decisions from {len(buffers)} buffers; "
        f"audio-system latency {report.audio_system_ms:.1f} ms; "
        f"inference mean {report.inference_mean_ms:.2f} ms"
    )


@main.command()
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=47100, show_default=True)
@click.option("--codec", default="passthrough", show_default=True)
@click.option(
    "--pace", default=1.0, show_default=True,
    help="Real-time multiple for pacing; 0 sends flat out.",
)
def send(**opts) -> None:
    """Stream a 2-channel WAV to a receiver over UDP."""
    _run(_cmd_send, **opts)


def _cmd_send(input_path, host, port, codec, pace) -> None:
    rate, data = dataset.read_wav(input_path)
    if data.shape[1] != 2:
        raise DataError(f"{input_path}: expected 2 channels, found {data.shape[1]}")
    dsp = DspConfig(input_rate_hz=rate)
    sender = transport.UdpSender(host, port, transport.get_codec(codec))
    try:
        count = sender.send_stream(
            pipeline.buffers_from_channels(data[:, 0], data[:, 1], dsp), pace=pace
        )
    finally:
        sender.close()
    click.echo(f"sent {count} buffers to {host}:{port}")


@main.command()
@click.option("--port", default=47100, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--decisions", "decisions_path", type=click.Path(path_type=Path))
@click.option("--osc-wav", "osc_path", type=click.Path(path_type=Path))
@click.option("--threshold-dbfs", default=-26.0, show_default=True)
@click.option(
    "--modulation", type=click.Choice(["confidence", "hard"]), default="confidence",
    show_default=True,
)
@click.option("--idle-timeout-s", default=2.0, show_default=True)
@click.option("--stats-every-s", default=1.0, show_default=True)
def receive(**opts) -> None:
    """Receive the microphone stream, classify per buffer, render feedback."""
    _run(_cmd_receive, **opts)


def _cmd_receive(
    port, host, model_path, decisions_path, osc_path, threshold_dbfs, modulation,
    idle_timeout_s, stats_every_s,
) -> None:
    params = classifier.load_model(model_path)
    fp = params.fingerprint
    dsp = DspConfig(
        input_rate_hz=fp["input_rate_hz"],
        analysis_rate_hz=fp["analysis_rate_hz"],
        window_samples=fp["window_samples"],
        window_fn=fp["window_fn"],
        channel_mode=fp["channel_mode"],
    )
    receiver = transport.UdpReceiver(
        host, port, buffer_samples=dsp.buffer_samples, sample_rate_hz=dsp.input_rate_hz
    )
    proc = pipeline.StreamProcessor(
        params, dsp, GateConfig(threshold_dbfs=threshold_dbfs), modulation=modulation
    )
    rendered: list[np.ndarray] = []
    n_buffers = 0
    last_stats = time.monotonic()
    click.echo(f"listening on {host}:{receiver.port}")
    try:
        for buf in receiver.receive(timeout_s=idle_timeout_s):
            _, block = proc.process_buffer(buf)
            if osc_path:
                rendered.append(block)
            n_buffers += 1
            now = time.monotonic()
            if now - last_stats >= stats_every_s:
                click.echo(
                    f"buffers={n_buffers} decisions={len(proc.decisions)} "
                    f"{receiver.stats.as_line()} "
                    f"inference_mean_ms={proc.timing.mean_ms:.2f}"
                )
                last_stats = now
    finally:
        receiver.close()
    if decisions_path:
        Path(decisions_path).write_text(pipeline.decisions_to_text(proc.decisions))
    if osc_path and rendered:
        dataset.write_wav(osc_path, dsp.input_rate_hz, np.concatenate(rendered).astype(np.float32))
    report = pipeline.LatencyReport(
        buffer_samples=dsp.buffer_samples,
        sample_rate_hz=dsp.input_rate_hz,
        jitter_depth=receiver.jitter.depth,
        inference_mean_ms=proc.timing.mean_ms,
        inference_max_ms=proc.timing.max_ms,
    )
    click.echo(f"buffers={n_buffers} decisions={len(proc.decisions)} {receiver.stats.as_line()}")
    click.echo(report.format_text(), nl=False)


@main.command("synth-data")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--files-per-class", default=2, show_default=True)
@click.option("--duration-s", default=4.0, show_default=True)
@click.option("--test-files-per-class", default=1, show_default=True)
def synth_data(**opts) -> None:
    """Write synthetic WAV recordings plus a manifest (demo / test fixture)."""
    _run(_cmd_synth_data, **opts)


def _cmd_synth_data(out_dir, seed, files_per_class, duration_s, test_files_per_class) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dsp = DspConfig()
    rng = np.random.default_rng(seed)
    entries = []
    for label, kind in (("rough", "rough"), ("smooth", "smooth")):
        for split, count in (("train", files_per_class), ("test", test_files_per_class)):
            for i in range(count):
                piezo, mems = dataset.synth_contact_wave(kind, duration_s, rng, dsp)
                # silent lead-in/out so sub-threshold chunks exist in every file
                pad = int(0.5 * dsp.input_rate_hz)
                piezo = np.concatenate([np.zeros(pad), piezo, np.zeros(pad)])
                mems = np.concatenate([np.zeros(pad), mems, np.zeros(pad)])
                name = f"{label}_{split}_{i}.wav"
                dataset.write_wav(
                    out_dir / name, dsp.input_rate_hz, np.stack([piezo, mems], axis=1)
                )
                entries.append(f"{name}\t{label}-object-{i}\t{label}\ttable\t{split}")
    manifest_path = out_dir / "manifest.tsv"
    manifest_lines = [
        dataset.MANIFEST_HEADER,
        f"sample_rate_hz={dsp.input_rate_hz}",
        "channel_order=piezo,mems",
        *entries,
    ]
    manifest_path.write_text("\n".join(manifest_lines) + "\n")
    _write_run_config(
        manifest_path,
        "synth-data",
        {"seed": seed, "files_per_class": files_per_class, "duration_s": duration_s,
         "test_files_per_class": test_files_per_class},
    )
    click.echo(f"wrote {len(entries)} recordings and {manifest_path}")


@main.command()
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--output", "output_path", type=click.Path(path_type=Path), required=True)
@click.option("--piezo-channel", default=0, show_default=True)
@click.option("--mems-channel", default=1, show_default=True)
@click.option("--gain-db", default=0.0, show_default=True)
def convert(**opts) -> None:
    """Remap channels of a recording into the piezo,mems on-disk layout."""
    _run(_cmd_convert, **opts)


def _cmd_convert(input_path, output_path, piezo_channel, mems_channel, gain_db) -> None:
    rate, data = dataset.read_wav(input_path)
    n_ch = data.shape[1]
    if piezo_channel >= n_ch or mems_channel >= n_ch:
        raise ConfigError(
            f"{input_path}: has {n_ch} channels; cannot map piezo={piezo_channel} "
            f"mems={mems_channel}"
        )
    gain = 10 ** (gain_db / 20.0)
    out = np.stack([data[:, piezo_channel], data[:, mems_channel]], axis=1) * gain
    dataset.write_wav(output_path, rate, out.astype(np.float32))
    click.echo(f"wrote {output_path}")


if __name__ == "__main__":
    main()
