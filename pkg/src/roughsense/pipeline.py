"""Streaming assembly of the full chain plus latency bookkeeping.

Shared by offline simulation and the live receiver so both produce identical
decision timelines for the same buffers and model. The render path never
blocks on classification: every input buffer renders one output block using
whatever targets the last decision set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .audio_core import AudioBuffer, rms_dbfs
from .classifier import ModelParams, check_fingerprint, forward
from .dsp_frontend import DspConfig, DEFAULT_DSP, featurize, make_ring
from .gate_and_synth import (
    Decision,
    GateConfig,
    Oscillator,
    OscillatorConfig,
    gate,
)


@dataclass
class InferenceTiming:
    """Wall-clock cost of featurize+forward per analysis window."""

    times_s: list = field(default_factory=list)

    def record(self, dt: float) -> None:
        self.times_s.append(dt)

    @property
    def mean_ms(self) -> float:
        return 1000.0 * float(np.mean(self.times_s)) if self.times_s else 0.0

    @property
    def max_ms(self) -> float:
        return 1000.0 * float(np.max(self.times_s)) if self.times_s else 0.0


class StreamProcessor:
    """Per-buffer pipeline: meter, window, classify, gate, render."""

    def __init__(
        self,
        params: ModelParams,
        dsp: DspConfig = DEFAULT_DSP,
        gate_cfg: GateConfig | None = None,
        osc_cfg: OscillatorConfig | None = None,
        *,
        modulation: str = "confidence",
    ) -> None:
        check_fingerprint(params, dsp.fingerprint())
        self.params = params
        self.dsp = dsp
        self.gate_cfg = gate_cfg or GateConfig()
        self.modulation = modulation
        self.ring = make_ring(dsp)
        self.osc = Oscillator(osc_cfg or OscillatorConfig(sample_rate_hz=dsp.input_rate_hz))
        self.timing = InferenceTiming()
        self.decisions: list[Decision] = []

    def process_buffer(self, buf: AudioBuffer) -> tuple[Decision | None, np.ndarray]:
        """Returns (decision or None before warm-up, rendered output block)."""
        loudness = rms_dbfs(buf.samples_piezo)
        window = self.ring.push_buffer(buf)
        decision = None
        if window is not None:
            t0 = time.perf_counter()
            features = featurize(window, self.dsp)
            scores = forward(self.params, features.values)
            self.timing.record(time.perf_counter() - t0)
            decision = gate(scores, loudness, self.gate_cfg, time_s=window.end_time_s)
            self.decisions.append(decision)
            self.osc.apply_decision(decision, mode=self.modulation)
        return decision, self.osc.render(len(buf))


@dataclass(frozen=True)
class LatencyReport:
    """Fixed latency accounting for the audio path.

    capture and playback each contribute one buffer of delay; the jitter
    buffer adds exactly depth x buffer-duration when transport is in the loop.
    Inference cost is tracked separately because it must fit inside the buffer
    period rather than add to it.
    """

    buffer_samples: int
    sample_rate_hz: int
    jitter_depth: int = 0
    network_ms: float = 0.0
    inference_mean_ms: float = 0.0
    inference_max_ms: float = 0.0

    @property
    def buffer_ms(self) -> float:
        return 1000.0 * self.buffer_samples / self.sample_rate_hz

    @property
    def capture_ms(self) -> float:
        return self.buffer_ms

    @property
    def playback_ms(self) -> float:
        return self.buffer_ms

    @property
    def jitter_buffer_ms(self) -> float:
        return self.jitter_depth * self.buffer_ms

    @property
    def audio_system_ms(self) -> float:
        """Capture + playback buffering; 21.3 ms in the reference configuration."""
        return self.capture_ms + self.playback_ms

    @property
    def total_ms(self) -> float:
        return self.audio_system_ms + self.jitter_buffer_ms + self.network_ms

    @property
    def inference_headroom(self) -> float:
        """Buffer period / mean inference time; the per-buffer update rate is
        feasible while this stays above 1 (target: >= 5)."""
        return self.buffer_ms / self.inference_mean_ms if self.inference_mean_ms > 0 else float("inf")

    def format_text(self) -> str:
        lines = [
            "latency accounting",
            f"  buffer: {self.buffer_samples} samples @ {self.sample_rate_hz} Hz = {self.buffer_ms:.3f} ms",
            f"  capture buffer      {self.capture_ms:8.3f} ms",
            f"  playback buffer     {self.playback_ms:8.3f} ms",
            f"  jitter buffer       {self.jitter_buffer_ms:8.3f} ms (depth {self.jitter_depth})",
            f"  network             {self.network_ms:8.3f} ms",
            f"  total               {self.total_ms:8.3f} ms",
            f"  audio system only   {self.audio_system_ms:8.3f} ms",
            f"  inference mean/max  {self.inference_mean_ms:.3f} / {self.inference_max_ms:.3f} ms"
            f" (headroom {self.inference_headroom:.1f}x)",
        ]
        return "\n".join(lines) + "\n"


def buffers_from_channels(
    piezo: np.ndarray, mems: np.ndarray, dsp: DspConfig = DEFAULT_DSP
):
    """Slice a dual-channel signal into whole AudioBuffers (tail discarded)."""
    n = (len(piezo) // dsp.buffer_samples) * dsp.buffer_samples
    for index, start in enumerate(range(0, n, dsp.buffer_samples)):
        yield AudioBuffer(
            samples_piezo=piezo[start : start + dsp.buffer_samples],
            samples_mems=mems[start : start + dsp.buffer_samples],
            sample_rate_hz=dsp.input_rate_hz,
            frame_index=index,
        )


DECISION_HEADER = "timestamp_s\tclass\tp_rough\tp_smooth\tp_nonvalid\tpiezo_dbfs"


def format_decision(d: Decision) -> str:
    return (
        f"{d.time_s:.6f}\t{d.klass.value}\t{d.p_rough:.6f}\t{d.p_smooth:.6f}"
        f"\t{d.p_nonvalid:.6f}\t{d.piezo_dbfs:.2f}"
    )


def decisions_to_text(decisions: list[Decision]) -> str:
    return "\n".join([DECISION_HEADER, *(format_decision(d) for d in decisions)]) + "\n"
