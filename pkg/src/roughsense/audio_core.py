"""Core audio types: dual-channel buffers, sliding analysis windows, dBFS metering.

Samples are normalized floating point in [-1, 1]; integer PCM is converted at
ingestion so all downstream DSP and dBFS math lives in one numeric domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

# Floor used when a dBFS value must be serialized or displayed. Comparisons
# keep true -inf semantics; only presentation is clamped.
DBFS_DISPLAY_FLOOR = -120.0


def dbfs_to_linear(db: float) -> float:
    """Convert a dBFS value (possibly -inf) to linear amplitude."""
    if db == -math.inf:
        return 0.0
    return 10.0 ** (db / 20.0)


def linear_to_dbfs(amplitude: float) -> float:
    """Convert a linear amplitude to dBFS; zero maps to -inf."""
    if amplitude <= 0.0:
        return -math.inf
    return 20.0 * math.log10(amplitude)


@dataclass
class AudioBuffer:
    """One fixed-length window of the dual-microphone stream.

    Channel 0 is the piezo (contact) microphone, channel 1 the MEMS (airborne)
    microphone. Both channels always have identical length.
    """

    samples_piezo: np.ndarray
    samples_mems: np.ndarray
    sample_rate_hz: int
    frame_index: int = 0

    def __post_init__(self) -> None:
        self.samples_piezo = np.asarray(self.samples_piezo, dtype=np.float64)
        self.samples_mems = np.asarray(self.samples_mems, dtype=np.float64)
        if self.samples_piezo.ndim != 1 or self.samples_mems.ndim != 1:
            raise DataError("audio buffer channels must be 1-D sample arrays")
        if len(self.samples_piezo) != len(self.samples_mems):
            raise DataError(
                f"channel length mismatch: piezo {len(self.samples_piezo)} "
                f"vs mems {len(self.samples_mems)}"
            )
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not (np.isfinite(self.samples_piezo).all() and np.isfinite(self.samples_mems).all()):
            raise DataError(f"non-finite samples in buffer #{self.frame_index}")

    def __len__(self) -> int:
        return len(self.samples_piezo)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass
class AnalysisWindow:
    """256 ms of dual-channel history at the post-decimation analysis rate."""

    samples_piezo: np.ndarray
    samples_mems: np.ndarray
    end_time_s: float
    analysis_rate_hz: int

    def __len__(self) -> int:
        return len(self.samples_piezo)

    @property
    def duration_s(self) -> float:
        return len(self) / self.analysis_rate_hz


@dataclass(frozen=True)
class LoudnessDbfs:
    """RMS loudness in dB relative to full scale.

    `value` may be -inf for digital silence; use `display_value` wherever a
    finite number is required (logs, wire formats).
    """

    value: float
    window_samples: int

    @property
    def display_value(self) -> float:
        return max(self.value, DBFS_DISPLAY_FLOOR)

    def __le__(self, other: float) -> bool:
        return self.value <= other

    def __gt__(self, other: float) -> bool:
        return self.value > other


def rms_dbfs(samples: np.ndarray, *, window_samples: int | None = None) -> LoudnessDbfs:
    """RMS loudness of a sample block: 20*log10(sqrt(mean(x^2))).

    Deterministic and independent of sample order; all-zero input yields -inf.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("rms_dbfs requires a non-empty sample sequence")
    if not np.isfinite(samples).all():
        raise DataError("rms_dbfs requires finite samples")
    rms = math.sqrt(float(np.mean(samples * samples)))
    value = 20.0 * math.log10(rms) if rms > 0.0 else -math.inf
    return LoudnessDbfs(value=value, window_samples=int(window_samples or samples.size))


class ChunkRing:
    """Sliding dual-channel history feeding the classifier, one window per buffer.

    The ring stores post-decimation samples (2 kHz in the reference
    configuration) rather than raw input history: decimation is causal, so the
    retained window is identical to decimating the full stream, at 1/24 of the
    memory. A RateConverter (see dsp_frontend.Decimator) is injected at
    construction; with equal input and analysis rates none is needed.

    Single-writer contract: one producer pushes buffers, one consumer receives
    the returned windows. Returned windows are value copies, safe to hand off.
    """

    def __init__(
        self,
        *,
        buffer_samples: int = 512,
        input_rate_hz: int = 48000,
        analysis_rate_hz: int = 2000,
        window_samples: int = 512,
        decimator=None,
    ) -> None:
        if input_rate_hz != analysis_rate_hz and decimator is None:
            raise ConfigError(
                "a decimator is required when the analysis rate differs from the input rate"
            )
        self.buffer_samples = buffer_samples
        self.input_rate_hz = input_rate_hz
        self.analysis_rate_hz = analysis_rate_hz
        self.window_samples = window_samples
        self._decimator = decimator
        self._piezo = np.zeros(0, dtype=np.float64)
        self._mems = np.zeros(0, dtype=np.float64)
        self._input_samples = 0
        self._warm = False

    @property
    def warm(self) -> bool:
        """True once a full window of history exists (first window emitted)."""
        return self._warm

    def push_buffer(self, buf: AudioBuffer) -> AnalysisWindow | None:
        """Append one input buffer; return an analysis window once warm.

        No window (hence no decision downstream) is produced until a full
        window of history exists; afterwards exactly one window per push.
        """
        if len(buf) != self.buffer_samples:
            raise ConfigError(
                f"buffer length {len(buf)} does not match configured size {self.buffer_samples}"
            )
        if buf.sample_rate_hz != self.input_rate_hz:
            raise ConfigError(
                f"buffer rate {buf.sample_rate_hz} Hz does not match configured "
                f"{self.input_rate_hz} Hz"
            )
        if self._decimator is not None:
            piezo, mems = self._decimator.process(buf.samples_piezo, buf.samples_mems)
        else:
            piezo, mems = buf.samples_piezo, buf.samples_mems
        self._piezo = np.concatenate([self._piezo, piezo])[-self.window_samples:]
        self._mems = np.concatenate([self._mems, mems])[-self.window_samples:]
        self._input_samples += len(buf)
        if len(self._piezo) < self.window_samples:
            return None
        self._warm = True
        return AnalysisWindow(
            samples_piezo=self._piezo.copy(),
            samples_mems=self._mems.copy(),
            end_time_s=self._input_samples / self.input_rate_hz,
            analysis_rate_hz=self.analysis_rate_hz,
        )
