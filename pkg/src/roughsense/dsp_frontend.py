"""Feature frontend: anti-alias decimation to the analysis rate and FFT features.

The classifier input is the concatenated real-FFT magnitude of both channels
over one analysis window, piezo bins first. Features are deliberately NOT
normalized: absolute level differences between the channels carry class
information (the MEMS channel is much quieter on smooth surfaces) and must
survive into the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_core import AnalysisWindow, AudioBuffer, ChunkRing


@dataclass(frozen=True)
class DspConfig:
    """Frozen description of the signal path from raw audio to feature vector.

    The FIR is a Kaiser-windowed sinc sized to reach >= 60 dB stopband
    attenuation above the analysis Nyquist (1 kHz) while keeping group delay
    (taps-1)/2 under 6 ms at 48 kHz.
    """

    input_rate_hz: int = 48000
    analysis_rate_hz: int = 2000
    buffer_samples: int = 512
    window_samples: int = 512
    window_fn: str = "rect"  # "rect" | "hann"; ablation switch, rect is the default path
    channel_mode: str = "dual"  # "dual" | "piezo_only" (MEMS half zeroed at train and eval)
    fir_taps: int = 511
    fir_cutoff_hz: float = 800.0
    fir_kaiser_beta: float = 6.2

    def __post_init__(self) -> None:
        if self.input_rate_hz % self.analysis_rate_hz != 0:
            raise ValueError(
                f"input rate {self.input_rate_hz} must be an integer multiple of "
                f"analysis rate {self.analysis_rate_hz}"
            )
        if self.window_fn not in ("rect", "hann"):
            raise ValueError(f"unknown window function {self.window_fn!r}")
        if self.channel_mode not in ("dual", "piezo_only"):
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")

    @property
    def decimation_factor(self) -> int:
        return self.input_rate_hz // self.analysis_rate_hz

    @property
    def bins_per_channel(self) -> int:
        return self.window_samples // 2 + 1

    @property
    def feature_dim(self) -> int:
        return 2 * self.bins_per_channel

    @property
    def buffer_duration_s(self) -> float:
        return self.buffer_samples / self.input_rate_hz

    def fingerprint(self) -> dict:
        """Feature-layout fingerprint stored inside trained models.

        A model refuses to load into a runtime whose fingerprint differs:
        features produced under a different layout are silently incompatible.
        """
        return {
            "input_rate_hz": self.input_rate_hz,
            "analysis_rate_hz": self.analysis_rate_hz,
            "window_samples": self.window_samples,
            "window_fn": self.window_fn,
            "channel_mode": self.channel_mode,
            "channel_order": "piezo,mems",
            "feature_dim": self.feature_dim,
        }


DEFAULT_DSP = DspConfig()


@dataclass
class FeatureVector:
    """Concatenated per-channel FFT magnitudes for one analysis window."""

    values: np.ndarray
    end_time_s: float


class Decimator:
    """Streaming anti-alias low-pass + downsample, one instance per stream.

    Filter state is carried across calls, so block-wise processing is
    sample-exact against whole-signal processing. Block length need not divide
    the decimation factor: an internal phase accumulator emits however many
    output samples are ready each call (21 or 22 per 512-sample buffer at
    48 kHz -> 2 kHz, exact over any 3-buffer span).

    Single-owner streaming state: movable between threads, not shareable.
    """

    def __init__(self, config: DspConfig = DEFAULT_DSP) -> None:
        self.config = config
        self.factor = config.decimation_factor
        self.taps = signal.firwin(
            config.fir_taps,
            config.fir_cutoff_hz,
            window=("kaiser", config.fir_kaiser_beta),
            fs=config.input_rate_hz,
        )
        tail_len = len(self.taps) - 1
        self._tail_piezo = np.zeros(tail_len)
        self._tail_mems = np.zeros(tail_len)
        self._phase = 0  # index of the next output sample within the incoming block

    def _filter(self, block: np.ndarray, tail: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # overlap-save with an explicit delay line: each output sample is one
        # fixed-order dot product over its own input window, so block
        # boundaries cannot change any bit of the result
        extended = np.concatenate([tail, block])
        filtered = np.convolve(extended, self.taps, mode="valid")
        return filtered, extended[len(block):]

    def process(self, piezo: np.ndarray, mems: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Filter and downsample one block per channel; lengths must match."""
        piezo = np.asarray(piezo, dtype=np.float64)
        mems = np.asarray(mems, dtype=np.float64)
        if piezo.shape != mems.shape or piezo.ndim != 1:
            raise ValueError("decimator expects two equal-length 1-D blocks")
        if piezo.size == 0:
            return piezo, mems
        fp, self._tail_piezo = self._filter(piezo, self._tail_piezo)
        fm, self._tail_mems = self._filter(mems, self._tail_mems)
        picks = np.arange(self._phase, len(fp), self.factor)
        self._phase = (self._phase - len(fp)) % self.factor
        return fp[picks], fm[picks]

    def process_buffer(self, buf: AudioBuffer) -> tuple[np.ndarray, np.ndarray]:
        return self.process(buf.samples_piezo, buf.samples_mems)

    def frequency_response(self, worN: int = 16384) -> tuple[np.ndarray, np.ndarray]:
        """(frequencies_hz, complex response) of the anti-alias filter."""
        return signal.freqz(self.taps, worN=worN, fs=self.config.input_rate_hz)


def make_ring(config: DspConfig = DEFAULT_DSP) -> ChunkRing:
    """ChunkRing wired with a fresh streaming decimator for this config."""
    return ChunkRing(
        buffer_samples=config.buffer_samples,
        input_rate_hz=config.input_rate_hz,
        analysis_rate_hz=config.analysis_rate_hz,
        window_samples=config.window_samples,
        decimator=Decimator(config),
    )


def _window_coeffs(config: DspConfig) -> np.ndarray | None:
    if config.window_fn == "hann":
        return np.hanning(config.window_samples)
    return None


def featurize(window: AnalysisWindow, config: DspConfig = DEFAULT_DSP) -> FeatureVector:
    """Real-FFT magnitude of each channel, concatenated piezo-first."""
    if len(window) != config.window_samples:
        raise ValueError(
            f"window length {len(window)} does not match configured {config.window_samples}"
        )
    values = _featurize_pair(
        window.samples_piezo[np.newaxis, :], window.samples_mems[np.newaxis, :], config
    )[0]
    return FeatureVector(values=values, end_time_s=window.end_time_s)


def featurize_windows(
    piezo: np.ndarray, mems: np.ndarray, config: DspConfig = DEFAULT_DSP
) -> np.ndarray:
    """Vectorized featurization of (N, window_samples) per-channel matrices."""
    piezo = np.atleast_2d(np.asarray(piezo, dtype=np.float64))
    mems = np.atleast_2d(np.asarray(mems, dtype=np.float64))
    if piezo.shape != mems.shape or piezo.shape[1] != config.window_samples:
        raise ValueError(
            f"expected matching (N, {config.window_samples}) matrices, "
            f"got {piezo.shape} and {mems.shape}"
        )
    return _featurize_pair(piezo, mems, config)


def _featurize_pair(piezo: np.ndarray, mems: np.ndarray, config: DspConfig) -> np.ndarray:
    coeffs = _window_coeffs(config)
    if coeffs is not None:
        piezo = piezo * coeffs
        mems = mems * coeffs
    mag_p = np.abs(np.fft.rfft(piezo, axis=1))
    mag_m = np.abs(np.fft.rfft(mems, axis=1))
    if config.channel_mode == "piezo_only":
        mag_m = np.zeros_like(mag_m)
    return np.concatenate([mag_p, mag_m], axis=1)
