"""Contact gating of class scores and vibrotactile sine rendering.

The piezo loudness gate dominates classification: at or below threshold the
decision is always no-contact, no matter what the network says. Above it, the
decision is the argmax over rough/smooth only; the non-valid score shaped
training but is never used at inference.

Rendering drives a phase-continuous sine whose frequency and amplitude are
one-pole low-pass smoothed toward class targets, so flickering per-window
classifications never produce waveform artifacts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_core import LoudnessDbfs, dbfs_to_linear
from .classifier import ClassScores, NON_VALID, ROUGH, SMOOTH
from .errors import ConfigError

ROUGH_TARGET_HZ = 60.0
ROUGH_TARGET_DBFS = 0.0
SMOOTH_TARGET_HZ = 120.0
SMOOTH_TARGET_DBFS = -25.0

# Actuator band; every rendered frequency must stay inside it.
ACTUATOR_BAND_HZ = (35.0, 1000.0)


class DecisionClass(str, enum.Enum):
    ROUGH = "rough"
    SMOOTH = "smooth"
    NO_CONTACT = "no_contact"


@dataclass(frozen=True)
class GateConfig:
    """Contact gate: piezo loudness metered over one input buffer."""

    threshold_dbfs: float = -26.0

    def __post_init__(self) -> None:
        if not self.threshold_dbfs < 0:
            raise ConfigError("gate threshold must be below 0 dBFS")


@dataclass(frozen=True)
class Decision:
    """Ternary output with the evidence that produced it."""

    klass: DecisionClass
    p_rough: float
    p_smooth: float
    p_nonvalid: float
    piezo_dbfs: float
    time_s: float


def gate(
    scores: ClassScores,
    piezo_loudness: LoudnessDbfs,
    cfg: GateConfig = GateConfig(),
    *,
    time_s: float = 0.0,
) -> Decision:
    """Apply the contact gate to one window's class scores."""
    probs = scores.probs
    if piezo_loudness.value <= cfg.threshold_dbfs:
        klass = DecisionClass.NO_CONTACT
    else:
        klass = DecisionClass.ROUGH if probs[ROUGH] >= probs[SMOOTH] else DecisionClass.SMOOTH
    return Decision(
        klass=klass,
        p_rough=float(probs[ROUGH]),
        p_smooth=float(probs[SMOOTH]),
        p_nonvalid=float(probs[NON_VALID]),
        piezo_dbfs=piezo_loudness.display_value,
        time_s=time_s,
    )


def decision_to_targets(
    d: Decision, *, mode: str = "confidence"
) -> tuple[float | None, float]:
    """(target frequency in Hz or None to hold, target level in dBFS).

    No-contact holds the previous frequency (a pitch sweep on re-contact would
    be audible) and sends the amplitude to the floor. In "confidence" mode the
    contact targets interpolate between the rough and smooth pairs, weighted
    by the renormalized rough-vs-smooth probability; "hard" snaps to the
    winning class's pair.
    """
    if mode not in ("confidence", "hard"):
        raise ValueError(f"unknown modulation mode {mode!r}")
    if d.klass is DecisionClass.NO_CONTACT:
        return None, -math.inf
    if mode == "hard":
        if d.klass is DecisionClass.ROUGH:
            return ROUGH_TARGET_HZ, ROUGH_TARGET_DBFS
        return SMOOTH_TARGET_HZ, SMOOTH_TARGET_DBFS
    contact = d.p_rough + d.p_smooth
    w = d.p_rough / contact if contact > 0 else 0.5
    freq = w * ROUGH_TARGET_HZ + (1.0 - w) * SMOOTH_TARGET_HZ
    level = w * ROUGH_TARGET_DBFS + (1.0 - w) * SMOOTH_TARGET_DBFS
    return freq, level


@dataclass
class OscillatorConfig:
    """Smoothing time constants chosen to suppress per-window classification
    flicker while staying well inside operator-perceptible delay."""

    sample_rate_hz: int = 48000
    amp_tau_s: float = 0.015
    freq_tau_s: float = 0.030
    initial_freq_hz: float = SMOOTH_TARGET_HZ


class Oscillator:
    """Phase-continuous sine with one-pole smoothed frequency and amplitude.

    Single-owner streaming state on the render path. Targets may change at any
    block boundary; the phase accumulator never resets, and per-sample state
    recursion makes block-wise rendering sample-exact against one-shot
    rendering. Amplitude smoothing runs in the linear domain (dBFS targets
    converted once), which yields exponential-sounding decay with simple
    per-sample math.
    """

    def __init__(self, config: OscillatorConfig | None = None) -> None:
        self.config = config or OscillatorConfig()
        rate = self.config.sample_rate_hz
        self._alpha_amp = 1.0 - math.exp(-1.0 / (self.config.amp_tau_s * rate))
        self._alpha_freq = 1.0 - math.exp(-1.0 / (self.config.freq_tau_s * rate))
        self.phase = 0.0
        self.amp = 0.0
        self.freq_hz = self.config.initial_freq_hz
        self.target_amp = 0.0
        self.target_freq_hz = self.config.initial_freq_hz

    def set_targets(self, freq_hz: float | None, amp_dbfs: float) -> None:
        """Update smoothing targets; freq_hz None holds the current frequency target."""
        if freq_hz is not None:
            lo, hi = ACTUATOR_BAND_HZ
            self.target_freq_hz = min(max(freq_hz, lo), hi)
        self.target_amp = min(max(dbfs_to_linear(amp_dbfs), 0.0), 1.0)

    def apply_decision(self, decision: Decision, *, mode: str = "confidence") -> None:
        self.set_targets(*decision_to_targets(decision, mode=mode))

    def render(self, n_samples: int) -> np.ndarray:
        """Render the next block: out[i] = amp[i] * sin(phase[i])."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        amp = self._smooth(self.amp, self.target_amp, self._alpha_amp, n_samples)
        freq = self._smooth(self.freq_hz, self.target_freq_hz, self._alpha_freq, n_samples)
        self.amp = float(amp[-1])
        self.freq_hz = float(freq[-1])
        steps = (2.0 * math.pi / self.config.sample_rate_hz) * freq
        phases = np.empty(n_samples)
        phase = self.phase
        two_pi = 2.0 * math.pi
        for i in range(n_samples):
            phase += steps[i]
            if phase >= two_pi:
                phase -= two_pi
            phases[i] = phase
        self.phase = phase
        return amp * np.sin(phases)

    @staticmethod
    def _smooth(current: float, target: float, alpha: float, n: int) -> np.ndarray:
        # y[i] = y[i-1] + alpha*(target - y[i-1]); direct-form lfilter carries
        # the recursion per sample, so block splits cannot change the bits.
        x = np.full(n, target)
        y, _ = signal.lfilter([alpha], [1.0, alpha - 1.0], x, zi=[(1.0 - alpha) * current])
        return y


def peak_frequency_hz(samples: np.ndarray, sample_rate_hz: int) -> float:
    """Frequency of the largest FFT magnitude; measurement helper for checks."""
    spectrum = np.abs(np.fft.rfft(samples))
    spectrum[0] = 0.0
    return float(np.argmax(spectrum) * sample_rate_hz / len(samples))


def peak_level_dbfs(samples: np.ndarray) -> float:
    """Sine level convention: 0 dBFS == peak amplitude 1.0."""
    peak = float(np.max(np.abs(samples)))
    return 20.0 * math.log10(peak) if peak > 0 else -math.inf
