import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughsense.audio_core import (
    AudioBuffer,
    ChunkRing,
    DBFS_DISPLAY_FLOOR,
    rms_dbfs,
)
from roughsense.dsp_frontend import Decimator, DspConfig, make_ring
from roughsense.errors import ConfigError, DataError


def make_buffer(samples, rate=48000, index=0, n=512):
    x = np.full(n, samples) if np.isscalar(samples) else samples
    return AudioBuffer(x, x.copy(), rate, index)


class TestRmsDbfs:
    def test_full_scale_sine(self):
        t = np.arange(48000) / 48000
        level = rms_dbfs(np.sin(2 * np.pi * 100 * t))
        assert level.value == pytest.approx(-3.01, abs=0.05)

    def test_constant_full_scale(self):
        assert rms_dbfs(np.ones(1000)).value == pytest.approx(0.0, abs=1e-12)

    def test_zero_signal_is_minus_inf_with_clamped_display(self):
        level = rms_dbfs(np.zeros(100))
        assert level.value == -math.inf
        assert level.display_value == DBFS_DISPLAY_FLOOR
        assert level <= -26.0  # -inf semantics survive comparisons

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            rms_dbfs(np.array([]))

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 0.1, 500)
        assert rms_dbfs(x[::-1]).value == pytest.approx(rms_dbfs(x).value, abs=1e-9)

    @given(st.floats(min_value=1e-6, max_value=1e3))
    def test_scale_covariant(self, g):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 0.1, 256)
        base = rms_dbfs(x).value
        scaled = rms_dbfs(g * x).value
        assert scaled == pytest.approx(base + 20 * math.log10(g), abs=1e-9)


class TestAudioBuffer:
    def test_channel_length_mismatch(self):
        with pytest.raises(DataError):
            AudioBuffer(np.zeros(512), np.zeros(500), 48000)

    def test_non_finite_samples(self):
        bad = np.zeros(512)
        bad[7] = np.nan
        with pytest.raises(DataError):
            AudioBuffer(bad, np.zeros(512), 48000)

    def test_duration(self):
        assert make_buffer(0.0).duration_s == pytest.approx(512 / 48000)


class TestChunkRing:
    def test_warmup_emits_first_window_on_buffer_24(self):
        # 24 x 512 / 48000 = 0.256 s of history
        ring = make_ring()
        rng = np.random.default_rng(0)
        emitted = []
        for i in range(24):
            win = ring.push_buffer(make_buffer(rng.normal(0, 0.1, 512), index=i))
            emitted.append(win is not None)
        assert emitted[:23] == [False] * 23
        assert emitted[23]

    def test_one_window_per_buffer_after_warmup(self):
        ring = make_ring()
        rng = np.random.default_rng(1)
        wins = [ring.push_buffer(make_buffer(rng.normal(0, 0.1, 512), index=i)) for i in range(40)]
        produced = [w for w in wins if w is not None]
        # cadence invariant: windows == pushes - (warmup - 1)
        assert len(produced) == 40 - (24 - 1)

    def test_consecutive_windows_slide_by_one_buffer(self):
        ring = make_ring()
        rng = np.random.default_rng(2)
        wins = [ring.push_buffer(make_buffer(rng.normal(0, 0.1, 512), index=i)) for i in range(25)]
        w1, w2 = wins[23], wins[24]
        assert w2.end_time_s - w1.end_time_s == pytest.approx(512 / 48000)
        # the second window shares all but the newest samples with the first;
        # one buffer is 512/24 = 21.33 analysis samples, so the hop is 21 or 22
        hops = [
            k
            for k in (21, 22)
            if np.array_equal(w1.samples_piezo[k:], w2.samples_piezo[: len(w1) - k])
        ]
        assert len(hops) == 1

    def test_wrong_length_is_config_error(self):
        ring = make_ring()
        with pytest.raises(ConfigError):
            ring.push_buffer(make_buffer(np.zeros(500), n=500))

    def test_wrong_rate_is_config_error(self):
        ring = make_ring()
        with pytest.raises(ConfigError):
            ring.push_buffer(make_buffer(np.zeros(512), rate=44100))

    def test_rate_mismatch_without_decimator_rejected(self):
        with pytest.raises(ConfigError):
            ChunkRing(input_rate_hz=48000, analysis_rate_hz=2000, decimator=None)

    def test_window_contents_match_concatenation_oracle(self):
        # ring contents after N pushes == last 256 ms of the decimated
        # concatenated input, sample-exact
        dsp = DspConfig()
        ring = make_ring(dsp)
        rng = np.random.default_rng(3)
        chunks = [rng.normal(0, 0.2, 512) for _ in range(30)]
        win = None
        for i, c in enumerate(chunks):
            win = ring.push_buffer(AudioBuffer(c, -c, 48000, i)) or win
        oracle = Decimator(dsp)
        full = np.concatenate(chunks)
        dp, dm = oracle.process(full, -full)
        np.testing.assert_array_equal(win.samples_piezo, dp[-512:])
        np.testing.assert_array_equal(win.samples_mems, dm[-512:])
