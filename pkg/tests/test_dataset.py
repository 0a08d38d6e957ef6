import math

import numpy as np
import pytest
from roughsense.audio_core import rms_dbfs
from roughsense.classifier import NON_VALID, ROUGH, SMOOTH
from roughsense.dataset import (
    DatasetManifest,
    DynamicThreshold,
    FixedThreshold,
    band_energy_oracle,
    chunk_and_label,
    ingest,
    read_wav,
    synth_dataset,
    write_wav,
)
from roughsense.dsp_frontend import DspConfig
from roughsense.errors import ConfigError
from roughsense.transport import Lossy8Codec, PassthroughCodec

DSP = DspConfig()


def tone(duration_s, freq_hz, amp, rate=48000):
    t = np.arange(int(duration_s * rate)) / rate
    return amp * np.sin(2 * np.pi * freq_hz * t)


def write_recording(path, piezo, mems, rate=48000):
    write_wav(path, rate, np.stack([piezo, mems], axis=1))


def manifest_text(rows):
    lines = ["roughness-manifest v1", "sample_rate_hz=48000", "channel_order=piezo,mems"]
    lines += ["\t".join(r) for r in rows]
    return "\n".join(lines) + "\n"


@pytest.fixture()
def three_recordings(tmp_path):
    rng = np.random.default_rng(0)
    names = []
    for i, (label, amp) in enumerate((("rough", 0.3), ("rough", 0.2), ("smooth", 0.15))):
        name = f"rec{i}.wav"
        sig = rng.normal(0, amp, 48000)
        write_recording(tmp_path / name, sig, sig * 0.5)
        names.append((name, label))
    rows = [(n, f"obj{i}", lb, "table", "train") for i, (n, lb) in enumerate(names)]
    return tmp_path, rows


class TestManifest:
    def test_parse_and_dump_round_trip(self, three_recordings):
        tmp_path, rows = three_recordings
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        assert len(mf.entries) == 3
        assert mf.sample_rate_hz == 48000
        again = DatasetManifest.parse(mf.dump(), tmp_path)
        assert again.entries == mf.entries

    def test_missing_header_rejected(self):
        with pytest.raises(ConfigError):
            DatasetManifest.parse("a.wav\tobj\trough\ttable\ttrain\n")

    def test_bad_label_rejected(self):
        with pytest.raises(ConfigError, match="label"):
            DatasetManifest.parse(manifest_text([("a.wav", "o", "bumpy", "table", "train")]))

    def test_split_filter(self, three_recordings):
        tmp_path, rows = three_recordings
        rows = rows[:2] + [(rows[2][0], "obj2", "smooth", "table", "test")]
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        assert len(mf.split("train").entries) == 2
        assert len(mf.split("test").entries) == 1


class TestIngest:
    def test_valid_plus_missing_file(self, three_recordings):
        tmp_path, rows = three_recordings
        rows = rows + [("missing.wav", "ghost", "rough", "table", "train")]
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        recs, errors = ingest(mf)
        assert len(recs) == 3
        assert len(errors) == 1
        assert errors[0].path == "missing.wav"
        assert "missing" in errors[0].reason

    def test_mono_file_reports_channel_count(self, tmp_path):
        write_wav(tmp_path / "mono.wav", 48000, np.zeros(1000, dtype=np.float32))
        mf = DatasetManifest.parse(
            manifest_text([("mono.wav", "o", "rough", "table", "train")]), tmp_path
        )
        recs, errors = ingest(mf)
        assert recs == []
        assert len(errors) == 1 and "channel" in errors[0].reason

    def test_30s_file_sample_count(self, tmp_path):
        sig = np.zeros(30 * 48000)
        write_recording(tmp_path / "long.wav", sig, sig)
        mf = DatasetManifest.parse(
            manifest_text([("long.wav", "o", "smooth", "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        assert recs[0].n_samples == 1_440_000

    def test_rate_mismatch_reported(self, tmp_path):
        write_wav(tmp_path / "slow.wav", 44100, np.zeros((1000, 2), dtype=np.float32))
        mf = DatasetManifest.parse(
            manifest_text([("slow.wav", "o", "rough", "table", "train")]), tmp_path
        )
        recs, errors = ingest(mf)
        assert recs == [] and "rate" in errors[0].reason

    def test_int16_wav_normalized(self, tmp_path):
        data = (np.ones((100, 2)) * 16384).astype(np.int16)
        from scipy.io import wavfile

        wavfile.write(str(tmp_path / "pcm.wav"), 48000, data)
        rate, loaded = read_wav(tmp_path / "pcm.wav")
        assert rate == 48000
        np.testing.assert_allclose(loaded, 0.5, atol=1e-4)


class TestChunkAndLabel:
    def _labeled(self, tmp_path, threshold_mode, rms=0.1, label="rough"):
        # in-band tone so raw and analysis-rate loudness agree
        sig = tone(2.0, 200, rms * math.sqrt(2))
        write_recording(tmp_path / "a.wav", sig, sig * 0.5)
        mf = DatasetManifest.parse(
            manifest_text([("a.wav", "o", label, "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        return chunk_and_label(recs, threshold_mode, DSP)

    def test_loud_windows_take_file_label(self, tmp_path):
        # -20 dBFS tone vs the -26 dBFS fixed threshold
        chunks = self._labeled(tmp_path, FixedThreshold(-26.0), rms=0.1)
        assert np.all(chunks.labels == ROUGH)
        assert np.all(chunks.piezo_rms_dbfs > -26.0)

    def test_silent_windows_are_non_valid(self, tmp_path):
        # -80 dBFS: far below the contact threshold
        chunks = self._labeled(tmp_path, FixedThreshold(-26.0), rms=0.0001)
        assert np.all(chunks.labels == NON_VALID)

    def test_mixed_file_gets_both(self, tmp_path):
        loud = tone(1.0, 200, 0.2)
        quiet = np.zeros(48000)
        sig = np.concatenate([quiet, loud])
        write_recording(tmp_path / "mix.wav", sig, sig)
        mf = DatasetManifest.parse(
            manifest_text([("mix.wav", "o", "smooth", "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        chunks = chunk_and_label(recs, FixedThreshold(-26.0), DSP)
        assert {SMOOTH, NON_VALID} <= set(chunks.labels.tolist())
        # every contact chunk's recorded loudness strictly exceeds its threshold
        contact = chunks.labels == SMOOTH
        assert np.all(chunks.piezo_rms_dbfs[contact] > chunks.threshold.for_label("smooth"))

    def test_dynamic_threshold_is_half_mean_rms(self, tmp_path):
        amp = 0.2
        sig = tone(2.0, 100, amp)
        write_recording(tmp_path / "r.wav", sig, sig)
        mf = DatasetManifest.parse(
            manifest_text([("r.wav", "o", "rough", "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        chunks = chunk_and_label(recs, DynamicThreshold(0.5), DSP)
        file_rms = recs[0].piezo_rms_linear
        expected = 20 * math.log10(0.5 * file_rms)
        assert chunks.threshold.for_label("rough") == pytest.approx(expected, abs=1e-9)
        assert chunks.threshold.mode == "dynamic"

    def test_window_exactly_at_threshold_is_non_valid(self, tmp_path):
        # contact requires strictly exceeding the threshold: pin the fixed
        # threshold to a chunk's own measured loudness and it must stay
        # non-valid
        rng = np.random.default_rng(4)
        sig = rng.normal(0, 0.05, 48000)
        write_recording(tmp_path / "b.wav", sig, sig)
        mf = DatasetManifest.parse(
            manifest_text([("b.wav", "o", "rough", "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        probe = chunk_and_label(recs, FixedThreshold(-80.0), DSP)
        boundary = float(probe.piezo_rms_dbfs[0])
        pinned = chunk_and_label(recs, FixedThreshold(boundary), DSP)
        assert pinned.labels[0] == NON_VALID

    def test_threshold_monotonicity(self, tmp_path):
        rng = np.random.default_rng(3)
        sig = rng.normal(0, 0.05, 3 * 48000) * np.linspace(0, 1, 3 * 48000)
        write_recording(tmp_path / "ramp.wav", sig, sig)
        mf = DatasetManifest.parse(
            manifest_text([("ramp.wav", "o", "rough", "table", "train")]), tmp_path
        )
        recs, _ = ingest(mf)
        previous_contact = None
        for thr in (-40.0, -30.0, -20.0, -10.0):
            chunks = chunk_and_label(recs, FixedThreshold(thr), DSP)
            contact = set(np.flatnonzero(chunks.labels != NON_VALID).tolist())
            if previous_contact is not None:
                # raising the threshold only ever removes contact chunks
                assert contact <= previous_contact
            previous_contact = contact

    def test_deterministic_hash(self, three_recordings):
        tmp_path, rows = three_recordings
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        recs, _ = ingest(mf)
        h1 = chunk_and_label(recs, FixedThreshold(-26.0), DSP).content_hash()
        h2 = chunk_and_label(recs, FixedThreshold(-26.0), DSP).content_hash()
        assert h1 == h2

    def test_codec_conditioning_changes_chunks(self, three_recordings):
        tmp_path, rows = three_recordings
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        recs, _ = ingest(mf)
        clean = chunk_and_label(recs, FixedThreshold(-26.0), DSP, codec=PassthroughCodec())
        lossy = chunk_and_label(recs, FixedThreshold(-26.0), DSP, codec=Lossy8Codec())
        assert clean.codec_name == "passthrough"
        assert lossy.codec_name == "lossy8"
        assert not np.array_equal(clean.windows_piezo, lossy.windows_piezo)

    def test_hop_recorded(self, three_recordings):
        tmp_path, rows = three_recordings
        mf = DatasetManifest.parse(manifest_text(rows), tmp_path)
        recs, _ = ingest(mf)
        chunks = chunk_and_label(recs, FixedThreshold(-26.0), DSP, hop_s=0.064)
        assert chunks.hop_s == pytest.approx(0.064)


class TestSynthDataset:
    def test_exact_class_counts(self):
        chunks = synth_dataset(7, 100, DSP)
        assert chunks.class_counts() == {"rough": 100, "smooth": 100, "non_valid": 100}

    def test_non_valid_below_threshold(self):
        chunks = synth_dataset(7, 200, DSP)
        nv = chunks.piezo_rms_dbfs[chunks.labels == NON_VALID]
        assert np.all(nv < -26.0)

    def test_contact_above_threshold(self):
        chunks = synth_dataset(7, 200, DSP)
        contact = chunks.piezo_rms_dbfs[chunks.labels != NON_VALID]
        assert np.all(contact > -26.0)

    def test_deterministic_per_seed(self):
        a = synth_dataset(13, 25, DSP)
        b = synth_dataset(13, 25, DSP)
        assert a.content_hash() == b.content_hash()
        c = synth_dataset(14, 25, DSP)
        assert c.content_hash() != a.content_hash()

    def test_oracle_separates_contact_classes(self):
        # the set must be provably learnable before any network training
        chunks = synth_dataset(7, 500, DSP)
        contact = chunks.labels != NON_VALID
        preds = band_energy_oracle(chunks.feature_matrix(DSP)[contact], DSP)
        assert (preds == chunks.labels[contact]).mean() >= 0.99

    def test_npz_cache_round_trip(self, tmp_path):
        chunks = synth_dataset(9, 20, DSP)
        path = tmp_path / "chunks.npz"
        chunks.save_npz(path)
        from roughsense.dataset import LabeledChunkSet

        loaded = LabeledChunkSet.load_npz(path)
        assert loaded.content_hash() == chunks.content_hash()
        assert loaded.threshold == chunks.threshold
        assert loaded.hop_s == chunks.hop_s

    def test_smooth_mems_much_quieter(self):
        chunks = synth_dataset(7, 100, DSP)
        smooth = chunks.labels == SMOOTH
        rough = chunks.labels == ROUGH
        ratio = lambda w_p, w_m: np.sqrt((w_m**2).mean()) / np.sqrt((w_p**2).mean())
        smooth_ratios = [
            ratio(p, m)
            for p, m in zip(chunks.windows_piezo[smooth], chunks.windows_mems[smooth])
        ]
        rough_ratios = [
            ratio(p, m)
            for p, m in zip(chunks.windows_piezo[rough], chunks.windows_mems[rough])
        ]
        assert max(smooth_ratios) < min(rough_ratios)
