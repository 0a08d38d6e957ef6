"""Recording ingestion, contact-threshold chunk labeling, and synthetic data.

On-disk contract: 2-channel RIFF/WAVE (PCM 16-bit or IEEE float), channel 0 =
piezo, channel 1 = MEMS, listed in a line-oriented manifest (see
DatasetManifest). Chunks are 256 ms dual-channel windows at the analysis rate;
a chunk adopts its file's label only when its piezo RMS strictly exceeds the
contact threshold, otherwise it is non-valid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .audio_core import linear_to_dbfs, rms_dbfs
from .classifier import CLASS_NAMES, NON_VALID, ROUGH, SMOOTH
from .dsp_frontend import Decimator, DspConfig, DEFAULT_DSP, featurize_windows
from .errors import ConfigError, DataError

MANIFEST_HEADER = "roughness-manifest v1"
LABELS = ("rough", "smooth")
SCENARIOS = ("handheld", "table", "box", "other")
SPLITS = ("train", "test")
LABEL_CODES = {"rough": ROUGH, "smooth": SMOOTH}


def read_wav(path: str | Path) -> tuple[int, np.ndarray]:
    """Load a WAV file as float64 in [-1, 1]; returns (rate, samples[frames, channels])."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim == 1:
        data = data[:, np.newaxis]
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return int(rate), data


def write_wav(path: str | Path, rate: int, channels: np.ndarray) -> None:
    """Write float32 WAV; channels is (frames, n_channels) or (frames,)."""
    data = np.asarray(channels, dtype=np.float32)
    wavfile.write(str(path), rate, data)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    object_name: str
    label: str
    scenario: str
    split: str


@dataclass
class DatasetManifest:
    """Recording list with global stream metadata.

    File format: first line `roughness-manifest v1`, then optional
    `key=value` metadata lines (sample_rate_hz, channel_order), then one
    tab-separated record per line: path, object, label, scenario, split.
    Lines starting with `#` are comments.
    """

    entries: list[ManifestEntry]
    sample_rate_hz: int = 48000
    channel_order: str = "piezo,mems"
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def parse(cls, text: str, base_dir: str | Path = ".") -> "DatasetManifest":
        lines = [ln.rstrip("\n") for ln in text.splitlines()]
        body = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
        if not body or body[0].strip() != MANIFEST_HEADER:
            raise ConfigError(f"manifest must start with {MANIFEST_HEADER!r}")
        meta = {"sample_rate_hz": "48000", "channel_order": "piezo,mems"}
        entries: list[ManifestEntry] = []
        for ln in body[1:]:
            if "=" in ln and "\t" not in ln:
                key, _, value = ln.partition("=")
                meta[key.strip()] = value.strip()
                continue
            parts = [p.strip() for p in ln.split("\t")]
            if len(parts) != 5:
                raise ConfigError(f"manifest record needs 5 tab-separated fields: {ln!r}")
            path, obj, label, scenario, split = parts
            if label not in LABELS:
                raise ConfigError(f"label must be one of {LABELS}, got {label!r} for {path}")
            if scenario not in SCENARIOS:
                raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
            if split not in SPLITS:
                raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
            entries.append(ManifestEntry(path, obj, label, scenario, split))
        return cls(
            entries=entries,
            sample_rate_hz=int(meta["sample_rate_hz"]),
            channel_order=meta["channel_order"],
            base_dir=Path(base_dir),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        return cls.parse(path.read_text(), base_dir=path.parent)

    def dump(self) -> str:
        lines = [
            MANIFEST_HEADER,
            f"sample_rate_hz={self.sample_rate_hz}",
            f"channel_order={self.channel_order}",
        ]
        for e in self.entries:
            lines.append("\t".join([e.path, e.object_name, e.label, e.scenario, e.split]))
        return "\n".join(lines) + "\n"

    def split(self, which: str) -> "DatasetManifest":
        return DatasetManifest(
            entries=[e for e in self.entries if e.split == which],
            sample_rate_hz=self.sample_rate_hz,
            channel_order=self.channel_order,
            base_dir=self.base_dir,
        )


@dataclass
class Recording:
    """A validated, fully loaded dual-channel recording."""

    entry: ManifestEntry
    samples_piezo: np.ndarray
    samples_mems: np.ndarray
    sample_rate_hz: int

    @property
    def n_samples(self) -> int:
        return len(self.samples_piezo)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def piezo_rms_linear(self) -> float:
        return float(np.sqrt(np.mean(self.samples_piezo**2)))

    def summary(self) -> dict:
        return {
            "path": self.entry.path,
            "label": self.entry.label,
            "n_samples": self.n_samples,
            "duration_s": self.duration_s,
            "piezo_dbfs": rms_dbfs(self.samples_piezo).display_value,
            "mems_dbfs": rms_dbfs(self.samples_mems).display_value,
        }


@dataclass(frozen=True)
class IngestError:
    path: str
    reason: str


def ingest(manifest: DatasetManifest) -> tuple[list[Recording], list[IngestError]]:
    """Load and validate every manifest entry; per-entry failures are itemized,
    never fatal to other entries."""
    recordings: list[Recording] = []
    errors: list[IngestError] = []
    for entry in manifest.entries:
        path = manifest.base_dir / entry.path
        if not path.exists():
            errors.append(IngestError(entry.path, "file missing"))
            continue
        try:
            rate, data = read_wav(path)
        except DataError as exc:
            errors.append(IngestError(entry.path, str(exc)))
            continue
        if data.shape[1] != 2:
            errors.append(
                IngestError(entry.path, f"expected 2 channels, found {data.shape[1]}")
            )
            continue
        if rate != manifest.sample_rate_hz:
            errors.append(
                IngestError(
                    entry.path,
                    f"sample rate {rate} differs from declared {manifest.sample_rate_hz}",
                )
            )
            continue
        if not np.isfinite(data).all():
            errors.append(IngestError(entry.path, "non-finite samples"))
            continue
        recordings.append(
            Recording(
                entry=entry,
                samples_piezo=data[:, 0],
                samples_mems=data[:, 1],
                sample_rate_hz=rate,
            )
        )
    return recordings, errors


@dataclass(frozen=True)
class FixedThreshold:
    """Fixed contact threshold in dBFS (reference value -26)."""

    dbfs: float = -26.0

    def resolve(self, recordings: list[Recording]) -> "ThresholdRecord":
        return ThresholdRecord(mode="fixed", dbfs_by_label={lb: self.dbfs for lb in LABELS})


@dataclass(frozen=True)
class DynamicThreshold:
    """Per-label threshold at `ratio` x the mean linear piezo RMS of that label's files."""

    ratio: float = 0.5

    def resolve(self, recordings: list[Recording]) -> "ThresholdRecord":
        dbfs_by_label = {}
        for label in LABELS:
            values = [r.piezo_rms_linear for r in recordings if r.entry.label == label]
            if not values:
                continue
            dbfs_by_label[label] = linear_to_dbfs(self.ratio * float(np.mean(values)))
        return ThresholdRecord(mode="dynamic", dbfs_by_label=dbfs_by_label, ratio=self.ratio)


@dataclass(frozen=True)
class ThresholdRecord:
    """Resolved threshold values, recorded with every chunk set."""

    mode: str
    dbfs_by_label: dict
    ratio: float | None = None

    def for_label(self, label: str) -> float:
        return self.dbfs_by_label[label]

    def describe(self) -> str:
        vals = ", ".join(f"{k}={v:.2f}dBFS" for k, v in sorted(self.dbfs_by_label.items()))
        suffix = f" (ratio={self.ratio})" if self.ratio is not None else ""
        return f"{self.mode}: {vals}{suffix}"


@dataclass
class LabeledChunkSet:
    """Labeled 256 ms dual-channel windows at the analysis rate.

    Windows are stored pre-featurization so noise can optionally be applied in
    sample space; `feature_matrix` caches the featurized view per DSP config.
    Ordering is canonical (by file, then offset) regardless of how chunking
    was executed.
    """

    windows_piezo: np.ndarray  # (N, window_samples)
    windows_mems: np.ndarray
    labels: np.ndarray  # (N,) int codes into classifier.CLASS_NAMES
    piezo_rms_dbfs: np.ndarray  # (N,) recorded loudness each label decision used
    provenance: list[tuple[str, float]]  # (source name, offset seconds)
    threshold: ThresholdRecord
    analysis_rate_hz: int
    hop_s: float
    codec_name: str = "none"
    _feature_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> dict:
        return {
            name: int((self.labels == code).sum()) for code, name in enumerate(CLASS_NAMES)
        }

    def feature_matrix(self, dsp: DspConfig = DEFAULT_DSP) -> np.ndarray:
        key = tuple(sorted(dsp.fingerprint().items()))
        if key not in self._feature_cache:
            self._feature_cache[key] = featurize_windows(
                self.windows_piezo, self.windows_mems, dsp
            )
        return self._feature_cache[key]

    def subset(self, mask: np.ndarray) -> "LabeledChunkSet":
        idx = np.flatnonzero(mask)
        return LabeledChunkSet(
            windows_piezo=self.windows_piezo[idx],
            windows_mems=self.windows_mems[idx],
            labels=self.labels[idx],
            piezo_rms_dbfs=self.piezo_rms_dbfs[idx],
            provenance=[self.provenance[i] for i in idx],
            threshold=self.threshold,
            analysis_rate_hz=self.analysis_rate_hz,
            hop_s=self.hop_s,
            codec_name=self.codec_name,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.windows_piezo.astype("<f8").tobytes())
        h.update(self.windows_mems.astype("<f8").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        h.update(self.threshold.describe().encode())
        return h.hexdigest()

    def save_npz(self, path: str | Path) -> None:
        """Cache the chunk set; pair with content_hash() for staleness checks."""
        np.savez_compressed(
            str(path),
            windows_piezo=self.windows_piezo,
            windows_mems=self.windows_mems,
            labels=self.labels,
            piezo_rms_dbfs=self.piezo_rms_dbfs,
            sources=np.array([p for p, _ in self.provenance]),
            offsets=np.array([o for _, o in self.provenance]),
            threshold_json=json.dumps(
                {
                    "mode": self.threshold.mode,
                    "dbfs_by_label": self.threshold.dbfs_by_label,
                    "ratio": self.threshold.ratio,
                }
            ),
            analysis_rate_hz=self.analysis_rate_hz,
            hop_s=self.hop_s,
            codec_name=self.codec_name,
        )

    @classmethod
    def load_npz(cls, path: str | Path) -> "LabeledChunkSet":
        with np.load(str(path), allow_pickle=False) as data:
            thr = json.loads(str(data["threshold_json"]))
            return cls(
                windows_piezo=data["windows_piezo"],
                windows_mems=data["windows_mems"],
                labels=data["labels"],
                piezo_rms_dbfs=data["piezo_rms_dbfs"],
                provenance=list(zip(data["sources"].tolist(), data["offsets"].tolist())),
                threshold=ThresholdRecord(
                    mode=thr["mode"],
                    dbfs_by_label=thr["dbfs_by_label"],
                    ratio=thr["ratio"],
                ),
                analysis_rate_hz=int(data["analysis_rate_hz"]),
                hop_s=float(data["hop_s"]),
                codec_name=str(data["codec_name"]),
            )


def chunk_and_label(
    recordings: list[Recording],
    threshold_mode: FixedThreshold | DynamicThreshold,
    dsp: DspConfig = DEFAULT_DSP,
    *,
    hop_s: float = 0.128,
    codec=None,
) -> LabeledChunkSet:
    """Slice recordings into labeled analysis-rate windows.

    Window label = file label when the window's piezo RMS strictly exceeds the
    contact threshold, else non-valid. Training extraction hops 128 ms (50 %
    overlap) by default rather than the ~10.7 ms inference hop; the hop is
    recorded in the set. When a codec is given, audio is routed through its
    encode/decode before chunking to mimic transmission conditioning (the
    passthrough codec makes this the identity).
    """
    if codec is not None:
        recordings = [_through_codec(r, codec, dsp.buffer_samples) for r in recordings]
    threshold = threshold_mode.resolve(recordings)
    window = dsp.window_samples
    hop = max(1, int(round(hop_s * dsp.analysis_rate_hz)))
    pieces_p, pieces_m, labels, loudness, provenance = [], [], [], [], []
    for rec in sorted(recordings, key=lambda r: r.entry.path):
        dec = Decimator(dsp)
        piezo, mems = dec.process(rec.samples_piezo, rec.samples_mems)
        thr = threshold.for_label(rec.entry.label)
        file_code = LABEL_CODES[rec.entry.label]
        for start in range(0, len(piezo) - window + 1, hop):
            wp = piezo[start : start + window]
            wm = mems[start : start + window]
            level = rms_dbfs(wp)
            labels.append(file_code if level.value > thr else NON_VALID)
            loudness.append(level.value)
            pieces_p.append(wp)
            pieces_m.append(wm)
            provenance.append((rec.entry.path, start / dsp.analysis_rate_hz))
    if pieces_p:
        windows_piezo = np.stack(pieces_p)
        windows_mems = np.stack(pieces_m)
    else:
        windows_piezo = np.zeros((0, window))
        windows_mems = np.zeros((0, window))
    return LabeledChunkSet(
        windows_piezo=windows_piezo,
        windows_mems=windows_mems,
        labels=np.array(labels, dtype=np.int64),
        piezo_rms_dbfs=np.array(loudness),
        provenance=provenance,
        threshold=threshold,
        analysis_rate_hz=dsp.analysis_rate_hz,
        hop_s=hop / dsp.analysis_rate_hz,
        codec_name="none" if codec is None else codec.name,
    )


def _through_codec(rec: Recording, codec, buffer_samples: int) -> Recording:
    """Round-trip a recording through the transport codec, buffer by buffer."""
    n = (rec.n_samples // buffer_samples) * buffer_samples
    out_p, out_m = [], []
    for start in range(0, n, buffer_samples):
        p = rec.samples_piezo[start : start + buffer_samples]
        m = rec.samples_mems[start : start + buffer_samples]
        dp, dm = codec.decode(codec.encode(p, m), buffer_samples)
        out_p.append(dp)
        out_m.append(dm)
    if not out_p:
        return rec
    return Recording(
        entry=rec.entry,
        samples_piezo=np.concatenate(out_p),
        samples_mems=np.concatenate(out_m),
        sample_rate_hz=rec.sample_rate_hz,
    )


# Synthetic desk-scale dataset: three families at the analysis rate, shaped so
# a plain bin-energy threshold separates the contact classes before any
# network is involved.
#   rough:  bursty upper-band noise (400-1000 Hz), strong piezo, strong MEMS
#   smooth: low-band noise (50-250 Hz), weaker piezo, MEMS far quieter
#   non-valid: broadband floor at the 16-bit quantization level
ROUGH_BAND_HZ = (400.0, 1000.0)
SMOOTH_BAND_HZ = (50.0, 250.0)
ROUGH_PIEZO_DB = (-16.0, -8.0)
SMOOTH_PIEZO_DB = (-20.0, -10.0)
NON_VALID_PIEZO_DB = (-100.0, -90.0)
ROUGH_MEMS_RATIO = (0.5, 1.0)
SMOOTH_MEMS_RATIO = (0.02, 0.08)
NON_VALID_MEMS_RATIO = (0.5, 1.5)


def _band_noise(rng: np.random.Generator, n: int, rate: int, band: tuple[float, float]):
    spectrum = rng.normal(0, 1, n // 2 + 1) + 1j * rng.normal(0, 1, n // 2 + 1)
    freqs = np.arange(n // 2 + 1) * rate / n
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0
    return np.fft.irfft(spectrum, n)


def _scale_to_dbfs(x: np.ndarray, dbfs: float) -> np.ndarray:
    rms = np.sqrt(np.mean(x**2))
    return x * (10 ** (dbfs / 20.0) / rms)


def synth_chunk(kind: str, rng: np.random.Generator, dsp: DspConfig = DEFAULT_DSP):
    """One synthetic (piezo, mems) window pair of the given class."""
    n = dsp.window_samples
    rate = dsp.analysis_rate_hz
    if kind == "rough":
        envelope = 0.3 + (rng.random(n) < 0.25) * rng.random(n)
        piezo = _band_noise(rng, n, rate, ROUGH_BAND_HZ) * envelope
        mems = _band_noise(rng, n, rate, ROUGH_BAND_HZ)
        level = rng.uniform(*ROUGH_PIEZO_DB)
        ratio = rng.uniform(*ROUGH_MEMS_RATIO)
    elif kind == "smooth":
        piezo = _band_noise(rng, n, rate, SMOOTH_BAND_HZ)
        mems = _band_noise(rng, n, rate, SMOOTH_BAND_HZ)
        level = rng.uniform(*SMOOTH_PIEZO_DB)
        ratio = rng.uniform(*SMOOTH_MEMS_RATIO)
    elif kind == "non_valid":
        piezo = rng.normal(0, 1, n)
        mems = rng.normal(0, 1, n)
        level = rng.uniform(*NON_VALID_PIEZO_DB)
        ratio = rng.uniform(*NON_VALID_MEMS_RATIO)
    else:
        raise ValueError(f"unknown synthetic class {kind!r}")
    piezo = _scale_to_dbfs(piezo, level)
    mems = _scale_to_dbfs(mems, level) * ratio
    return piezo, mems


def synth_dataset(
    seed: int, chunks_per_class: int, dsp: DspConfig = DEFAULT_DSP
) -> LabeledChunkSet:
    """Deterministic synthetic chunk set with exactly chunks_per_class per class."""
    if chunks_per_class < 1:
        raise ValueError("chunks_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    n = dsp.window_samples
    total = 3 * chunks_per_class
    windows_piezo = np.empty((total, n))
    windows_mems = np.empty((total, n))
    labels = np.empty(total, dtype=np.int64)
    provenance = []
    i = 0
    for code, kind in enumerate(CLASS_NAMES):
        for j in range(chunks_per_class):
            windows_piezo[i], windows_mems[i] = synth_chunk(kind, rng, dsp)
            labels[i] = code
            provenance.append((f"synthetic:{kind}", float(j)))
            i += 1
    loudness = np.array(
        [rms_dbfs(w).value for w in windows_piezo]
    )
    return LabeledChunkSet(
        windows_piezo=windows_piezo,
        windows_mems=windows_mems,
        labels=labels,
        piezo_rms_dbfs=loudness,
        provenance=provenance,
        threshold=ThresholdRecord(mode="fixed", dbfs_by_label={lb: -26.0 for lb in LABELS}),
        analysis_rate_hz=dsp.analysis_rate_hz,
        hop_s=dsp.window_samples / dsp.analysis_rate_hz,
    )


# Pinned from the generated distributions: rough carries most of its energy
# above this frequency, smooth none; the gap between the class statistics is
# two orders of magnitude wide.
ORACLE_SPLIT_HZ = 350.0
ORACLE_MAGNITUDE_THRESHOLD = 0.5


def band_energy_oracle(
    features: np.ndarray, dsp: DspConfig = DEFAULT_DSP
) -> np.ndarray:
    """Hand-written rough-vs-smooth separator: mean piezo magnitude above 350 Hz.

    Independent of the network; used to prove the synthetic set is learnable
    before any training happens. Returns class codes (ROUGH or SMOOTH).
    """
    bins = dsp.bins_per_channel
    freqs = np.arange(bins) * dsp.analysis_rate_hz / dsp.window_samples
    high = freqs >= ORACLE_SPLIT_HZ
    high_band = features[:, :bins][:, high].mean(axis=1)
    return np.where(high_band > ORACLE_MAGNITUDE_THRESHOLD, ROUGH, SMOOTH)


def synth_contact_wave(
    kind: str,
    duration_s: float,
    rng: np.random.Generator,
    dsp: DspConfig = DEFAULT_DSP,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-rate (input_rate_hz) dual-channel audio resembling a synthetic class.

    Used by simulation tests and the synth-data command; band content mirrors
    synth_chunk but is generated directly at the input rate.
    """
    n = int(round(duration_s * dsp.input_rate_hz))
    rate = dsp.input_rate_hz
    if kind == "rough":
        envelope = 0.3 + (rng.random(n) < 0.25) * rng.random(n)
        piezo = _band_noise(rng, n, rate, ROUGH_BAND_HZ) * envelope
        mems = _band_noise(rng, n, rate, ROUGH_BAND_HZ)
        level, ratio = -10.0, 0.75
    elif kind == "smooth":
        piezo = _band_noise(rng, n, rate, SMOOTH_BAND_HZ)
        mems = _band_noise(rng, n, rate, SMOOTH_BAND_HZ)
        level, ratio = -14.0, 0.05
    elif kind == "silence":
        return np.zeros(n), np.zeros(n)
    else:
        raise ValueError(f"unknown wave kind {kind!r}")
    piezo = np.clip(_scale_to_dbfs(piezo, level), -1.0, 1.0)
    mems = np.clip(_scale_to_dbfs(mems, level) * ratio, -1.0, 1.0)
    return piezo, mems
