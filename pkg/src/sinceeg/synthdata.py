"""Synthetic EEG cohort generator and the on-disk dataset format.

Trials are built per channel as a sum of band-limited sinusoids (one
oscillator per classical EEG band, with per-trial random frequency and
phase), an emotion-specific Gaussian-windowed ERP burst that is time-locked
across channels, and 1/f pink noise.  A cohort-level suppression map scales
every component whose frequency falls inside a named band range, which is
how the attenuated-band cohorts are produced: the same random draws are
made regardless of suppression, so two cohorts generated from the same seed
differ only by those multiplicative factors (paired-cohort mode).

File format "EEGD" v1 (little endian):

    magic "EEGD" | u16 version | u32 manifest byte length | manifest JSON
    then per trial: u32 participant_id | u8 label | u8 cohort
                    | channels*time float32 samples
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedPayloadError, VersionMismatchError

MAGIC = b"EEGD"
FORMAT_VERSION = 1

EMOTIONS = ("happy", "sad", "angry", "fear")
COHORTS = ("TD", "ASD")

# classical EEG bands plus the high-alpha analysis range
BAND_RANGES: dict[str, tuple[float, float]] = {
    "delta": (1.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
    "alpha_hi": (9.0, 13.0),
}
# background oscillators are generated for these bands, in this order
GENERATOR_BANDS = ("delta", "theta", "alpha", "beta", "gamma")


@dataclass(frozen=True)
class ErpSignature:
    """One emotion's burst: when it peaks, how wide it is, and its carrier."""

    latency_ms: float
    width_ms: float
    amplitude: float
    carrier_band: str

    @property
    def carrier_hz(self) -> float:
        lo, hi = BAND_RANGES[self.carrier_band]
        return 0.5 * (lo + hi)


def default_erp_signatures() -> dict[str, ErpSignature]:
    # distinct latency and carrier band per emotion: learnable, not trivial
    return {
        "happy": ErpSignature(300.0, 60.0, 3.0, "alpha"),
        "sad": ErpSignature(350.0, 60.0, 3.0, "beta"),
        "angry": ErpSignature(400.0, 60.0, 3.0, "theta"),
        "fear": ErpSignature(450.0, 60.0, 3.0, "gamma"),
    }


@dataclass
class CohortSpec:
    """Everything the generator needs to produce one cohort."""

    n_participants: int
    trials_per_participant: int = 48
    channels: int = 32
    sample_rate: float = 500.0
    epoch_seconds: float = 2.0
    band_amplitudes: dict[str, float] = field(
        default_factory=lambda: {b: 1.0 for b in GENERATOR_BANDS})
    suppression: dict[str, float] = field(default_factory=dict)
    erp_signatures: dict[str, ErpSignature] = field(default_factory=default_erp_signatures)
    noise_level: float = 1.0
    phase_jitter: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_participant % len(EMOTIONS) != 0:
            raise ValueError("trials_per_participant must be divisible by "
                             f"{len(EMOTIONS)}")
        for band, factor in self.suppression.items():
            if band not in BAND_RANGES:
                raise ValueError(f"unknown band {band!r} in suppression map")
            if not 0.0 < factor <= 1.0:
                raise ValueError(f"suppression factor for {band} must be in (0, 1]")
        for emotion, sig in self.erp_signatures.items():
            if sig.latency_ms > self.epoch_seconds * 1000.0:
                raise ValueError(f"ERP latency of {emotion} outside the epoch")

    @property
    def epoch_samples(self) -> int:
        return int(round(self.epoch_seconds * self.sample_rate))

    def to_manifest_dict(self) -> dict:
        d = asdict(self)
        d["erp_signatures"] = {k: asdict(v) for k, v in self.erp_signatures.items()}
        return d

    @classmethod
    def from_manifest_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        d["erp_signatures"] = {k: ErpSignature(**v)
                               for k, v in d["erp_signatures"].items()}
        return cls(**d)


@dataclass
class TrialRecord:
    """One EEG trial: [channels, time] float32 samples plus its labels."""

    samples: np.ndarray
    label: str
    participant_id: int
    cohort: str
    sample_rate: float


@dataclass
class Dataset:
    manifest: dict
    trials: list[TrialRecord]


def pink_noise(n: int, rng: np.random.Generator, rows: int = 12) -> np.ndarray:
    """Approximately 1/f noise via the Voss-McCartney successive-row scheme.

    Row j holds a Gaussian value re-drawn every 2**(j+1) samples (staggered
    offsets); the sum of all rows plus a per-sample white row has a spectrum
    within about 1 dB/octave of ideal pink over the EEG range.  Output is
    scaled to roughly unit variance.
    """
    total = np.zeros(n)
    for j in range(rows):
        step = 2 ** (j + 1)
        first = 2 ** j - 1
        updates = np.arange(first, n, step)
        vals = rng.standard_normal(updates.size + 1)
        marker = np.zeros(n, dtype=np.int64)
        marker[updates] = 1
        total += vals[np.cumsum(marker)]
    total += rng.standard_normal(n)
    return total / np.sqrt(rows + 1.0)


def _suppression_factor(freq_hz: float, suppression: dict[str, float]) -> float:
    factor = 1.0
    for band, f in suppression.items():
        lo, hi = BAND_RANGES[band]
        if lo <= freq_hz < hi:
            factor *= f
    return factor


def gen_trial(spec: CohortSpec, emotion: str, rng: np.random.Generator,
              participant_id: int = 0, cohort_tag: str = "TD") -> TrialRecord:
    """Generate one trial.

    The random draw sequence depends only on the spec's structure (bands,
    channels, epoch length), never on amplitudes or suppression factors, so
    paired cohorts consume identical randomness.
    """
    if emotion not in EMOTIONS:
        raise ValueError(f"unknown emotion {emotion!r}")
    C, T = spec.channels, spec.epoch_samples
    t = np.arange(T) / spec.sample_rate
    sig = np.zeros((C, T))

    for band in GENERATOR_BANDS:
        lo, hi = BAND_RANGES[band]
        f_b = rng.uniform(lo, hi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        jitter = rng.normal(0.0, spec.phase_jitter, size=C)
        amp = spec.band_amplitudes.get(band, 0.0) * _suppression_factor(f_b, spec.suppression)
        sig += amp * np.sin(2.0 * np.pi * f_b * t[None, :] + phase + jitter[:, None])

    erp = spec.erp_signatures.get(emotion)
    if erp is not None and erp.amplitude != 0.0:
        center = erp.latency_ms / 1000.0
        width = erp.width_ms / 1000.0
        envelope = np.exp(-0.5 * ((t - center) / width) ** 2)
        carrier = np.sin(2.0 * np.pi * erp.carrier_hz * (t - center))
        amp = erp.amplitude * _suppression_factor(erp.carrier_hz, spec.suppression)
        sig += amp * (envelope * carrier)[None, :]  # time-locked across channels

    noise = np.empty((C, T))
    for c in range(C):
        noise[c] = pink_noise(T, rng)
    sig += spec.noise_level * noise

    return TrialRecord(samples=sig.astype(np.float32), label=emotion,
                       participant_id=participant_id, cohort=cohort_tag,
                       sample_rate=spec.sample_rate)


def participant_rng(seed: int, participant_id: int) -> np.random.Generator:
    """Independent, reproducible stream for one participant."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(participant_id,)))


def gen_cohort(spec: CohortSpec, cohort_tag: str) -> Dataset:
    """Generate the full cohort: balanced labels, per-participant RNG streams."""
    if cohort_tag not in COHORTS:
        raise ValueError(f"cohort tag must be one of {COHORTS}, got {cohort_tag!r}")
    trials = []
    for pid in range(spec.n_participants):
        rng = participant_rng(spec.seed, pid)
        for idx in range(spec.trials_per_participant):
            emotion = EMOTIONS[idx % len(EMOTIONS)]
            trials.append(gen_trial(spec, emotion, rng,
                                    participant_id=pid, cohort_tag=cohort_tag))
    manifest = {
        "format_version": FORMAT_VERSION,
        "cohort": cohort_tag,
        "emotions": list(EMOTIONS),
        "n_trials": len(trials),
        "channels": spec.channels,
        "epoch_samples": spec.epoch_samples,
        "spec": spec.to_manifest_dict(),
        "generator": {"pink_noise": "voss-mccartney", "rows": 12},
    }
    return Dataset(manifest=manifest, trials=trials)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, path) -> None:
    manifest = dict(dataset.manifest)
    manifest["n_trials"] = len(dataset.trials)
    mjson = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(mjson)))
        f.write(mjson)
        for tr in dataset.trials:
            if tr.samples.shape != (manifest["channels"], manifest["epoch_samples"]):
                raise ValueError("trial shape differs from manifest")
            f.write(struct.pack("<IBB", tr.participant_id,
                                EMOTIONS.index(tr.label), COHORTS.index(tr.cohort)))
            f.write(np.ascontiguousarray(tr.samples, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"dataset truncated while reading {what}")
    return buf


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"not a dataset file: magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"dataset version {version}, "
                                       f"expected {FORMAT_VERSION}")
        (mlen,) = struct.unpack("<I", _read_exact(f, 4, "manifest length"))
        try:
            manifest = json.loads(_read_exact(f, mlen, "manifest"))
        except json.JSONDecodeError as e:
            raise FormatError(f"corrupt dataset manifest: {e}") from e
        C = manifest["channels"]
        T = manifest["epoch_samples"]
        sr = manifest["spec"]["sample_rate"]
        trials = []
        for i in range(manifest["n_trials"]):
            pid, label_code, cohort_code = struct.unpack(
                "<IBB", _read_exact(f, 6, f"trial {i} header"))
            if label_code >= len(EMOTIONS) or cohort_code >= len(COHORTS):
                raise FormatError(f"trial {i} has invalid label/cohort code")
            buf = _read_exact(f, C * T * 4, f"trial {i} samples")
            samples = np.frombuffer(buf, dtype="<f4").reshape(C, T).copy()
            trials.append(TrialRecord(samples=samples, label=EMOTIONS[label_code],
                                      participant_id=pid,
                                      cohort=COHORTS[cohort_code], sample_rate=sr))
        if f.read(1):
            raise TruncatedPayloadError("dataset has trailing bytes past the payload")
    return Dataset(manifest=manifest, trials=trials)


def export_csv(dataset: Dataset, path) -> None:
    """Long-format CSV dump: one row per sample value, for external tools."""
    with open(path, "w", newline="") as f:
        f.write("participant,trial,label,cohort,channel,t_index,value\n")
        for idx, tr in enumerate(dataset.trials):
            C, T = tr.samples.shape
            for c in range(C):
                row = tr.samples[c]
                for ti in range(T):
                    f.write(f"{tr.participant_id},{idx},{tr.label},{tr.cohort},"
                            f"{c},{ti},{row[ti]!r}\n")
