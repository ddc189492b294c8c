"""Waveform preprocessing and a synthetic desk-scale ECG cohort generator.

Preprocessing brings every tracing to the classifier input layout: linear
resampling to 400 Hz followed by centered zero-padding to 4096 samples per
lead.  The generator fabricates patient histories whose labeled-exam class
shares land on configured targets, together with deterministic 12-lead
waveforms: sinus exams carry full P waves, pre-AF exams carry attenuated
P waves with mild RR jitter, AF exams have no P waves and strongly
irregular RR intervals.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import ExamRecord, PatientHistory
from .errors import ValidationError

N_LEADS = 12
TARGET_RATE_HZ = 400.0
TENSOR_SAMPLES = 4096
WAVEFORM_MAGIC = b"AFHORIZON-WAV1\x00\x00"  # 16 bytes, versioned

# fixed per-lead projection of the scalar cardiac source; lead 0 is the
# reference lead used by the R-peak and P-amplitude helpers
LEAD_GAINS = np.array(
    [1.0, 0.85, 0.6, -0.45, 0.55, 0.75, -0.3, 0.5, 0.65, 0.8, 0.9, 0.7]
)
REFERENCE_LEAD = 0

# beat morphology: (time offset from R in seconds, gaussian sigma, amplitude mV)
_P_WAVE = (-0.16, 0.025, 0.15)
_FIXED_WAVES = (
    (-0.025, 0.010, -0.10),  # Q
    (0.0, 0.012, 1.0),  # R
    (0.030, 0.012, -0.22),  # S
    (0.24, 0.055, 0.30),  # T
)

_SINUS_RR_JITTER = 0.02  # physiological RR variability for all sinus beats
_PRE_AF_JITTER_FRACTION = 0.2  # pre-AF extra jitter, as a fraction of the AF scale


@dataclass(frozen=True)
class EcgWaveform:
    """12 leads of equal length, in millivolts."""

    leads: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        if self.leads.ndim != 2 or self.leads.shape[0] != N_LEADS:
            raise ValidationError(
                f"expected ({N_LEADS}, n) lead array, got {self.leads.shape}"
            )
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]


def resample(w: EcgWaveform, target_hz: float = TARGET_RATE_HZ) -> EcgWaveform:
    """Linearly resample all leads; output length = round(n * target / rate)."""
    if target_hz <= 0:
        raise ValidationError("target rate must be positive")
    if not 300.0 <= w.sample_rate_hz <= 600.0:
        raise ValidationError(
            f"input rate {w.sample_rate_hz} Hz outside supported range [300, 600]"
        )
    n_in = w.n_samples
    if n_in < 2:
        raise ValidationError("need at least 2 samples to resample")
    n_out = int(round(n_in * target_hz / w.sample_rate_hz))
    t_in = np.arange(n_in) / w.sample_rate_hz
    t_out = np.arange(n_out) / target_hz
    out = np.empty((N_LEADS, n_out))
    for i in range(N_LEADS):
        out[i] = np.interp(t_out, t_in, w.leads[i].astype(np.float64))
    return EcgWaveform(leads=out.astype(np.float32), sample_rate_hz=float(target_hz))


def zero_pad(w: EcgWaveform, length: int = TENSOR_SAMPLES) -> np.ndarray:
    """Center the 400 Hz tracing in a (12, 4096) float32 tensor.

    The extra zero goes to the trailing side when the pad width is odd.
    Inputs longer than ``length`` are refused; truncation would drop signal.
    """
    if abs(w.sample_rate_hz - TARGET_RATE_HZ) > 1e-6:
        raise ValidationError(
            f"zero_pad expects {TARGET_RATE_HZ:g} Hz input, got {w.sample_rate_hz}"
        )
    n = w.n_samples
    if n > length:
        raise ValidationError(f"signal of {n} samples exceeds {length}; refusing to truncate")
    left = (length - n) // 2
    out = np.zeros((N_LEADS, length), dtype=np.float32)
    out[:, left : left + n] = w.leads.astype(np.float32)
    return out


def to_input_tensor(w: EcgWaveform) -> np.ndarray:
    """Resample (if needed) and pad a raw tracing into the classifier layout."""
    if abs(w.sample_rate_hz - TARGET_RATE_HZ) > 1e-6:
        w = resample(w)
    return zero_pad(w)


# ---------------------------------------------------------------------------
# waveform container: 16-byte magic, u32 lead count, u32 sample count,
# f32 sample rate, then lead-major little-endian float32 samples
# ---------------------------------------------------------------------------


def write_waveform(path: str | Path, w: EcgWaveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = WAVEFORM_MAGIC + struct.pack(
        "<IIf", w.leads.shape[0], w.leads.shape[1], float(w.sample_rate_hz)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(w.leads, dtype="<f4").tobytes())


def read_waveform(path: str | Path) -> EcgWaveform:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != WAVEFORM_MAGIC:
            raise ValidationError(f"{path}: not a waveform file (bad magic)")
        n_leads, n_samples, rate = struct.unpack("<IIf", fh.read(12))
        data = np.frombuffer(fh.read(n_leads * n_samples * 4), dtype="<f4")
    if data.size != n_leads * n_samples:
        raise ValidationError(f"{path}: truncated waveform payload")
    return EcgWaveform(
        leads=data.reshape(n_leads, n_samples).copy(), sample_rate_hz=float(rate)
    )


# ---------------------------------------------------------------------------
# synthetic cohort
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 5000
    share_noaf: float = 0.92
    share_withaf: float = 0.06
    share_futureaf: float = 0.02
    heart_rate_bpm: tuple[float, float] = (55.0, 95.0)
    p_wave_attenuation: float = 0.5
    rr_jitter_af: float = 0.25
    noise_amplitude_mv: float = 0.03
    event_weibull_shape: float = 1.5
    event_weibull_scale_weeks: float = 60.0
    censor_horizon_weeks: float = 364.0
    sinus_visits: tuple[int, int] = (2, 3)
    pre_af_visits: tuple[int, int] = (1, 2)
    duration_s: tuple[float, float] = (7.0, 10.0)
    sample_rates_hz: tuple[float, ...] = (320.0, 400.0, 512.0)
    n_covariates: int = 16
    seed: int = 1

    def __post_init__(self):
        shares = (self.share_noaf, self.share_withaf, self.share_futureaf)
        if any(s < 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise ValidationError(f"class shares must be >= 0 and sum to 1: {shares}")
        if self.n_patients < 1:
            raise ValidationError("n_patients must be positive")
        for name in (
            "p_wave_attenuation",
            "noise_amplitude_mv",
            "event_weibull_shape",
            "event_weibull_scale_weeks",
            "censor_horizon_weeks",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.sinus_visits[0] < 2 or self.sinus_visits[1] < self.sinus_visits[0]:
            raise ValidationError("sinus_visits must be an increasing range with min >= 2")
        if self.pre_af_visits[0] < 1 or self.pre_af_visits[1] < self.pre_af_visits[0]:
            raise ValidationError("pre_af_visits must be an increasing range with min >= 1")
        if not all(r > 0 for r in self.sample_rates_hz):
            raise ValidationError("sample rates must be positive")


def _cycle(lo: int, hi: int, i: int) -> int:
    return lo + i % (hi - lo + 1)


def _patient_mix(cfg: SynthConfig) -> tuple[int, int, int]:
    """Solve patient counts (noaf, baseline_af, futureaf) so that the
    labeled-exam class shares land on the configured targets."""
    mu_n = (cfg.sinus_visits[0] + cfg.sinus_visits[1]) / 2.0 - 1.0
    mu_f = (cfg.pre_af_visits[0] + cfg.pre_af_visits[1]) / 2.0
    denom = cfg.share_noaf / mu_n + cfg.share_withaf
    if denom <= 0:
        raise ValidationError("degenerate class shares")
    total_exams = cfg.n_patients / denom
    n_noaf = int(round(cfg.share_noaf * total_exams / mu_n))
    n_future = int(round(cfg.share_futureaf * total_exams / mu_f))
    n_baseline = cfg.n_patients - n_noaf - n_future
    want_baseline = cfg.share_withaf * total_exams - n_future
    if n_baseline < 0 or want_baseline < -0.5:
        raise ValidationError(
            "withaf share too small to cover the AF exams of futureaf patients"
        )
    return n_noaf, n_baseline, n_future


def _spaced_days(rng, count: int, span_days: float) -> list[int]:
    # floor-then-offset keeps every consecutive gap >= 7 days
    free = max(span_days - 7.0 * (count - 1), 1.0)
    base = np.sort(rng.uniform(0.0, free, size=count))
    return [int(math.floor(b)) + 7 * i for i, b in enumerate(base)]


def plan_cohort(cfg: SynthConfig) -> tuple[list[PatientHistory], dict[str, str]]:
    """Lay out patients, visits and exam kinds without rendering waveforms.

    Returns the histories plus a map exam_id -> waveform kind
    ('sinus' | 'pre_af' | 'af').
    """
    n_noaf, n_baseline, n_future = _patient_mix(cfg)
    rng = np.random.default_rng([cfg.seed, 0xC0C0])
    cov_prevalence = rng.uniform(0.05, 0.35, size=cfg.n_covariates)
    horizon_days = cfg.censor_horizon_weeks * 7.0

    histories: list[PatientHistory] = []
    kinds: dict[str, str] = {}
    idx = 0

    def new_patient():
        nonlocal idx
        pid = f"p{idx:06d}"
        idx += 1
        age = float(np.clip(rng.normal(54.0, 17.0), 18.0, 95.0).round(1))
        sex = "male" if rng.random() < 0.5 else "female"
        covs = tuple((rng.random(cfg.n_covariates) < cov_prevalence).astype(int).tolist())
        return pid, age, sex, covs

    def add_history(pid, age, sex, covs, day_kind_af):
        exams = []
        for j, (day, kind, af) in enumerate(day_kind_af):
            exam_id = f"{pid}-e{j}"
            exams.append(
                ExamRecord(
                    exam_id=exam_id,
                    patient_id=pid,
                    exam_day=day,
                    af_flag=af,
                    signal_ref=f"waveforms/{exam_id}.ecg",
                    age=age,
                    sex=sex,
                    covariates=covs,
                )
            )
            kinds[exam_id] = kind
        histories.append(PatientHistory(patient_id=pid, exams=tuple(exams)))

    for i in range(n_noaf):
        pid, age, sex, covs = new_patient()
        visits = _cycle(*cfg.sinus_visits, i)
        days = _spaced_days(rng, visits, horizon_days)
        add_history(pid, age, sex, covs, [(d, "sinus", False) for d in days])

    for i in range(n_future):
        pid, age, sex, covs = new_patient()
        k = _cycle(*cfg.pre_af_visits, i)
        event_weeks = cfg.event_weibull_scale_weeks * rng.weibull(cfg.event_weibull_shape)
        af_target = int(round(event_weeks * 7.0))
        days = _spaced_days(rng, k, max(af_target - 7.0, 7.0 * k))
        af_day = max(af_target, days[-1] + 7)
        rows = [(d, "pre_af", False) for d in days] + [(af_day, "af", True)]
        add_history(pid, age, sex, covs, rows)

    for _ in range(n_baseline):
        pid, age, sex, covs = new_patient()
        day = int(math.floor(rng.uniform(0.0, horizon_days)))
        add_history(pid, age, sex, covs, [(day, "af", True)])

    return histories, kinds


def _exam_rng(seed: int, exam_id: str) -> np.random.Generator:
    digest = hashlib.sha256(exam_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, 0x57415645, int.from_bytes(digest[:8], "big")])


def synth_waveform(cfg: SynthConfig, exam_id: str, kind: str) -> EcgWaveform:
    """Render one exam's 12-lead tracing; pure function of (config, exam_id)."""
    if kind not in ("sinus", "pre_af", "af"):
        raise ValidationError(f"unknown exam kind: {kind}")
    rng = _exam_rng(cfg.seed, exam_id)
    duration = rng.uniform(*cfg.duration_s)
    rate = float(cfg.sample_rates_hz[rng.integers(len(cfg.sample_rates_hz))])
    heart_rate = rng.uniform(*cfg.heart_rate_bpm)
    n = int(round(duration * rate))

    if kind == "af":
        p_gain = 0.0
    elif kind == "pre_af":
        p_gain = cfg.p_wave_attenuation
    else:
        p_gain = 1.0

    rr0 = 60.0 / heart_rate
    beat_times = []
    t = rng.uniform(0.1, rr0)
    while t < duration + rr0:
        beat_times.append(t)
        if kind == "af":
            rr = rr0 * (1.0 + cfg.rr_jitter_af * rng.uniform(-1.0, 1.0))
        else:
            jitter = _SINUS_RR_JITTER
            if kind == "pre_af":
                jitter += _PRE_AF_JITTER_FRACTION * cfg.rr_jitter_af
            rr = rr0 * (1.0 + jitter * rng.standard_normal())
        t += max(rr, 0.3 * rr0, 0.25)

    base = np.zeros(n)
    waves = ((_P_WAVE[0], _P_WAVE[1], _P_WAVE[2] * p_gain),) + _FIXED_WAVES
    for bt in beat_times:
        for offset, sigma, amp in waves:
            if amp == 0.0:
                continue
            center = bt + offset
            lo = max(int((center - 4 * sigma) * rate), 0)
            hi = min(int((center + 4 * sigma) * rate) + 1, n)
            if lo >= hi:
                continue
            ts = np.arange(lo, hi) / rate
            base[lo:hi] += amp * np.exp(-0.5 * ((ts - center) / sigma) ** 2)

    leads = np.outer(LEAD_GAINS, base)
    leads += cfg.noise_amplitude_mv * rng.standard_normal((N_LEADS, n))
    return EcgWaveform(leads=leads.astype(np.float32), sample_rate_hz=rate)


class WaveformBank(Mapping):
    """Lazy exam_id -> EcgWaveform mapping; renders deterministically on access."""

    def __init__(self, cfg: SynthConfig, kinds: dict[str, str]):
        self._cfg = cfg
        self._kinds = kinds

    def __getitem__(self, exam_id: str) -> EcgWaveform:
        return synth_waveform(self._cfg, exam_id, self._kinds[exam_id])

    def __iter__(self):
        return iter(self._kinds)

    def __len__(self):
        return len(self._kinds)

    def kind(self, exam_id: str) -> str:
        return self._kinds[exam_id]


def generate_cohort(cfg: SynthConfig) -> tuple[list[PatientHistory], WaveformBank]:
    """Plan a synthetic cohort and return its histories plus lazy waveforms."""
    histories, kinds = plan_cohort(cfg)
    return histories, WaveformBank(cfg, kinds)


# ---------------------------------------------------------------------------
# measurement helpers (used by generator self-tests and demos)
# ---------------------------------------------------------------------------


def detect_r_peaks(w: EcgWaveform, lead: int = REFERENCE_LEAD) -> np.ndarray:
    """Indices of R peaks on one lead: threshold at half the maximum, then
    local maxima at least 250 ms apart."""
    sig = w.leads[lead].astype(np.float64)
    threshold = 0.5 * sig.max()
    min_sep = max(int(0.25 * w.sample_rate_hz), 1)
    peaks = []
    i = 1
    while i < len(sig) - 1:
        if sig[i] >= threshold and sig[i] >= sig[i - 1] and sig[i] >= sig[i + 1]:
            j = i + int(np.argmax(sig[i : i + min_sep]))
            peaks.append(j)
            i = j + min_sep
        else:
            i += 1
    return np.asarray(peaks, dtype=int)


def rr_intervals_s(w: EcgWaveform, lead: int = REFERENCE_LEAD) -> np.ndarray:
    peaks = detect_r_peaks(w, lead)
    return np.diff(peaks) / w.sample_rate_hz


def estimate_p_amplitude(w: EcgWaveform, lead: int = REFERENCE_LEAD) -> float:
    """Median peak amplitude in the 110-210 ms window before each R peak."""
    peaks = detect_r_peaks(w, lead)
    sig = w.leads[lead].astype(np.float64)
    rate = w.sample_rate_hz
    amps = []
    for p in peaks[1:]:
        lo = p - int(0.21 * rate)
        hi = p - int(0.11 * rate)
        if lo < 0:
            continue
        amps.append(sig[lo:hi].max())
    if not amps:
        raise ValidationError("no usable beats for P-amplitude estimation")
    return float(np.median(amps))
