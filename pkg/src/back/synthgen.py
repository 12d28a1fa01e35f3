"""Synthetic 12-lead ECG exams and the beat/interval estimators used to check them.

Each beat is a sum of Gaussian bumps (P, Q, R, S, T plus class-specific extra
components). Every component has its own 12-lead gain vector, so the leads are
linear mixtures of a handful of canonical waveforms.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks
from tqdm import tqdm

from .adjudicator import ExamMeasures
from .constants import (
    AF_HR_RANGE,
    AF_JITTER_RANGE,
    AF_MIN_JITTER,
    AVB_MIN_PR_MS,
    AVB_PR_RANGE_MS,
    BBB_MIN_QRS_MS,
    BBB_QRS_RANGE_MS,
    CLASS_INDEX,
    CLASS_NAMES,
    DEFAULT_NOISE_STD,
    DURATION_S,
    INPUT_SAMPLES,
    N_CLASSES,
    N_LEADS,
    NORMAL_HR_RANGE,
    NORMAL_JITTER_RANGE,
    NORMAL_PR_RANGE_MS,
    NORMAL_QRS_RANGE_MS,
    PREVALENCE_PRESETS,
    R_PEAK_REFRACTORY_S,
    SAMPLE_RATE_HZ,
    SB_HR_RANGE,
    SB_MAX_HR,
    ST_HR_RANGE,
    ST_MIN_HR,
)
from .errors import ConfigError, InputError, InsufficientDataError, ShapeError
from .logging_config import logger
from .utils import Stream, derive_rng

RHYTHM_CLASSES = ("SB", "ST", "AF")
CONDUCTION_CLASSES = ("1dAVb", "RBBB", "LBBB")
# Co-occurrences the generator refuses to produce
FORBIDDEN_PAIRS = (("SB", "ST"), ("AF", "SB"), ("AF", "ST"), ("AF", "1dAVb"))

# Lead order: DI DII DIII AVR AVL AVF V1 V2 V3 V4 V5 V6
P_GAINS = np.array([0.6, 1.0, 0.4, -0.8, 0.2, 0.7, 0.5, 0.6, 0.6, 0.6, 0.6, 0.5])
QRS_GAINS = np.array([0.7, 1.0, 0.4, -0.85, 0.3, 0.7, -0.5, -0.2, 0.4, 0.9, 1.1, 0.9])
T_GAINS = np.array([0.6, 0.8, 0.3, -0.7, 0.3, 0.5, -0.2, 0.5, 0.6, 0.7, 0.6, 0.5])
RBBB_R_PRIME_GAINS = np.array([0.05, 0.1, 0.05, 0.1, 0.0, 0.05, 0.9, 0.7, 0.3, 0.0, -0.3, -0.4])
LBBB_BROAD_R_GAINS = np.array([0.5, 0.2, -0.2, -0.4, 0.6, 0.0, -0.8, -0.6, 0.1, 0.4, 0.7, 0.8])
FIBRILLATION_GAINS = np.array([0.3, 0.5, 0.3, -0.4, 0.1, 0.4, 0.8, 0.5, 0.3, 0.2, 0.2, 0.2])

P_AMPLITUDE, P_SIGMA = 0.15, 0.025
Q_AMPLITUDE, R_AMPLITUDE, S_AMPLITUDE = -0.1, 1.0, -0.25
T_AMPLITUDE, T_SIGMA = 0.25, 0.06
FIBRILLATION_AMPLITUDE = 0.05
MIN_RR_S = 0.25
TAIL_GUARD_S = 0.05


@dataclass(frozen=True)
class SynthDefaults:
    """Settings shared by every exam of a synthetic dataset."""

    noise_std: float = DEFAULT_NOISE_STD
    sample_rate_hz: int = SAMPLE_RATE_HZ
    duration_s: float = DURATION_S
    preset: str = "test"


@dataclass(frozen=True)
class SynthParams:
    heart_rate_bpm: float
    rr_jitter_fraction: float
    pr_ms: float
    qrs_ms: float
    flags: Tuple[bool, ...] = (False,) * N_CLASSES
    lead_gains: Tuple[float, ...] = (1.0,) * N_LEADS
    noise_std: float = DEFAULT_NOISE_STD
    sample_rate_hz: int = SAMPLE_RATE_HZ
    duration_s: float = DURATION_S

    def flag(self, name: str) -> bool:
        return bool(self.flags[CLASS_INDEX[name]])

    def validate(self) -> "SynthParams":
        if len(self.flags) != N_CLASSES:
            raise InputError(f"flags must have {N_CLASSES} entries, got {len(self.flags)}")
        if len(self.lead_gains) != N_LEADS:
            raise InputError(f"lead_gains must have {N_LEADS} entries, got {len(self.lead_gains)}")
        for name in ("heart_rate_bpm", "pr_ms", "qrs_ms", "sample_rate_hz", "duration_s"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InputError(f"{name} must be positive and finite, got {value}")
        if self.rr_jitter_fraction < 0 or self.noise_std < 0:
            raise InputError("rr_jitter_fraction and noise_std must be non-negative")
        if round(self.sample_rate_hz * self.duration_s) != INPUT_SAMPLES:
            raise InputError(
                f"sample_rate_hz * duration_s must give {INPUT_SAMPLES} samples, "
                f"got {self.sample_rate_hz} * {self.duration_s}"
            )
        for first, second in FORBIDDEN_PAIRS:
            if self.flag(first) and self.flag(second):
                raise InputError(f"{first} and {second} cannot co-occur")
        checks = (
            ("ST", self.heart_rate_bpm > ST_MIN_HR, f"heart_rate > {ST_MIN_HR}"),
            ("SB", self.heart_rate_bpm < SB_MAX_HR, f"heart_rate < {SB_MAX_HR}"),
            ("1dAVb", self.pr_ms >= AVB_MIN_PR_MS, f"pr_ms >= {AVB_MIN_PR_MS}"),
            ("RBBB", self.qrs_ms >= BBB_MIN_QRS_MS, f"qrs_ms >= {BBB_MIN_QRS_MS}"),
            ("LBBB", self.qrs_ms >= BBB_MIN_QRS_MS, f"qrs_ms >= {BBB_MIN_QRS_MS}"),
            ("AF", self.rr_jitter_fraction >= AF_MIN_JITTER, f"rr_jitter_fraction >= {AF_MIN_JITTER}"),
        )
        for name, holds, requirement in checks:
            if self.flag(name) and not holds:
                raise InputError(f"{name} exam requires {requirement}")
        return self


@dataclass
class SynthExam:
    id: str
    signal: np.ndarray
    labels: Tuple[bool, ...]
    measures: ExamMeasures
    r_peak_times: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def _bump(t: np.ndarray, center: float, sigma: float, amplitude: float) -> np.ndarray:
    return amplitude * np.exp(-0.5 * ((t - center) / sigma) ** 2)


def beat_times(params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    """R-peak times in seconds: first at RR/2, then jittered RR intervals."""
    mean_rr = 60.0 / params.heart_rate_bpm
    floor = max(0.6 * mean_rr, MIN_RR_S)
    times = []
    t = mean_rr / 2
    while t < params.duration_s - TAIL_GUARD_S:
        times.append(t)
        rr = mean_rr * (1.0 + params.rr_jitter_fraction * rng.standard_normal())
        t += max(rr, floor)
    return np.array(times)


def generate_exam(params: SynthParams, rng: np.random.Generator, exam_id: str = "exam") -> SynthExam:
    """Render one exam. Deterministic given (params, rng state)."""
    params.validate()
    fs = params.sample_rate_hz
    n = int(round(fs * params.duration_s))
    t = np.arange(n) / fs
    qrs = params.qrs_ms / 1000.0
    pr = params.pr_ms / 1000.0
    af, rbbb, lbbb = params.flag("AF"), params.flag("RBBB"), params.flag("LBBB")

    r_times = beat_times(params, rng)
    p_wave, qrs_wave, t_wave = np.zeros(n), np.zeros(n), np.zeros(n)
    r_prime, broad_r = np.zeros(n), np.zeros(n)
    mean_rr = 60.0 / params.heart_rate_bpm
    for r in r_times:
        if not af:
            # PR runs from P onset (center - 2 sigma) to QRS onset (R - qrs/2)
            p_wave += _bump(t, r - qrs / 2 - pr + 2 * P_SIGMA, P_SIGMA, P_AMPLITUDE)
        qrs_wave += _bump(t, r - qrs / 3, qrs / 12, Q_AMPLITUDE)
        qrs_wave += _bump(t, r, qrs / 6, R_AMPLITUDE)
        qrs_wave += _bump(t, r + qrs / 3, qrs / 12, S_AMPLITUDE)
        t_polarity = -1.0 if lbbb else 1.0
        t_wave += _bump(t, r + qrs / 2 + 0.05 + 0.2 * np.sqrt(mean_rr), T_SIGMA, t_polarity * T_AMPLITUDE)
        if rbbb:
            r_prime += _bump(t, r + qrs / 3 + 0.02, qrs / 10, 0.6)
        if lbbb:
            broad_r += _bump(t, r + qrs / 4, qrs / 5, 0.4)

    gains = np.asarray(params.lead_gains)[:, None]
    signal = (
        P_GAINS[:, None] * p_wave
        + QRS_GAINS[:, None] * qrs_wave
        + T_GAINS[:, None] * t_wave
        + RBBB_R_PRIME_GAINS[:, None] * r_prime
        + LBBB_BROAD_R_GAINS[:, None] * broad_r
    )
    if af:
        freq = rng.uniform(5.0, 8.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        fibrillation = FIBRILLATION_AMPLITUDE * np.sin(2 * np.pi * freq * t + phase)
        signal += FIBRILLATION_GAINS[:, None] * fibrillation
    signal = gains * signal
    if params.noise_std > 0:
        signal += rng.normal(0.0, params.noise_std, size=signal.shape)

    rr_ms = np.diff(r_times) * 1000.0
    measures = ExamMeasures(
        heart_rate=float(60000.0 / rr_ms.mean()) if rr_ms.size else float(params.heart_rate_bpm),
        qrs_ms=float(params.qrs_ms),
        pr_ms=float(params.pr_ms),
        sdnn=float(np.std(rr_ms, ddof=1)) if rr_ms.size >= 2 else None,
    )
    return SynthExam(exam_id, signal.astype(np.float32), tuple(params.flags), measures, r_times)


def detect_r_peaks(signal_lead: np.ndarray, sample_rate: float) -> List[int]:
    """Sample indices of R peaks on one lead with an upright R wave.

    Local maxima above half the baseline-corrected maximum, at least 200 ms apart.
    """
    x = np.asarray(signal_lead, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single lead, got shape {x.shape}")
    x = x - np.median(x)
    top = x.max(initial=0.0)
    if not np.isfinite(top) or top <= 0 or np.ptp(x) == 0:
        return []
    distance = max(1, int(round(R_PEAK_REFRACTORY_S * sample_rate)))
    peaks, _ = find_peaks(x, height=0.5 * top, distance=distance)
    return [int(p) for p in peaks]


def nn_intervals_ms(peak_indices: Sequence[int], sample_rate: float) -> np.ndarray:
    return np.diff(np.asarray(peak_indices, dtype=np.float64)) * 1000.0 / sample_rate


def compute_sdnn(peak_indices: Sequence[int], sample_rate: float) -> float:
    """Sample standard deviation (n-1) of successive peak intervals, in ms."""
    if len(peak_indices) < 3:
        raise InsufficientDataError(f"SDNN needs at least 3 peaks, got {len(peak_indices)}")
    return float(np.std(nn_intervals_ms(peak_indices, sample_rate), ddof=1))


def heart_rate_from_peaks(peak_indices: Sequence[int], sample_rate: float) -> float:
    if len(peak_indices) < 2:
        raise InsufficientDataError(f"heart rate needs at least 2 peaks, got {len(peak_indices)}")
    return float(60000.0 / nn_intervals_ms(peak_indices, sample_rate).mean())


def estimate_measures(signal: np.ndarray, sample_rate: float, lead: int = 1) -> ExamMeasures:
    """Heart rate and SDNN measured from one lead; interval durations are not estimated."""
    peaks = detect_r_peaks(signal[lead], sample_rate)
    heart_rate = heart_rate_from_peaks(peaks, sample_rate) if len(peaks) >= 2 else None
    sdnn = compute_sdnn(peaks, sample_rate) if len(peaks) >= 3 else None
    return ExamMeasures(heart_rate=heart_rate, sdnn=sdnn)


def resolve_prevalences(preset: Optional[str] = None,
                        overrides: Optional[Mapping[str, float]] = None) -> Dict[str, float]:
    """Start from a named preset and apply per-class overrides."""
    preset = preset or "test"
    if preset not in PREVALENCE_PRESETS:
        raise ConfigError(f"unknown prevalence preset {preset!r}; choose from {sorted(PREVALENCE_PRESETS)}")
    prevalences = dict(PREVALENCE_PRESETS[preset])
    for name, value in (overrides or {}).items():
        if name not in CLASS_INDEX:
            raise InputError(f"unknown class {name!r}; classes are {CLASS_NAMES}")
        prevalences[name] = float(value)
    return prevalences


def _check_prevalences(prevalences: Mapping[str, float]) -> Dict[str, float]:
    full = {name: float(prevalences.get(name, 0.0)) for name in CLASS_NAMES}
    unknown = set(prevalences) - set(CLASS_NAMES)
    if unknown:
        raise InputError(f"unknown classes in prevalences: {sorted(unknown)}")
    for name, value in full.items():
        if not 0.0 <= value <= 1.0:
            raise InputError(f"prevalence of {name} must lie in [0, 1], got {value}")
    rhythm_total = sum(full[name] for name in RHYTHM_CLASSES)
    if rhythm_total > 1.0:
        raise InputError(f"SB, ST and AF are mutually exclusive; their prevalences sum to {rhythm_total:.3f}")
    if full["1dAVb"] > 1.0 - full["AF"]:
        raise InputError("1dAVb cannot co-occur with AF, so its prevalence may not exceed 1 - AF")
    return full


def sample_params(prevalences: Mapping[str, float], rng: np.random.Generator,
                  defaults: SynthDefaults = SynthDefaults()) -> SynthParams:
    flags = dict.fromkeys(CLASS_NAMES, False)
    u = rng.random()
    cumulative = 0.0
    for name in RHYTHM_CLASSES:
        cumulative += prevalences[name]
        if u < cumulative:
            flags[name] = True
            break
    if not flags["AF"] and prevalences["AF"] < 1.0:
        flags["1dAVb"] = bool(rng.random() < prevalences["1dAVb"] / (1.0 - prevalences["AF"]))
    else:
        rng.random()
    flags["RBBB"] = bool(rng.random() < prevalences["RBBB"])
    flags["LBBB"] = bool(rng.random() < prevalences["LBBB"])

    if flags["ST"]:
        hr_range = ST_HR_RANGE
    elif flags["SB"]:
        hr_range = SB_HR_RANGE
    elif flags["AF"]:
        hr_range = AF_HR_RANGE
    else:
        hr_range = NORMAL_HR_RANGE
    pr_range = AVB_PR_RANGE_MS if flags["1dAVb"] else NORMAL_PR_RANGE_MS
    qrs_range = BBB_QRS_RANGE_MS if flags["RBBB"] or flags["LBBB"] else NORMAL_QRS_RANGE_MS
    jitter_range = AF_JITTER_RANGE if flags["AF"] else NORMAL_JITTER_RANGE

    return SynthParams(
        heart_rate_bpm=float(rng.uniform(*hr_range)),
        rr_jitter_fraction=float(rng.uniform(*jitter_range)),
        pr_ms=float(rng.uniform(*pr_range)),
        qrs_ms=float(rng.uniform(*qrs_range)),
        flags=tuple(flags[name] for name in CLASS_NAMES),
        lead_gains=tuple(float(g) for g in rng.uniform(0.8, 1.2, size=N_LEADS)),
        noise_std=defaults.noise_std,
        sample_rate_hz=defaults.sample_rate_hz,
        duration_s=defaults.duration_s,
    )


def generate_dataset(n: int, prevalences: Mapping[str, float], seed: int,
                     defaults: SynthDefaults = SynthDefaults(), show_progress: bool = True) -> List[SynthExam]:
    """n exams; exam i draws from its own stream derived from (seed, i)."""
    if n < 1:
        raise InputError(f"n must be positive, got {n}")
    full = _check_prevalences(prevalences)
    exams = []
    for index in tqdm(range(n), desc="Synthesizing exams", unit="exam", disable=not show_progress):
        rng = derive_rng(seed, Stream.SYNTH, index)
        params = sample_params(full, rng, defaults)
        exams.append(generate_exam(params, rng, exam_id=f"exam-{index:06d}"))
    counts = np.sum([exam.labels for exam in exams], axis=0)
    logger.info(
        f"Generated {n} exams: " + ", ".join(f"{name}={int(c)}" for name, c in zip(CLASS_NAMES, counts))
    )
    return exams
