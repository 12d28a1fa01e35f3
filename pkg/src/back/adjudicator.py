"""Reconcile expert, Glasgow and Minnesota diagnoses into per-class label decisions.

Per class, in order:
  1a  expert and (glasgow or minnesota)                  -> Accepted
  1b  only one automatic classifier positive             -> Rejected
      no source positive ("absent")                      -> Rejected
  Still pending: (i) both classifiers, not the expert; (ii) expert only.
  2a  ST with heart_rate < 100                           -> Rejected
  2b  SB with heart_rate > 50                            -> Rejected
  2c  RBBB/LBBB with qrs_ms < 115                        -> Rejected
  2d  1dAVb with pr_ms < 190                             -> Rejected
  3a  RBBB, 1dAVb, SB, ST pending as (ii)                -> Accepted
  3b  AF pending as (ii) with sdnn > 646                 -> Accepted
  4   anything still pending                             -> NeedsReview
A measure needed by an applicable rule that is missing routes the class to
NeedsReview under rule "missing".
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .constants import (
    AF_MIN_ACCEPT_SDNN,
    AVB_MAX_REJECT_PR_MS,
    BBB_MAX_REJECT_QRS_MS,
    CLASS_NAMES,
    N_CLASSES,
    SB_MIN_REJECT_HR,
    ST_MAX_REJECT_HR,
)
from .errors import InputError
from .logging_config import logger


class DecisionState(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    NEEDS_REVIEW = "NeedsReview"


RULE_STATES = {
    "1a": DecisionState.ACCEPTED,
    "1b": DecisionState.REJECTED,
    "absent": DecisionState.REJECTED,
    "2a": DecisionState.REJECTED,
    "2b": DecisionState.REJECTED,
    "2c": DecisionState.REJECTED,
    "2d": DecisionState.REJECTED,
    "3a": DecisionState.ACCEPTED,
    "3b": DecisionState.ACCEPTED,
    "4": DecisionState.NEEDS_REVIEW,
    "missing": DecisionState.NEEDS_REVIEW,
}
RULE_IDS = tuple(RULE_STATES)

MEDICAL = "medical"      # pending case (ii): expert only
AUTOMATIC = "automatic"  # pending case (i): both classifiers, not the expert

# class -> (rule id, measure, rejects(value))
_STEP2 = {
    "ST": ("2a", "heart_rate", lambda v: v < ST_MAX_REJECT_HR),
    "SB": ("2b", "heart_rate", lambda v: v > SB_MIN_REJECT_HR),
    "RBBB": ("2c", "qrs_ms", lambda v: v < BBB_MAX_REJECT_QRS_MS),
    "LBBB": ("2c", "qrs_ms", lambda v: v < BBB_MAX_REJECT_QRS_MS),
    "1dAVb": ("2d", "pr_ms", lambda v: v < AVB_MAX_REJECT_PR_MS),
}
_STEP3A_CLASSES = ("RBBB", "1dAVb", "SB", "ST")


def _flag_vector(name: str, values) -> Tuple[bool, ...]:
    if not isinstance(values, (list, tuple)) or len(values) != N_CLASSES:
        raise InputError(f"{name} must be a list of {N_CLASSES} booleans in order {CLASS_NAMES}")
    if not all(isinstance(v, bool) for v in values):
        raise InputError(f"{name} must contain booleans only")
    return tuple(values)


@dataclass(frozen=True)
class SourceFlags:
    expert: Tuple[bool, ...]
    glasgow: Tuple[bool, ...]
    minnesota: Tuple[bool, ...]

    def __post_init__(self):
        for name in ("expert", "glasgow", "minnesota"):
            object.__setattr__(self, name, _flag_vector(name, getattr(self, name)))

    def swapped(self) -> "SourceFlags":
        """Glasgow and Minnesota exchanged."""
        return SourceFlags(self.expert, self.minnesota, self.glasgow)


@dataclass(frozen=True)
class ExamMeasures:
    """Heart rate in bpm, intervals and SDNN in ms; None marks a missing value."""

    heart_rate: Optional[float] = None
    qrs_ms: Optional[float] = None
    pr_ms: Optional[float] = None
    sdnn: Optional[float] = None

    def __post_init__(self):
        for name in ("heart_rate", "qrs_ms", "pr_ms", "sdnn"):
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InputError(f"{name} must be a number or null, got {value!r}")
            # SDNN of a perfectly regular rhythm is 0
            lower_ok = value >= 0 if name == "sdnn" else value > 0
            if not math.isfinite(value) or not lower_ok:
                raise InputError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class LabelDecision:
    states: Tuple[DecisionState, ...]
    rule_ids: Tuple[str, ...]

    def __post_init__(self):
        if len(self.states) != N_CLASSES or len(self.rule_ids) != N_CLASSES:
            raise InputError(f"a decision needs exactly {N_CLASSES} states")
        for state, rule_id in zip(self.states, self.rule_ids):
            if RULE_STATES.get(rule_id) != state:
                raise InputError(f"rule {rule_id!r} cannot produce state {state}")

    def items(self):
        return zip(CLASS_NAMES, self.states, self.rule_ids)

    def __getitem__(self, name: str) -> Tuple[DecisionState, str]:
        index = CLASS_NAMES.index(name)
        return self.states[index], self.rule_ids[index]


def pending_case(expert: bool, glasgow: bool, minnesota: bool) -> Optional[str]:
    """Which pending case a flag triple falls into after step 1, if any."""
    if glasgow and minnesota and not expert:
        return AUTOMATIC
    if expert and not glasgow and not minnesota:
        return MEDICAL
    return None


def decide_class(name: str, expert: bool, glasgow: bool, minnesota: bool, measures: ExamMeasures) -> str:
    """Rule id that decides one class."""
    if expert and (glasgow or minnesota):
        return "1a"
    if not (expert or glasgow or minnesota):
        return "absent"
    case = pending_case(expert, glasgow, minnesota)
    if case is None:
        return "1b"

    if name in _STEP2:
        rule_id, measure, rejects = _STEP2[name]
        value = getattr(measures, measure)
        if value is None:
            return "missing"
        if rejects(value):
            return rule_id

    if case == MEDICAL:
        if name in _STEP3A_CLASSES:
            return "3a"
        if name == "AF":
            if measures.sdnn is None:
                return "missing"
            if measures.sdnn > AF_MIN_ACCEPT_SDNN:
                return "3b"
    return "4"


def adjudicate(flags: SourceFlags, measures: ExamMeasures) -> LabelDecision:
    rule_ids = tuple(
        decide_class(name, flags.expert[i], flags.glasgow[i], flags.minnesota[i], measures)
        for i, name in enumerate(CLASS_NAMES)
    )
    return LabelDecision(tuple(RULE_STATES[r] for r in rule_ids), rule_ids)


def parse_exam(record: Mapping) -> Tuple[str, SourceFlags, ExamMeasures]:
    """Validate one input record {id, expert, glasgow, minnesota, heart_rate, qrs_ms, pr_ms, sdnn}."""
    if not isinstance(record, Mapping):
        raise InputError(f"record must be a JSON object, got {type(record).__name__}")
    missing = [key for key in ("id", "expert", "glasgow", "minnesota") if key not in record]
    if missing:
        raise InputError(f"record is missing required fields {missing}")
    flags = SourceFlags(record["expert"], record["glasgow"], record["minnesota"])
    measures = ExamMeasures(
        heart_rate=record.get("heart_rate"),
        qrs_ms=record.get("qrs_ms"),
        pr_ms=record.get("pr_ms"),
        sdnn=record.get("sdnn"),
    )
    return str(record["id"]), flags, measures


@dataclass
class AdjudicationSummary:
    n_exams: int
    n_malformed: int
    rule_counts: Dict[str, Dict[str, int]]
    state_counts: Dict[str, Dict[str, int]]
    step2_by_source: Dict[str, Dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "n_exams": self.n_exams,
            "n_malformed": self.n_malformed,
            "rule_counts": self.rule_counts,
            "state_counts": self.state_counts,
            "step2_by_source": self.step2_by_source,
        }


def batch_adjudicate(exams: Iterable) -> Tuple[List[dict], AdjudicationSummary]:
    """Adjudicate raw records; malformed ones are logged, skipped and counted.

    Items may be mappings or exceptions (a line that failed to parse upstream).
    Returns decision rows {id, class, state, rule_id} and the summary.
    """
    decisions = []
    rule_counts = {name: Counter() for name in CLASS_NAMES}
    step2_by_source = defaultdict(Counter)
    n_exams = n_malformed = 0

    for position, record in enumerate(exams, start=1):
        try:
            if isinstance(record, Exception):
                raise InputError(str(record))
            exam_id, flags, measures = parse_exam(record)
        except InputError as e:
            n_malformed += 1
            logger.warning(f"Skipping malformed record #{position}: {e}")
            continue
        n_exams += 1
        decision = adjudicate(flags, measures)
        for i, (name, state, rule_id) in enumerate(decision.items()):
            rule_counts[name][rule_id] += 1
            if rule_id.startswith("2"):
                case = pending_case(flags.expert[i], flags.glasgow[i], flags.minnesota[i])
                step2_by_source[rule_id][case] += 1
            decisions.append({"id": exam_id, "class": name, "state": state.value, "rule_id": rule_id})

    state_counts = {
        name: {state.value: sum(n for r, n in counts.items() if RULE_STATES[r] == state)
               for state in DecisionState}
        for name, counts in rule_counts.items()
    }
    summary = AdjudicationSummary(
        n_exams=n_exams,
        n_malformed=n_malformed,
        rule_counts={name: {r: counts.get(r, 0) for r in RULE_IDS} for name, counts in rule_counts.items()},
        state_counts=state_counts,
        step2_by_source={
            rule_id: {MEDICAL: step2_by_source[rule_id].get(MEDICAL, 0),
                      AUTOMATIC: step2_by_source[rule_id].get(AUTOMATIC, 0)}
            for rule_id in ("2a", "2b", "2c", "2d")
        },
    )
    logger.info(f"Adjudicated {n_exams} exams ({n_malformed} malformed records skipped)")
    return decisions, summary
