"""Patient/exam data model, exam labeling, patient-level splits, survival records.

Exams are labeled from each patient's visit history: every AF tracing is
``WithAF``; sinus tracings recorded at least one week before the patient's
first AF tracing are ``FutureAF``; sinus tracings from patients who never
show AF are ``NoAF`` provided the patient was followed for at least one
more week afterwards.  Everything else is excluded.  "Within one week"
means strictly fewer than ``follow_up_threshold_days`` whole days of
separation; a distance of exactly 7 days counts as a valid follow-up.
"""

from __future__ import annotations

import csv
import hashlib
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError

FOLLOW_UP_THRESHOLD_DAYS = 7
DAYS_PER_WEEK = 7.0
DEFAULT_SPLIT_FRACTIONS = (0.6, 0.1, 0.3)


class Label(str, Enum):
    NOAF = "noaf"
    WITHAF = "withaf"
    FUTUREAF = "futureaf"
    EXCLUDED = "excluded"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    EXCLUDED = "excluded"
    UNASSIGNED = "unassigned"


class PatientGroup(str, Enum):
    NOAF = "noaf_group"
    BASELINE_AF = "baseline_af"
    FUTURE_AF = "futureaf_group"


@dataclass(frozen=True)
class ExamRecord:
    """One 12-lead ECG exam; ``exam_day`` counts days from an arbitrary epoch."""

    exam_id: str
    patient_id: str
    exam_day: int
    af_flag: bool
    signal_ref: str = ""
    age: float = 0.0
    sex: str = "female"  # "male" | "female"
    covariates: tuple[int, ...] = ()


@dataclass(frozen=True)
class PatientHistory:
    """Time-ordered exams of one patient."""

    patient_id: str
    exams: tuple[ExamRecord, ...]

    @property
    def group(self) -> PatientGroup:
        if self.exams[0].af_flag:
            return PatientGroup.BASELINE_AF
        if any(e.af_flag for e in self.exams):
            return PatientGroup.FUTURE_AF
        return PatientGroup.NOAF


@dataclass(frozen=True)
class LabeledExam:
    exam: ExamRecord
    label: Label
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class SurvivalRecord:
    """Unit of time-to-event analysis: one scored sinus exam.

    ``duration_weeks`` runs from the exam to the patient's first AF exam
    (event=True) or to the patient's last recorded exam (event=False,
    right-censored).
    """

    duration_weeks: float
    event: bool
    risk_prob: float
    age: float = 0.0
    sex_male: int = 0
    covariates: tuple[int, ...] = ()

    def __post_init__(self):
        if self.duration_weeks < 0:
            raise ValidationError(f"negative duration: {self.duration_weeks}")
        if self.event and self.duration_weeks <= 0:
            raise ValidationError("event records must have positive duration")
        if not 0.0 <= self.risk_prob <= 1.0:
            raise ValidationError(f"risk_prob outside [0,1]: {self.risk_prob}")


def histories_from_exams(exams: Iterable[ExamRecord]) -> list[PatientHistory]:
    """Group exams by patient and sort each patient's exams by day."""
    by_patient: dict[str, list[ExamRecord]] = defaultdict(list)
    for exam in exams:
        by_patient[exam.patient_id].append(exam)
    histories = []
    for pid in sorted(by_patient):
        ordered = tuple(sorted(by_patient[pid], key=lambda e: e.exam_day))
        histories.append(PatientHistory(patient_id=pid, exams=ordered))
    return histories


def _validate_history(history: PatientHistory) -> None:
    if not history.exams:
        raise ValidationError(f"patient {history.patient_id}: empty history")
    days = [e.exam_day for e in history.exams]
    for prev, cur in zip(days, days[1:]):
        if cur <= prev:
            raise ValidationError(
                f"patient {history.patient_id}: exam days not strictly "
                f"increasing ({prev} then {cur})"
            )
    for e in history.exams:
        if e.patient_id != history.patient_id:
            raise ValidationError(
                f"history {history.patient_id} contains exam {e.exam_id} "
                f"of patient {e.patient_id}"
            )


def classify_exams(
    histories: Sequence[PatientHistory],
    follow_up_threshold_days: int = FOLLOW_UP_THRESHOLD_DAYS,
) -> list[LabeledExam]:
    """Assign NoAF / WithAF / FutureAF / Excluded labels per patient history.

    Rules, per patient:

    * every AF exam is ``WithAF``;
    * if the patient has AF, sinus exams at least ``follow_up_threshold_days``
      days before the first AF exam are ``FutureAF``; sinus exams closer than
      that, and sinus exams after the first AF exam, are ``Excluded``;
    * if the patient never has AF and recorded at least two exams, exams at
      least ``follow_up_threshold_days`` days before the last exam are
      ``NoAF``; the rest (including the last exam itself) are ``Excluded``;
    * a single sinus exam is ``Excluded`` (patient not in the study).

    Patients with no retained exam get ``split=Excluded``; every other
    patient's exams stay ``Unassigned`` until :func:`split_by_patient`.
    """
    if follow_up_threshold_days < 1:
        raise ValidationError("follow_up_threshold_days must be >= 1")
    labeled: list[LabeledExam] = []
    for history in histories:
        _validate_history(history)
        af_days = [e.exam_day for e in history.exams if e.af_flag]
        labels = []
        if af_days:
            first_af = af_days[0]
            for e in history.exams:
                if e.af_flag:
                    labels.append(Label.WITHAF)
                elif e.exam_day < first_af:
                    distance = first_af - e.exam_day
                    labels.append(
                        Label.FUTUREAF
                        if distance >= follow_up_threshold_days
                        else Label.EXCLUDED
                    )
                else:
                    labels.append(Label.EXCLUDED)
        elif len(history.exams) >= 2:
            last_day = history.exams[-1].exam_day
            for e in history.exams:
                distance = last_day - e.exam_day
                labels.append(
                    Label.NOAF
                    if distance >= follow_up_threshold_days
                    else Label.EXCLUDED
                )
        else:
            labels = [Label.EXCLUDED]
        any_retained = any(lbl is not Label.EXCLUDED for lbl in labels)
        split = Split.UNASSIGNED if any_retained else Split.EXCLUDED
        labeled.extend(
            LabeledExam(exam=e, label=lbl, split=split)
            for e, lbl in zip(history.exams, labels)
        )
    return labeled


def _patient_unit(seed: int, patient_id: str) -> float:
    """Deterministic, platform-independent hash of (seed, patient) into [0, 1)."""
    digest = hashlib.sha256(f"{seed}:{patient_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def _quota_counts(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder rounding: each count is within 1 of n * fraction
    exact = [n * f for f in fractions]
    counts = [int(q) for q in exact]
    leftovers = sorted(
        range(len(fractions)), key=lambda i: exact[i] - counts[i], reverse=True
    )
    for i in leftovers[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_by_patient(
    labeled: Sequence[LabeledExam],
    fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS,
    seed: int = 0,
) -> list[LabeledExam]:
    """Assign train/validation/test splits at the patient level.

    Patients are ranked by a seeded hash of their id and bucketed by
    exact largest-remainder quotas, so the assignment is a deterministic
    function of (seed, set of patient ids), independent of input order,
    and the per-split patient counts deviate from the requested fractions
    by less than one patient.  All exams of a patient, including its
    excluded ones, receive the same split.
    """
    if not labeled:
        raise ValidationError("no labeled exams to split")
    if any(f < 0 for f in fractions):
        raise ValidationError(f"negative split fraction in {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {fractions}")
    pool = sorted(
        {le.exam.patient_id for le in labeled if le.split is not Split.EXCLUDED}
    )
    if not pool:
        raise ValidationError("every patient is excluded; nothing to split")
    order = sorted(pool, key=lambda pid: (_patient_unit(seed, pid), pid))
    counts = _quota_counts(len(pool), fractions)
    assignment: dict[str, Split] = {}
    start = 0
    for split, count in zip((Split.TRAIN, Split.VALIDATION, Split.TEST), counts):
        for pid in order[start : start + count]:
            assignment[pid] = split
        start += count
    return [
        replace(le, split=assignment.get(le.exam.patient_id, Split.EXCLUDED))
        for le in labeled
    ]


def build_survival_records(
    labeled: Sequence[LabeledExam],
    probs: Mapping[str, float],
) -> list[SurvivalRecord]:
    """Turn scored NoAF/FutureAF exams into time-to-event records.

    ``labeled`` must contain the complete labeled histories of the patients
    of interest (their WithAF and excluded exams included) because the
    event anchor of a FutureAF exam is the patient's first AF exam and the
    censoring anchor of a NoAF exam is the patient's last recorded exam.
    ``probs`` maps exam_id to the classifier's FutureAF-vs-NoAF probability
    and must cover every NoAF/FutureAF exam passed in.
    """
    by_patient: dict[str, list[LabeledExam]] = defaultdict(list)
    for le in labeled:
        by_patient[le.exam.patient_id].append(le)
    records: list[SurvivalRecord] = []
    for pid in sorted(by_patient):
        exams = by_patient[pid]
        af_days = sorted(le.exam.exam_day for le in exams if le.exam.af_flag)
        last_day = max(le.exam.exam_day for le in exams)
        for le in exams:
            if le.label not in (Label.NOAF, Label.FUTUREAF):
                continue
            if le.exam.exam_id not in probs:
                raise ValidationError(
                    f"no probability supplied for exam {le.exam.exam_id}"
                )
            if le.label is Label.FUTUREAF:
                duration = (af_days[0] - le.exam.exam_day) / DAYS_PER_WEEK
                event = True
            else:
                duration = (last_day - le.exam.exam_day) / DAYS_PER_WEEK
                event = False
            records.append(
                SurvivalRecord(
                    duration_weeks=duration,
                    event=event,
                    risk_prob=float(probs[le.exam.exam_id]),
                    age=le.exam.age,
                    sex_male=1 if le.exam.sex == "male" else 0,
                    covariates=le.exam.covariates,
                )
            )
    return records


# ---------------------------------------------------------------------------
# manifest CSV I/O
#
# Columns: exam_id,patient_id,exam_day,af_flag,age,sex,cov_0..cov_{k-1},signal_path
# Labeled manifests append: label,split.  Lines starting with '#' are
# provenance comments and are skipped on read.
# ---------------------------------------------------------------------------


def _manifest_columns(n_covariates: int) -> list[str]:
    return (
        ["exam_id", "patient_id", "exam_day", "af_flag", "age", "sex"]
        + [f"cov_{i}" for i in range(n_covariates)]
        + ["signal_path"]
    )


def _exam_row(exam: ExamRecord) -> list[str]:
    return (
        [
            exam.exam_id,
            exam.patient_id,
            str(exam.exam_day),
            "1" if exam.af_flag else "0",
            repr(float(exam.age)),
            exam.sex,
        ]
        + [str(c) for c in exam.covariates]
        + [exam.signal_ref]
    )


def _open_rows(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            yield row


def _parse_exam(row: Sequence[str], n_covariates: int) -> ExamRecord:
    return ExamRecord(
        exam_id=row[0],
        patient_id=row[1],
        exam_day=int(row[2]),
        af_flag=row[3] == "1",
        age=float(row[4]),
        sex=row[5],
        covariates=tuple(int(v) for v in row[6 : 6 + n_covariates]),
        signal_ref=row[6 + n_covariates],
    )


def write_manifest(
    path: str | Path,
    exams: Iterable[ExamRecord],
    config_hash: str | None = None,
) -> None:
    exams = list(exams)
    n_cov = len(exams[0].covariates) if exams else 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(_manifest_columns(n_cov))
        for exam in exams:
            writer.writerow(_exam_row(exam))


def read_manifest(path: str | Path) -> list[ExamRecord]:
    rows = list(_open_rows(Path(path)))
    if not rows:
        raise ValidationError(f"empty manifest: {path}")
    header = rows[0]
    n_cov = sum(1 for col in header if col.startswith("cov_"))
    if header != _manifest_columns(n_cov):
        raise ValidationError(f"unexpected manifest header in {path}")
    return [_parse_exam(row, n_cov) for row in rows[1:]]


def write_labeled_manifest(
    path: str | Path,
    labeled: Iterable[LabeledExam],
    config_hash: str | None = None,
) -> None:
    labeled = list(labeled)
    n_cov = len(labeled[0].exam.covariates) if labeled else 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(_manifest_columns(n_cov) + ["label", "split"])
        for le in labeled:
            writer.writerow(_exam_row(le.exam) + [le.label.value, le.split.value])


def read_labeled_manifest(path: str | Path) -> list[LabeledExam]:
    rows = list(_open_rows(Path(path)))
    if not rows:
        raise ValidationError(f"empty labeled manifest: {path}")
    header = rows[0]
    n_cov = sum(1 for col in header if col.startswith("cov_"))
    if header != _manifest_columns(n_cov) + ["label", "split"]:
        raise ValidationError(f"unexpected labeled manifest header in {path}")
    out = []
    for row in rows[1:]:
        out.append(
            LabeledExam(
                exam=_parse_exam(row, n_cov),
                label=Label(row[-2]),
                split=Split(row[-1]),
            )
        )
    return out
