"""Cohort filters and prediction-task labels.

Filters follow the stated inclusion pipeline: adults in a single medical
ICU stay longer than 12 hours, first stay per patient, first 150 codes
inside the 12-hour observation window, rare codes removed, and stays left
with fewer than 5 codes dropped. Code frequency is counted on the full
pre-cohort input so the vocabulary does not depend on the other filters.

Boundary comparisons for labels are strict: LOS>3 means strictly more
than 3*24*60 discharge minutes, readmission means strictly more than one
stay on record.
"""

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, NotFoundError, ParseError
from .ingest import PatientRecord, replace_events
from .tasks import LOS3_MINUTES, LOS7_MINUTES, N_DX_CATEGORIES, TaskKind
from .textproc import render_value


@dataclass(frozen=True)
class CohortCriteria:
    min_age: int = 18
    min_stay_minutes: int = 720
    max_codes: int = 150
    observation_window_minutes: int = 720
    min_code_frequency: int = 5
    min_codes_per_stay: int = 5
    require_single_unit: bool = True

    def __post_init__(self):
        for name in ("min_age", "min_stay_minutes", "max_codes",
                     "observation_window_minutes", "min_code_frequency",
                     "min_codes_per_stay"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"criteria.{name} must be strictly positive")


@dataclass(frozen=True)
class TaskLabel:
    task: TaskKind
    binary_value: int | None = None
    diagnosis_set: frozenset | None = None

    def __post_init__(self):
        if self.task is TaskKind.DIAGNOSIS:
            if self.diagnosis_set is None or self.binary_value is not None:
                raise ConfigurationError("diagnosis label must carry a category set")
            if any(not 0 <= c < N_DX_CATEGORIES for c in self.diagnosis_set):
                raise ConfigurationError("diagnosis categories must lie in [0, 17]")
        else:
            if self.binary_value not in (0, 1) or self.diagnosis_set is not None:
                raise ConfigurationError("binary label must carry a 0/1 value")


def code_frequencies(records) -> Counter:
    counts = Counter()
    for record in records:
        counts.update(event.code for event in record.events)
    return counts


def build_cohort(records: list, criteria: CohortCriteria = CohortCriteria()) -> list:
    """Apply all inclusion criteria; returns new truncated records.

    Keeps the first stay per patient (input order), then requires age,
    single-MICU unit, and stay length; truncates to the first max_codes
    events inside the observation window; drops events of codes occurring
    fewer than min_code_frequency times in the full input; finally drops
    stays with fewer than min_codes_per_stay surviving events.
    """
    counts = code_frequencies(records)

    first_stays = []
    seen_patients = set()
    for record in records:
        if record.patient_id in seen_patients:
            continue
        seen_patients.add(record.patient_id)
        first_stays.append(record)

    cohort = []
    for record in first_stays:
        if record.age < criteria.min_age:
            continue
        if criteria.require_single_unit and record.unit_type != "micu":
            continue
        if record.discharge_offset <= criteria.min_stay_minutes:
            continue
        window = [e for e in record.events
                  if e.timestamp < criteria.observation_window_minutes]
        window = window[: criteria.max_codes]
        kept = [e for e in window if counts[e.code] >= criteria.min_code_frequency]
        if len(kept) < criteria.min_codes_per_stay:
            continue
        cohort.append(replace_events(record, kept))
    return cohort


class DiagnosisMapping:
    """Pattern table mapping diagnosis strings to top-level categories.

    Rows are (pattern, match_level, category_id); level 0 is the most
    granular tier. A diagnosis string is split into hierarchy levels on
    '|' and matched from its most granular level upward; at each level,
    patterns are tried by (match_level ascending, longest first).
    """

    def __init__(self, rows):
        self.rows = sorted(rows, key=lambda r: (r[1], -len(r[0]), r[0]))
        for pattern, level, cat in self.rows:
            if not 0 <= cat < N_DX_CATEGORIES:
                raise ParseError(f"category_id {cat} out of range for pattern '{pattern}'")
        self.unmatched_count = 0

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"diagnosis mapping file {path} not found")
        rows = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["pattern", "match_level", "category_id"]:
                raise ParseError(f"unexpected mapping header {header}", path=str(path))
            for line_no, row in enumerate(reader, start=2):
                try:
                    rows.append((row[0].lower(), int(row[1]), int(row[2])))
                except (IndexError, ValueError) as exc:
                    raise ParseError(f"malformed mapping row ({exc})", path=str(path),
                                     line_no=line_no)
        return cls(rows)

    def resolve(self, diagnosis: str) -> int | None:
        levels = [part.strip() for part in diagnosis.lower().split("|")]
        for level_text in reversed(levels):
            for pattern, _, cat in self.rows:
                if pattern in level_text:
                    return cat
        return None


def label_stay(record: PatientRecord, task: TaskKind,
               mapping: DiagnosisMapping | None = None) -> TaskLabel:
    """Derive one task label from a cohort record (pure in the label value)."""
    task = TaskKind(task)
    if task is TaskKind.READMISSION:
        return TaskLabel(task, binary_value=int(record.stay_count > 1))
    if task is TaskKind.MORTALITY:
        return TaskLabel(task, binary_value=int(record.discharge_status.lower() == "expired"))
    if task is TaskKind.LOS3:
        return TaskLabel(task, binary_value=int(record.discharge_offset > LOS3_MINUTES))
    if task is TaskKind.LOS7:
        return TaskLabel(task, binary_value=int(record.discharge_offset > LOS7_MINUTES))
    if mapping is None:
        raise ConfigurationError("diagnosis labels require a mapping file")
    categories = set()
    for diagnosis in record.diagnoses:
        cat = mapping.resolve(diagnosis)
        if cat is None:
            mapping.unmatched_count += 1
        else:
            categories.add(cat)
    return TaskLabel(task, diagnosis_set=frozenset(categories))


# ------------------------------------------------ normalized interchange file

COHORT_COLUMNS = ("stay_id", "seq_index", "code", "description", "value", "unit",
                  "timestamp", "label_readm", "label_mort", "label_los3",
                  "label_los7", "label_dx")


@dataclass
class CohortStay:
    stay_id: str
    events: list  # (code, description, value, unit, timestamp)
    labels: dict  # TaskKind -> int or frozenset


def write_cohort(records: list, path, mapping: DiagnosisMapping | None = None) -> Path:
    """Write the normalized event-level file consumed by the tokenizer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COHORT_COLUMNS)
        for record in records:
            labels = {task: label_stay(record, task,
                                       mapping if task is TaskKind.DIAGNOSIS else None)
                      for task in TaskKind
                      if task is not TaskKind.DIAGNOSIS or mapping is not None}
            dx = ";".join(str(c) for c in sorted(
                labels[TaskKind.DIAGNOSIS].diagnosis_set)) if TaskKind.DIAGNOSIS in labels else ""
            for seq_index, event in enumerate(record.events):
                writer.writerow([
                    record.stay_id, seq_index, event.code, event.description,
                    render_value(event.value) if event.value is not None else "",
                    event.unit or "", event.timestamp,
                    labels[TaskKind.READMISSION].binary_value,
                    labels[TaskKind.MORTALITY].binary_value,
                    labels[TaskKind.LOS3].binary_value,
                    labels[TaskKind.LOS7].binary_value,
                    dx])
    return path


def load_cohort(path) -> list:
    """Read the interchange file back into per-stay event/label bundles."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"cohort file {path} not found")
    stays: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(COHORT_COLUMNS):
            raise ParseError(f"unexpected cohort header {reader.fieldnames}", path=str(path))
        for line_no, row in enumerate(reader, start=2):
            try:
                stay = stays.get(row["stay_id"])
                if stay is None:
                    labels = {
                        TaskKind.READMISSION: int(row["label_readm"]),
                        TaskKind.MORTALITY: int(row["label_mort"]),
                        TaskKind.LOS3: int(row["label_los3"]),
                        TaskKind.LOS7: int(row["label_los7"]),
                        TaskKind.DIAGNOSIS: frozenset(
                            int(c) for c in row["label_dx"].split(";") if c != ""),
                    }
                    stay = CohortStay(stay_id=row["stay_id"], events=[], labels=labels)
                    stays[row["stay_id"]] = stay
                value = float(row["value"]) if row["value"] != "" else None
                stay.events.append((row["code"], row["description"], value,
                                    row["unit"] or None, int(row["timestamp"])))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"malformed cohort row ({exc})", path=str(path),
                                 line_no=line_no)
    return list(stays.values())
