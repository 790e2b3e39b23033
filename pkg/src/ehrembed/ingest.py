"""Parse hospital source files into a unified in-memory event model.

Both coding styles produce the same model: per-stay event sequences with
resolved, lower-cased descriptions. Item-id hospitals resolve codes
through their lookup file (rows whose code has no entry are dropped and
counted); text-coded hospitals carry the description inline as the code.

A hospital whose infusion stream is split across two in-house code
systems ships ``infusion_a.csv``/``infusion_b.csv`` instead of
``infusion.csv``; patients appearing in both files are dropped entirely,
mirroring the removal of histories that straddle a code-system change.
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IntegrityError, NotFoundError, ParseError
from .synthgen import (CodingStyle, EVENT_COLUMNS, LOOKUP_FILE, SOURCE_FILES, STAYS_FILE,
                       SourceItem)

_SOURCE_RANK = {SourceItem.LAB: 0, SourceItem.MED: 1, SourceItem.INFUSION: 2}


@dataclass(frozen=True)
class MedicalEvent:
    code: str
    description: str
    value: float | None
    unit: str | None
    timestamp: int
    source_item: SourceItem


@dataclass
class PatientRecord:
    patient_id: str
    stay_id: str
    events: list
    age: int
    unit_type: str
    discharge_offset: int
    discharge_status: str
    stay_count: int
    diagnoses: list = field(default_factory=list)


@dataclass
class ParseStats:
    total_rows: int = 0
    emitted_rows: int = 0
    dropped_unresolvable: int = 0
    malformed_rows: int = 0
    straddler_patients: int = 0
    straddler_rows: int = 0
    empty_stays: int = 0


def _read_rows(path, expected_header):
    if not path.exists():
        raise NotFoundError(f"missing mandatory file {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header row required", path=str(path))
        if tuple(header) != tuple(expected_header):
            raise ParseError(f"unexpected header {header}, want {list(expected_header)}",
                             path=str(path))
        for line_no, row in enumerate(reader, start=2):
            yield line_no, row


def _load_lookup(directory: Path) -> dict:
    lookup = {}
    for line_no, row in _read_rows(directory / LOOKUP_FILE, ("code", "description")):
        if len(row) != 2 or not row[0] or not row[1]:
            raise ParseError("malformed lookup row", path=str(directory / LOOKUP_FILE),
                             line_no=line_no)
        lookup[row[0]] = row[1].lower()
    return lookup


def _load_stays(directory: Path) -> dict:
    """Stay shells keyed by (patient_id, stay_id); extra sidecar columns ignored."""
    path = directory / STAYS_FILE
    if not path.exists():
        raise NotFoundError(f"missing mandatory file {path}")
    records = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            try:
                key = (row["patient_id"], row["stay_id"])
                if key in records:
                    raise IntegrityError(f"duplicate stay {key} in {path}")
                records[key] = PatientRecord(
                    patient_id=row["patient_id"], stay_id=row["stay_id"], events=[],
                    age=int(row["age"]), unit_type=row["unit_path"],
                    discharge_offset=int(row["discharge_offset_minutes"]),
                    discharge_status=row["discharge_status"],
                    stay_count=int(row["stay_count"]),
                    diagnoses=[d for d in row.get("diagnoses", "").split(";") if d],
                )
            except (KeyError, ValueError) as exc:
                raise ParseError(f"malformed stay row ({exc})", path=str(path),
                                 line_no=line_no)
    return records


def _parse_event_row(row, style, lookup, stats, strict, path, line_no):
    """Returns a (key, MedicalEvent) pair, None for counted skips."""

    def malformed(reason):
        if strict:
            raise ParseError(f"malformed row: {reason}", path=str(path), line_no=line_no)
        stats.malformed_rows += 1
        return None

    if len(row) != len(EVENT_COLUMNS):
        return malformed(f"expected {len(EVENT_COLUMNS)} columns, got {len(row)}")
    patient_id, stay_id, offset, code, value, unit = row
    try:
        timestamp = int(offset)
    except ValueError:
        return malformed(f"non-integer offset '{offset}'")
    if timestamp < 0:
        return malformed(f"negative offset {timestamp}")
    if not code:
        return malformed("empty code")
    try:
        parsed_value = float(value) if value != "" else None
    except ValueError:
        return malformed(f"non-numeric value '{value}'")

    if style is CodingStyle.ITEM_ID_CODED:
        description = lookup.get(code)
        if description is None:
            stats.dropped_unresolvable += 1
            return None
    else:
        description = code.lower()
    return (patient_id, stay_id), MedicalEvent(
        code=code, description=description, value=parsed_value,
        unit=unit or None, timestamp=timestamp, source_item=None)


def parse_hospital_with_stats(directory, style: CodingStyle, strict: bool = True):
    """Parse one hospital directory; returns (records, ParseStats).

    Events are grouped per stay in per-source file order (not yet
    interleaved across sources; see merge_streams). In strict mode a
    malformed row raises ParseError with its line number; otherwise it is
    counted and skipped.
    """
    directory = Path(directory)
    style = CodingStyle(style)
    lookup = _load_lookup(directory) if style is CodingStyle.ITEM_ID_CODED else None
    records = _load_stays(directory)
    stats = ParseStats()

    source_paths = []
    for source, fname in SOURCE_FILES.items():
        path = directory / fname
        if source is SourceItem.INFUSION and not path.exists():
            split = [directory / "infusion_a.csv", directory / "infusion_b.csv"]
            if all(p.exists() for p in split):
                source_paths.extend((source, p, tag) for p, tag in zip(split, "ab"))
                continue
        source_paths.append((source, path, None))

    straddle_seen: dict = {}
    straddlers = set()
    for source, path, system_tag in source_paths:
        for line_no, row in _read_rows(path, EVENT_COLUMNS):
            stats.total_rows += 1
            parsed = _parse_event_row(row, style, lookup, stats, strict, path, line_no)
            if parsed is None:
                continue
            key, event = parsed
            if key not in records:
                if strict:
                    raise ParseError(f"event references unknown stay {key}",
                                     path=str(path), line_no=line_no)
                stats.malformed_rows += 1
                continue
            if system_tag is not None:
                prev = straddle_seen.setdefault(key[0], system_tag)
                if prev != system_tag:
                    straddlers.add(key[0])
            event = replace(event, source_item=source)
            records[key].events.append(event)
            stats.emitted_rows += 1

    if straddlers:
        stats.straddler_patients = len(straddlers)
        for key in [k for k in records if k[0] in straddlers]:
            stats.straddler_rows += len(records[key].events)
            stats.emitted_rows -= len(records[key].events)
            del records[key]
    return list(records.values()), stats


def parse_hospital(directory, style: CodingStyle, strict: bool = True) -> list:
    records, _ = parse_hospital_with_stats(directory, style, strict=strict)
    return records


def merge_streams(records: list) -> list:
    """Interleave each stay's source streams into one timeline.

    Stable sort by (timestamp, LAB < MED < INFUSION); within one source,
    file order is preserved. Stays without any event are dropped. A
    duplicate (patient_id, stay_id) pair is an integrity error.
    """
    seen = set()
    merged = []
    for record in records:
        key = (record.patient_id, record.stay_id)
        if key in seen:
            raise IntegrityError(f"duplicate stay {key} across inputs")
        seen.add(key)
        if not record.events:
            continue
        events = sorted(record.events,
                        key=lambda e: (e.timestamp, _SOURCE_RANK[e.source_item]))
        merged.append(replace_events(record, events))
    return merged


def replace_events(record: PatientRecord, events: list) -> PatientRecord:
    return PatientRecord(
        patient_id=record.patient_id, stay_id=record.stay_id, events=list(events),
        age=record.age, unit_type=record.unit_type,
        discharge_offset=record.discharge_offset,
        discharge_status=record.discharge_status, stay_count=record.stay_count,
        diagnoses=list(record.diagnoses))


def load_hospital(directory, style: CodingStyle, strict: bool = True) -> list:
    return merge_streams(parse_hospital(directory, style, strict=strict))


def write_hospital(records: list, directory, style: CodingStyle) -> list:
    """Serialize records back to the hospital file layout.

    Inverse of parsing up to column ordering; parse(write(parse(x)))
    equals parse(x) on the in-memory model.
    """
    from .textproc import render_value

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    style = CodingStyle(style)
    written = []
    handles, writers = {}, {}
    try:
        for source, fname in SOURCE_FILES.items():
            path = directory / fname
            handles[source] = open(path, "w", encoding="utf-8", newline="")
            writers[source] = csv.writer(handles[source])
            writers[source].writerow(EVENT_COLUMNS)
            written.append(path)
        lookup = {}
        for record in records:
            for event in record.events:
                if style is CodingStyle.ITEM_ID_CODED:
                    lookup[event.code] = event.description
                writers[event.source_item].writerow([
                    record.patient_id, record.stay_id, event.timestamp, event.code,
                    render_value(event.value) if event.value is not None else "",
                    event.unit or ""])
    finally:
        for fh in handles.values():
            fh.close()

    if style is CodingStyle.ITEM_ID_CODED:
        path = directory / LOOKUP_FILE
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["code", "description"])
            for code in sorted(lookup):
                writer.writerow([code, lookup[code]])
        written.append(path)

    path = directory / STAYS_FILE
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "stay_id", "age", "unit_path",
                         "discharge_offset_minutes", "discharge_status", "stay_count",
                         "diagnoses"])
        for record in records:
            writer.writerow([record.patient_id, record.stay_id, record.age,
                             record.unit_type, record.discharge_offset,
                             record.discharge_status, record.stay_count,
                             ";".join(record.diagnoses)])
    written.append(path)
    return written
