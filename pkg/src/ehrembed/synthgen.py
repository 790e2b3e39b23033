"""Deterministic synthetic hospitals with a planted, recoverable signal.

Two coding styles stand in for the real-world schema split: one hospital
records events under opaque integer item ids resolved through a lookup
file, the other records the description string itself as the code. Both
draw on the same concept library, so descriptions are shared byte-for-byte
while code namespaces are disjoint.

Labels are sampled from a logistic model over the summed per-concept risk
weights of each patient's observed events, which gives a closed-form
Bayes-optimal score for acceptance testing.
"""

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NotFoundError
from .metrics import auprc
from .rng import purpose_rng
from .tasks import ALL_TASKS, LOS3_MINUTES, LOS7_MINUTES, N_DX_CATEGORIES, TaskKind
from .textproc import render_value


class CodingStyle(str, Enum):
    ITEM_ID_CODED = "item_id"
    TEXT_CODED = "text"


class SourceItem(str, Enum):
    LAB = "lab"
    MED = "med"
    INFUSION = "infusion"


SOURCE_FILES = {SourceItem.LAB: "lab.csv", SourceItem.MED: "medication.csv",
                SourceItem.INFUSION: "infusion.csv"}
LOOKUP_FILE = "lookup.csv"
STAYS_FILE = "stays.csv"

EVENT_COLUMNS = ("patient_id", "stay_id", "offset_minutes", "code", "value", "unit")
STAY_COLUMNS = (
    "patient_id", "stay_id", "age", "unit_path", "discharge_offset_minutes",
    "discharge_status", "stay_count", "diagnoses",
    "label_readm", "label_mort", "label_los3", "label_los7", "label_dx",
    "bayes_readm", "bayes_mort", "bayes_los3", "bayes_los7", "bayes_dx",
)

TARGET_PREVALENCE = {TaskKind.READMISSION: 0.20, TaskKind.MORTALITY: 0.15,
                     TaskKind.LOS3: 0.45, TaskKind.LOS7: 0.15}
DX_TARGET_PREVALENCE = 0.20

OBSERVATION_MINUTES = 720
MAX_SCORED_EVENTS = 150


@dataclass(frozen=True)
class HospitalProfile:
    name: str
    coding_style: CodingStyle
    concept_count: int
    patient_count: int
    seed: int
    events_per_stay: tuple = (8, 40)


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: int
    description: str
    unit: str
    source_item: SourceItem
    value_range: tuple | None  # (lo, hi), values drawn log-uniformly
    risk_weights: dict = field(hash=False, default_factory=dict)

    def weight(self, task: TaskKind) -> np.ndarray:
        return self.risk_weights.get(task, np.zeros(N_DX_CATEGORIES if task is TaskKind.DIAGNOSIS else 1))


# 18 top-level diagnosis groupings with toy string patterns; rows are
# (pattern, match_level, category_id) where level 0 is the most granular.
TOY_DX_MAPPING = [
    ("tuberculosis", 0, 0), ("sepsis", 0, 0), ("cellulitis", 0, 0), ("bacterial", 1, 0),
    ("carcinoma", 0, 1), ("lymphoma", 0, 1), ("melanoma", 0, 1), ("neoplasm", 1, 1),
    ("diabetes", 0, 2), ("thyrotoxicosis", 0, 2), ("hyperlipidemia", 0, 2), ("endocrine", 1, 2),
    ("anemia", 0, 3), ("thrombocytopenia", 0, 3), ("coagulopathy", 0, 3), ("hematologic", 1, 3),
    ("schizophrenia", 0, 4), ("depressive", 0, 4), ("delirium", 0, 4), ("psychiatric", 1, 4),
    ("epilepsy", 0, 5), ("parkinsonism", 0, 5), ("neuropathy", 0, 5), ("neurologic", 1, 5),
    ("myocardial infarction", 0, 6), ("heart failure", 0, 6), ("arrhythmia", 0, 6), ("circulatory", 1, 6),
    ("pneumonia", 0, 7), ("asthma", 0, 7), ("pulmonary embolism", 0, 7), ("respiratory", 1, 7),
    ("pancreatitis", 0, 8), ("cirrhosis", 0, 8), ("gastritis", 0, 8), ("digestive", 1, 8),
    ("pyelonephritis", 0, 9), ("renal failure", 0, 9), ("cystitis", 0, 9), ("genitourinary", 1, 9),
    ("preeclampsia", 0, 10), ("eclampsia", 0, 10), ("obstetric", 1, 10),
    ("psoriasis", 0, 11), ("dermatitis", 0, 11), ("skin ulcer", 0, 11), ("dermatologic", 1, 11),
    ("osteomyelitis", 0, 12), ("arthritis", 0, 12), ("osteoporosis", 0, 12), ("musculoskeletal", 1, 12),
    ("spina bifida", 0, 13), ("atresia", 0, 13), ("congenital", 1, 13),
    ("prematurity", 0, 14), ("birth asphyxia", 0, 14), ("perinatal", 1, 14),
    ("femur fracture", 0, 15), ("laceration", 0, 15), ("burn injury", 0, 15), ("trauma", 1, 15),
    ("syncope", 0, 16), ("fever of unknown origin", 0, 16), ("ill - defined", 1, 16),
    ("screening encounter", 0, 17), ("vaccination", 0, 17), ("aftercare", 1, 17),
]

_DX_LEVEL1 = {
    0: "bacterial", 1: "neoplasm", 2: "endocrine", 3: "hematologic", 4: "psychiatric",
    5: "neurologic", 6: "circulatory", 7: "respiratory", 8: "digestive", 9: "genitourinary",
    10: "obstetric", 11: "dermatologic", 12: "musculoskeletal", 13: "congenital",
    14: "perinatal", 15: "trauma", 16: "ill - defined", 17: "aftercare",
}


def write_toy_mapping(path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pattern", "match_level", "category_id"])
        for pattern, level, cat in TOY_DX_MAPPING:
            writer.writerow([pattern, level, cat])
    return Path(path)


_NAME_STEMS = [
    "nitroglycerin", "tylenol", "aspirin", "heparin", "insulin", "furosemide",
    "metoprolol", "vancomycin", "propofol", "lorazepam", "dopamine", "albumin",
    "potassium", "sodium", "lactate", "creatinine", "glucose", "hemoglobin",
    "platelet", "bilirubin", "troponin", "amiodarone", "fentanyl", "midazolam",
    "norepinephrine", "phenylephrine", "dextrose", "bicarbonate", "magnesium",
    "calcium", "warfarin", "digoxin", "lisinopril", "prednisone", "ceftriaxone",
]
_NAME_SUFFIXES = ["", " iv", " po", " drip", " level", " serum", " bolus",
                  " infusion", " oral", " push"]
_UNITS = ["mg", "ml", "mcg/min", "%", "tabs", "mmol/l", "units/hr", "mg/dl", "meq"]
_STRENGTHS = ["", "300", "0.005", "12.5", "1351", "2", "40", "0.45"]


def default_concepts(count: int, concept_seed: int, tasks=ALL_TASKS) -> list:
    """Shared concept library; identical output for identical arguments."""
    rng = purpose_rng(concept_seed, "concepts")
    sources = [SourceItem.LAB, SourceItem.MED, SourceItem.INFUSION]
    concepts = []
    seen_desc = set()
    idx = 0
    while len(concepts) < count:
        stem = _NAME_STEMS[idx % len(_NAME_STEMS)]
        suffix = _NAME_SUFFIXES[(idx // len(_NAME_STEMS)) % len(_NAME_SUFFIXES)]
        strength = _STRENGTHS[int(rng.integers(len(_STRENGTHS)))]
        unit = _UNITS[int(rng.integers(len(_UNITS)))]
        source = sources[idx % 3]
        desc = stem + suffix
        if strength and rng.random() < 0.5:
            desc = f"{desc} {strength} {unit}"
        if rng.random() < 0.3:
            desc = f"{desc} ({unit})"
        if desc in seen_desc:
            desc = f"{desc} #{idx}"
        seen_desc.add(desc)
        has_value = rng.random() < 0.8
        if has_value:
            lo = float(rng.choice([0.01, 0.1, 1.0, 5.0]))
            hi = lo * float(rng.choice([10.0, 100.0, 1000.0]))
            value_range = (lo, hi)
        else:
            value_range = None

        weights = {}
        for task in tasks:
            if task is TaskKind.DIAGNOSIS:
                w = np.zeros(N_DX_CATEGORIES)
                for cat in rng.choice(N_DX_CATEGORIES, size=2, replace=False):
                    if rng.random() < 0.5:
                        w[cat] = float(np.clip(rng.normal(0.0, 0.6), -2.0, 2.0))
                weights[task] = w
            else:
                if rng.random() < 0.35:
                    weights[task] = np.array([float(np.clip(rng.normal(0.0, 0.5), -2.0, 2.0))])
                else:
                    weights[task] = np.zeros(1)
        concepts.append(ConceptSpec(
            concept_id=idx, description=desc.lower(), unit=unit, source_item=source,
            value_range=value_range, risk_weights=weights))
        idx += 1
    return concepts


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))


def _calibrate_bias(scores: np.ndarray, target: float, weights=None) -> float:
    """Bisect the intercept so the mean Bernoulli probability hits target."""
    lo, hi = -40.0, 40.0
    w = np.ones_like(scores) if weights is None else weights
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if float(np.mean(w * _sigmoid(scores + mid))) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def item_code_for(profile: HospitalProfile, concept_id: int) -> str:
    """Opaque per-hospital item id; offset keeps namespaces disjoint."""
    return str(200000 + (profile.seed % 97) * 10000 + concept_id)


def generate_hospital(profile: HospitalProfile, concepts: list, tasks=ALL_TASKS,
                      out_dir=None) -> list:
    """Emit one hospital's source files; pure function of its arguments."""
    if profile.patient_count < 1:
        raise ConfigurationError(f"patient_count must be >= 1, got {profile.patient_count}")
    if profile.concept_count < 1:
        raise ConfigurationError(f"concept_count must be >= 1, got {profile.concept_count}")
    if profile.concept_count > len(concepts):
        raise ConfigurationError(
            f"profile wants {profile.concept_count} concepts but only {len(concepts)} supplied")
    out_dir = Path(out_dir if out_dir is not None else profile.name)
    out_dir.mkdir(parents=True, exist_ok=True)

    active = concepts[: profile.concept_count]
    usage_rng = purpose_rng(profile.seed, "usage")
    usage = usage_rng.dirichlet(np.full(len(active), 2.0))
    ev_rng = purpose_rng(profile.seed, "events")
    demo_rng = purpose_rng(profile.seed, "demographics")
    label_rng = purpose_rng(profile.seed, "labels")
    dx_rng = purpose_rng(profile.seed, "dx-strings")

    binary_tasks = [t for t in tasks if t is not TaskKind.DIAGNOSIS]
    want_dx = TaskKind.DIAGNOSIS in tasks

    patients = []
    lo_ev, hi_ev = profile.events_per_stay
    for p in range(profile.patient_count):
        patient_id = f"{profile.name}-p{p:06d}"
        stay_id = f"{profile.name}-s{p:06d}"
        n_events = int(ev_rng.integers(lo_ev, hi_ev + 1))
        concept_ids = ev_rng.choice(len(active), size=n_events, p=usage)
        times = np.sort(ev_rng.choice(900, size=min(n_events, 900), replace=False))
        events = []
        for t, ci in zip(times, concept_ids):
            concept = active[int(ci)]
            if concept.value_range is not None:
                lo, hi = concept.value_range
                v = math.exp(ev_rng.uniform(math.log(lo), math.log(hi)))
                value = float(np.format_float_positional(v, precision=4, unique=False))
            else:
                value = None
            events.append((int(t), concept, value))

        scored = [e for e in events if e[0] < OBSERVATION_MINUTES][:MAX_SCORED_EVENTS]
        risk = {}
        for task in binary_tasks:
            risk[task] = float(sum(e[1].weight(task)[0] for e in scored))
        if want_dx:
            risk[TaskKind.DIAGNOSIS] = sum(
                (e[1].weight(TaskKind.DIAGNOSIS) for e in scored), np.zeros(N_DX_CATEGORIES))
        patients.append({"patient_id": patient_id, "stay_id": stay_id,
                         "events": events, "risk": risk})

    # calibrate intercepts, then sample labels and Bayes scores
    bias = {}
    for task in binary_tasks:
        if task is TaskKind.LOS7:
            continue
        scores = np.array([p["risk"][task] for p in patients])
        bias[task] = _calibrate_bias(scores, TARGET_PREVALENCE[task])
    if TaskKind.LOS7 in binary_tasks and TaskKind.LOS3 in binary_tasks:
        p3 = _sigmoid(np.array([p["risk"][TaskKind.LOS3] for p in patients]) + bias[TaskKind.LOS3])
        s7 = np.array([p["risk"][TaskKind.LOS7] for p in patients])
        # LOS>7 is sampled conditionally on LOS>3, so the implication holds
        lo, hi = -40.0, 40.0
        for _ in range(200):
            mid = (lo + hi) / 2.0
            if float(np.mean(p3 * _sigmoid(s7 + mid))) < TARGET_PREVALENCE[TaskKind.LOS7]:
                lo = mid
            else:
                hi = mid
        bias[TaskKind.LOS7] = (lo + hi) / 2.0
    dx_bias = None
    if want_dx:
        dx_scores = np.stack([p["risk"][TaskKind.DIAGNOSIS] for p in patients])
        dx_bias = np.array([_calibrate_bias(dx_scores[:, c], DX_TARGET_PREVALENCE)
                            for c in range(N_DX_CATEGORIES)])

    for p in patients:
        labels, bayes = {}, {}
        for task in binary_tasks:
            if task is TaskKind.LOS7:
                continue
            prob = float(_sigmoid(p["risk"][task] + bias[task]))
            bayes[task] = prob
            labels[task] = int(label_rng.random() < prob)
        if TaskKind.LOS7 in binary_tasks:
            p3 = bayes.get(TaskKind.LOS3, 0.0)
            p7c = float(_sigmoid(p["risk"][TaskKind.LOS7] + bias[TaskKind.LOS7]))
            bayes[TaskKind.LOS7] = p3 * p7c
            labels[TaskKind.LOS7] = int(labels.get(TaskKind.LOS3, 0) and label_rng.random() < p7c)
        if want_dx:
            probs = _sigmoid(p["risk"][TaskKind.DIAGNOSIS] + dx_bias)
            draws = label_rng.random(N_DX_CATEGORIES)
            labels[TaskKind.DIAGNOSIS] = sorted(int(c) for c in np.nonzero(draws < probs)[0])
            bayes[TaskKind.DIAGNOSIS] = probs
        p["labels"], p["bayes"] = labels, bayes

        # demographics consistent with the sampled labels
        age = int(demo_rng.integers(18, 91)) if demo_rng.random() >= 0.02 else int(demo_rng.integers(5, 18))
        roll = demo_rng.random()
        unit_path = "micu" if roll >= 0.08 else ("micu/sicu" if roll >= 0.03 else "sicu")
        if labels.get(TaskKind.LOS7):
            offset = int(demo_rng.integers(LOS7_MINUTES + 1, 2 * LOS7_MINUTES + 1))
        elif labels.get(TaskKind.LOS3):
            offset = int(demo_rng.integers(LOS3_MINUTES + 1, LOS7_MINUTES + 1))
        elif demo_rng.random() < 0.03:
            offset = int(demo_rng.integers(60, OBSERVATION_MINUTES + 1))  # filtered from cohort
        else:
            offset = int(demo_rng.integers(OBSERVATION_MINUTES + 1, LOS3_MINUTES + 1))
        p.update(age=age, unit_path=unit_path, discharge_offset=offset,
                 discharge_status="expired" if labels.get(TaskKind.MORTALITY) else "alive",
                 stay_count=int(demo_rng.integers(2, 4)) if labels.get(TaskKind.READMISSION) else 1)

        diagnoses = []
        for cat in labels.get(TaskKind.DIAGNOSIS, []):
            options = [row for row in TOY_DX_MAPPING if row[2] == cat and row[1] == 0]
            pattern = options[int(dx_rng.integers(len(options)))][0] if options else _DX_LEVEL1[cat]
            diagnoses.append(f"diseases | {_DX_LEVEL1[cat]} | {pattern}")
        if dx_rng.random() < 0.05:
            diagnoses.append("findings | unspecified | not otherwise classified")
        p["diagnoses"] = diagnoses

    written = _write_files(profile, active, patients, tasks, out_dir)
    return written


def _write_files(profile, active, patients, tasks, out_dir: Path) -> list:
    written = []
    handles = {}
    writers = {}
    try:
        for source, fname in SOURCE_FILES.items():
            path = out_dir / fname
            handles[source] = open(path, "w", encoding="utf-8", newline="")
            writers[source] = csv.writer(handles[source])
            writers[source].writerow(EVENT_COLUMNS)
            written.append(path)
        for p in patients:
            for t, concept, value in p["events"]:
                if profile.coding_style is CodingStyle.ITEM_ID_CODED:
                    code = item_code_for(profile, concept.concept_id)
                else:
                    code = concept.description
                writers[concept.source_item].writerow([
                    p["patient_id"], p["stay_id"], t, code,
                    render_value(value), concept.unit if value is not None else ""])
    finally:
        for fh in handles.values():
            fh.close()

    if profile.coding_style is CodingStyle.ITEM_ID_CODED:
        path = out_dir / LOOKUP_FILE
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["code", "description"])
            for concept in active:
                writer.writerow([item_code_for(profile, concept.concept_id), concept.description])
        written.append(path)

    path = out_dir / STAYS_FILE
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STAY_COLUMNS)
        for p in patients:
            labels, bayes = p["labels"], p["bayes"]
            writer.writerow([
                p["patient_id"], p["stay_id"], p["age"], p["unit_path"],
                p["discharge_offset"], p["discharge_status"], p["stay_count"],
                ";".join(p["diagnoses"]),
                labels.get(TaskKind.READMISSION, ""), labels.get(TaskKind.MORTALITY, ""),
                labels.get(TaskKind.LOS3, ""), labels.get(TaskKind.LOS7, ""),
                ";".join(str(c) for c in labels.get(TaskKind.DIAGNOSIS, [])),
                _fmt(bayes.get(TaskKind.READMISSION)), _fmt(bayes.get(TaskKind.MORTALITY)),
                _fmt(bayes.get(TaskKind.LOS3)), _fmt(bayes.get(TaskKind.LOS7)),
                ";".join(_fmt(v) for v in bayes.get(TaskKind.DIAGNOSIS, [])),
            ])
    written.append(path)
    return written


def _fmt(x) -> str:
    return "" if x is None else np.format_float_positional(float(x), precision=10, unique=False)


def planted_signal_strength(hospital_dir, task: TaskKind) -> float:
    """AUPRC of the generator's own Bayes-optimal scores on the sidecar labels.

    Upper-bounds what any model can achieve on this data.
    """
    path = Path(hospital_dir) / STAYS_FILE
    if not path.exists():
        raise NotFoundError(f"no stay sidecar at {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if task is TaskKind.DIAGNOSIS:
        if not rows or rows[0].get("bayes_dx", "") == "":
            raise NotFoundError("diagnosis task absent from sidecar")
        scores, labels = [], []
        for row in rows:
            probs = [float(v) for v in row["bayes_dx"].split(";")]
            cats = {int(c) for c in row["label_dx"].split(";") if c != ""}
            scores.extend(probs)
            labels.extend(1 if c in cats else 0 for c in range(N_DX_CATEGORIES))
        return auprc(scores, labels)
    col_l, col_b = f"label_{task.value}", f"bayes_{task.value}"
    if not rows or col_b not in rows[0] or rows[0][col_b] == "":
        raise NotFoundError(f"task '{task.value}' absent from sidecar")
    labels = [int(row[col_l]) for row in rows]
    scores = [float(row[col_b]) for row in rows]
    return auprc(scores, labels)
