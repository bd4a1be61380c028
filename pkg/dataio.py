"""
Author: Perry Radau
Date: 2025-03-02
Brief description: Cohort CSV loading, synthetic cohort generation and LOOCV folds
Dependencies: Python 3.8+, numpy
Usage: load_cohort(), generate_cohort() and make_folds() to obtain fold-ready data
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cohort import FEATURE_NAMES, TARGET_NAME, Cohort, FoldSplit, SubjectSeries, SynthSpec
from errors import ConfigError, IntegrityError, ParseError, SchemaError

logger = logging.getLogger(__name__)

MISSING_TOKENS = {'', 'na', 'nan', 'null', 'none'}

# Synthetic generator constants
AR_COEFFICIENT = 0.8
SCORE_MEAN = 70.0
SCORE_SPREAD = 12.0
FEATURE_SPREAD = 5.0
FEATURE_NOISE = 0.5
ANOMALY_FACTOR = 5.0


def parse_value(cell: str, line: int, column: str) -> float:
    """Convert a CSV cell to float, mapping missing tokens to NaN.

    Args:
        cell: Raw cell text
        line: 1-based line number (for error messages)
        column: Column name (for error messages)

    Returns:
        float: Parsed value, NaN when missing or non-finite

    Raises:
        ParseError: If the cell is not numeric
    """
    text = cell.strip()
    if text.lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r} in column {column}", line=line)
    return value if math.isfinite(value) else math.nan


def _parse_int(cell: str, line: int, column: str) -> int:
    text = cell.strip()
    try:
        return int(float(text)) if text and float(text).is_integer() else int(text)
    except ValueError:
        raise ParseError(f"expected integer in column {column}, got {text!r}", line=line)


def _resolve_header(header: List[str], schema: Sequence[str], source: Path) -> List[str]:
    """Map header cells to canonical names, case-insensitively.

    Raises:
        SchemaError: On unknown or missing columns
    """
    canonical = {name.lower(): name for name in ['subject_id', 'day', *schema, TARGET_NAME]}
    resolved = []
    for cell in header:
        key = cell.strip().lower()
        if key not in canonical:
            raise SchemaError(f"Unknown column {cell.strip()!r} in {source.name}")
        resolved.append(canonical[key])
    missing = [name for name in canonical.values() if name not in resolved]
    if missing:
        raise SchemaError(f"Missing columns in {source.name}: {missing}")
    if len(set(resolved)) != len(resolved):
        raise SchemaError(f"Duplicated column in {source.name}")
    return resolved


def _read_rows(file_path: Path, schema: Sequence[str]) -> Dict[Tuple[int, int], Tuple[List[float], float]]:
    """Read one CSV file into {(subject, day): (features, target)}."""
    rows: Dict[Tuple[int, int], Tuple[List[float], float]] = {}

    with open(file_path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{file_path.name} is empty", line=1)
        columns = _resolve_header(header, schema, file_path)

        for line_num, row in enumerate(reader, start=2):  # header is line 1
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(columns):
                raise ParseError(f"expected {len(columns)} fields, found {len(row)} "
                                 f"in {file_path.name}", line=line_num)
            record = dict(zip(columns, row))
            subject_id = _parse_int(record['subject_id'], line_num, 'subject_id')
            day = _parse_int(record['day'], line_num, 'day')
            values = [parse_value(record[name], line_num, name) for name in schema]
            target = parse_value(record[TARGET_NAME], line_num, TARGET_NAME)

            key = (subject_id, day)
            if key in rows:
                raise IntegrityError(f"Duplicate row for subject {subject_id}, day {day} "
                                     f"(line {line_num} of {file_path.name})")
            rows[key] = (values, target)

    return rows


def load_cohort(path: Path, schema: Optional[Sequence[str]] = None,
                trim: bool = True) -> Cohort:
    """Load a cohort from one CSV file or a directory of per-subject files.

    Expected header: subject_id, day, <schema features>, sleep_score.
    Empty cells and missing tokens become NaN with the mask set. Sleep-score
    sentinels (-1, 0) are left alone; see preprocess.mark_missing.

    Args:
        path: CSV file or directory of CSV files
        schema: Feature column names (default: the 23 daily features)
        trim: Drop each subject's first and last day (on by default)

    Returns:
        Cohort: Loaded cohort

    Raises:
        FileNotFoundError: If the path does not exist
        ParseError: On malformed rows
        SchemaError: On header mismatch
        IntegrityError: On duplicate (subject, day) rows
    """
    path = Path(path)
    schema = list(schema) if schema is not None else list(FEATURE_NAMES)
    if not path.exists():
        raise FileNotFoundError(f"Cohort CSV not found: {path}")

    files = sorted(path.glob('*.csv')) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"No CSV files in {path}")

    merged: Dict[Tuple[int, int], Tuple[List[float], float]] = {}
    for file_path in files:
        for key, value in _read_rows(file_path, schema).items():
            if key in merged:
                raise IntegrityError(f"Duplicate row for subject {key[0]}, day {key[1]} "
                                     f"across files")
            merged[key] = value

    by_subject: Dict[int, List[Tuple[int, List[float], float]]] = {}
    for (subject_id, day), (values, target) in merged.items():
        by_subject.setdefault(subject_id, []).append((day, values, target))

    subjects = []
    for subject_id in sorted(by_subject):
        records = sorted(by_subject[subject_id], key=lambda r: r[0])
        subjects.append(SubjectSeries(
            subject_id=subject_id,
            days=np.array([r[0] for r in records]),
            features=np.array([r[1] for r in records], dtype=np.float64).reshape(len(records), len(schema)),
            target=np.array([r[2] for r in records], dtype=np.float64),
        ))

    cohort = Cohort(subjects=subjects, feature_names=schema)
    logger.info("Loaded %d subjects from %s", len(subjects), path)
    return trim_ends(cohort) if trim else cohort


def save_cohort(cohort: Cohort, file_path: Path) -> Path:
    """Write a cohort in the flat CSV schema (NaN as empty cell).

    Args:
        cohort: Cohort to write
        file_path: Output CSV path

    Returns:
        Path to the written file
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = file_path.with_name(file_path.name + '.tmp')

    def fmt(value: float) -> str:
        return '' if math.isnan(value) else repr(float(value))

    with open(tmp_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['subject_id', 'day', *cohort.feature_names, TARGET_NAME])
        for series in cohort.subjects:
            for row in range(series.n_days):
                writer.writerow([series.subject_id, int(series.days[row]),
                                 *[fmt(v) for v in series.features[row]],
                                 fmt(series.target[row])])
    tmp_path.replace(file_path)
    return file_path


def trim_ends(cohort: Cohort) -> Cohort:
    """Drop the first and last recorded day of every subject.

    Subjects with two or fewer rows are kept unchanged (with a warning).
    """
    trimmed = []
    for series in cohort.subjects:
        if series.n_days <= 2:
            logger.warning("Subject %s has %d rows; not trimming", series.subject_id, series.n_days)
            trimmed.append(series)
        else:
            trimmed.append(series.select_rows(slice(1, -1)))
    return cohort.replace_subjects(trimmed)


def load_synth_spec(file_path: Path) -> SynthSpec:
    """Read a SynthSpec from JSON.

    Raises:
        ConfigError: If the JSON is invalid or has unknown keys
    """
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in synthetic spec: {e}", field='synthetic')
    return SynthSpec.from_dict(data)


def feature_names_for(n_features: int) -> List[str]:
    """Schema for a synthetic cohort of the given width."""
    if n_features <= len(FEATURE_NAMES):
        return list(FEATURE_NAMES[:n_features])
    return [f'F{i:02d}' for i in range(n_features)]


def generate_cohort(spec: SynthSpec) -> Cohort:
    """Generate a seeded synthetic cohort with per-subject domain shift.

    The latent sleep score follows a bounded AR(1) process. Each feature is
    ``c_s * (FEATURE_SPREAD * (loading * latent + noise)) + o_s`` where the
    subject offset ``o_s`` and scale ``c_s`` grow with ``domain_shift_scale``.
    Anomalies multiply feature cells by 5; missing cells are blanked last.

    Args:
        spec: Generator parameters

    Returns:
        Cohort: Deterministic for a fixed spec
    """
    rng = np.random.default_rng(spec.seed)
    n_features = spec.n_features
    names = feature_names_for(n_features)

    if spec.dominant_feature is not None:
        loadings = np.zeros(n_features)
        loadings[spec.dominant_feature] = 1.0
    else:
        loadings = rng.uniform(-1.0, 1.0, size=n_features)
    base_level = rng.uniform(40.0, 60.0, size=n_features)
    innovation = math.sqrt(1.0 - AR_COEFFICIENT ** 2)

    subjects = []
    for subject_id in range(spec.n_subjects):
        offset = spec.domain_shift_scale * FEATURE_SPREAD * rng.standard_normal(n_features)
        scale = np.exp(0.2 * spec.domain_shift_scale * rng.standard_normal(n_features))

        latent = np.empty(spec.n_days)
        latent[0] = rng.standard_normal()
        shocks = rng.standard_normal(spec.n_days)
        for t in range(1, spec.n_days):
            latent[t] = AR_COEFFICIENT * latent[t - 1] + innovation * shocks[t]
        target = np.clip(SCORE_MEAN + SCORE_SPREAD * latent, 0.0, 100.0)

        noise = FEATURE_NOISE * rng.standard_normal((spec.n_days, n_features))
        features = scale * (FEATURE_SPREAD * (latent[:, None] * loadings + noise)) + base_level + offset

        anomalous = rng.random((spec.n_days, n_features)) < spec.anomaly_rate
        features = np.where(anomalous, features * ANOMALY_FACTOR, features)

        missing = rng.random((spec.n_days, n_features + 1)) < spec.missing_rate
        features = np.where(missing[:, :-1], np.nan, features)
        target = np.where(missing[:, -1], np.nan, target)

        subjects.append(SubjectSeries(
            subject_id=subject_id,
            days=np.arange(spec.n_days),
            features=features,
            target=target,
        ))

    return Cohort(subjects=subjects, feature_names=names)


def make_folds(cohort: Cohort, val_policy: str = 'next-subject',
               fixed_val_id: Optional[int] = None) -> List[FoldSplit]:
    """Build one leave-one-subject-out fold per subject.

    Args:
        cohort: Cohort with at least three subjects
        val_policy: 'next-subject' (cyclic next id) or 'fixed-id'
        fixed_val_id: Validation subject for 'fixed-id'; when it is the test
            subject, the cyclic next id is used for that fold

    Returns:
        List[FoldSplit]: Folds ordered by test subject id

    Raises:
        ConfigError: Fewer than three subjects or bad policy
    """
    ids = sorted(cohort.subject_ids)
    if len(ids) < 3:
        raise ConfigError(f"LOOCV needs at least 3 subjects, got {len(ids)}", field='subjects')
    if val_policy not in ('next-subject', 'fixed-id'):
        raise ConfigError(f"Unknown validation policy: {val_policy}", field='val_policy')
    if val_policy == 'fixed-id' and fixed_val_id not in ids:
        raise ConfigError(f"fixed validation id {fixed_val_id} not in cohort", field='val_id')

    folds = []
    for position, test_id in enumerate(ids):
        next_id = ids[(position + 1) % len(ids)]
        if val_policy == 'fixed-id' and fixed_val_id != test_id:
            val_id = fixed_val_id
        else:
            val_id = next_id
        train_ids = frozenset(i for i in ids if i not in (test_id, val_id))
        folds.append(FoldSplit(train_ids=train_ids, val_id=val_id, test_id=test_id))
    return folds
