"""
Author: Perry Radau
Date: 2025-03-02
Brief description: Cohort data model for daily wearable sleep records
Dependencies: Python 3.8+, numpy
Usage: Import SubjectSeries, Cohort, FoldSplit and SynthSpec for data representation
"""

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from errors import ConfigError, IntegrityError

# Daily Garmin features (Hydration excluded). SA is the stress average.
FEATURE_NAMES: List[str] = [
    'TK', 'TS', 'TD', 'HA', 'AS', 'MI',
    'RH', 'MH', 'XH',
    'AWR', 'HRV', 'LRV',
    'SA',
    'DS', 'LS', 'RS', 'AW', 'AC', 'SS', 'RM',
    'LR', 'HR', 'AR',
]

FEATURE_DESCRIPTIONS: Dict[str, str] = {
    'TK': 'TotalKilocalories',
    'TS': 'TotalSteps',
    'TD': 'TotalDistanceMeters',
    'HA': 'HighlyActiveSeconds',
    'AS': 'ActiveSeconds',
    'MI': 'ModerateIntensityMinutes',
    'RH': 'RestingHeartRate',
    'MH': 'minAvgHeartRate',
    'XH': 'maxAvgHeartRate',
    'AWR': 'AvgWakingRespirationValue',
    'HRV': 'HighestRespirationValue',
    'LRV': 'LowestRespirationValue',
    'SA': 'StressAverage',
    'DS': 'deepSleepSeconds',
    'LS': 'lightSleepSeconds',
    'RS': 'remSleepSeconds',
    'AW': 'awakeSleepSeconds',
    'AC': 'awakeCount',
    'SS': 'avgSleepStress',
    'RM': 'restlessMomentCount',
    'LR': 'lowestRespiration',
    'HR': 'highestRespiration',
    'AR': 'averageRespiration',
}

TARGET_NAME = 'sleep_score'

# Preprocessing stages in the order they must be applied.
STAGES = ('raw', 'marked', 'flagged', 'imputed', 'smoothed', 'scaled')


@dataclass
class SubjectSeries:
    """Day-indexed record of one participant.

    Missing values are stored as NaN and mirrored in ``missing_mask`` whose
    last column belongs to the target.

    Attributes:
        subject_id: Participant identifier
        days: Strictly increasing calendar-day indices, length T
        features: Matrix [T x F] of daily feature values
        target: Vector [T] of sleep scores (0-100) or NaN
        missing_mask: Boolean matrix [T x (F+1)], True where a value is absent
        stage: Last preprocessing stage applied (see STAGES)
    """
    subject_id: int
    days: np.ndarray
    features: np.ndarray
    target: np.ndarray
    missing_mask: Optional[np.ndarray] = None
    stage: str = 'raw'

    def __post_init__(self) -> None:
        """Validate shapes and derive the missing mask when absent."""
        self.days = np.asarray(self.days, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)

        if self.features.ndim != 2:
            raise IntegrityError(f"Subject {self.subject_id}: features must be 2-D, "
                                 f"got shape {self.features.shape}")
        n_rows = self.features.shape[0]
        if n_rows < 1:
            raise IntegrityError(f"Subject {self.subject_id}: series has no rows")
        if self.days.shape != (n_rows,) or self.target.shape != (n_rows,):
            raise IntegrityError(f"Subject {self.subject_id}: days/target length "
                                 f"must equal {n_rows}")
        if n_rows > 1 and np.any(np.diff(self.days) <= 0):
            raise IntegrityError(f"Subject {self.subject_id}: day indices must be "
                                 f"strictly increasing")
        if self.stage not in STAGES:
            raise IntegrityError(f"Unknown preprocessing stage: {self.stage}")

        # Non-finite cells are always missing
        self.features = np.where(np.isfinite(self.features), self.features, np.nan)
        self.target = np.where(np.isfinite(self.target), self.target, np.nan)
        absent = np.column_stack([np.isnan(self.features), np.isnan(self.target)])

        if self.missing_mask is None:
            self.missing_mask = absent
        else:
            self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
            if self.missing_mask.shape != absent.shape:
                raise IntegrityError(f"Subject {self.subject_id}: missing_mask shape "
                                     f"{self.missing_mask.shape} != {absent.shape}")
            if not np.array_equal(self.missing_mask, absent):
                raise IntegrityError(f"Subject {self.subject_id}: missing_mask disagrees "
                                     f"with absent values")

    @property
    def n_days(self) -> int:
        """Number of rows T."""
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        """Number of feature columns F."""
        return self.features.shape[1]

    def with_values(self, features: np.ndarray, target: np.ndarray,
                    stage: Optional[str] = None) -> 'SubjectSeries':
        """Copy of this series with new values (mask recomputed).

        Args:
            features: Replacement feature matrix, same shape
            target: Replacement target vector, same length
            stage: Stage tag for the copy (defaults to the current stage)

        Returns:
            SubjectSeries: New series
        """
        return replace(self, features=np.array(features, dtype=np.float64),
                       target=np.array(target, dtype=np.float64),
                       missing_mask=None, stage=stage or self.stage)

    def select_rows(self, rows: slice) -> 'SubjectSeries':
        """Copy restricted to a row slice."""
        return replace(self, days=self.days[rows].copy(),
                       features=self.features[rows].copy(),
                       target=self.target[rows].copy(), missing_mask=None)


@dataclass
class Cohort:
    """All participants sharing one feature schema.

    Attributes:
        subjects: Per-subject series
        feature_names: Column names, length F
    """
    subjects: List[SubjectSeries]
    feature_names: List[str]

    def __post_init__(self) -> None:
        """Validate id uniqueness and shared schema."""
        ids = [s.subject_id for s in self.subjects]
        if len(ids) != len(set(ids)):
            raise IntegrityError(f"Duplicate subject ids in cohort: {sorted(ids)}")
        for series in self.subjects:
            if series.n_features != len(self.feature_names):
                raise IntegrityError(
                    f"Subject {series.subject_id} has {series.n_features} features, "
                    f"schema has {len(self.feature_names)}")

    @property
    def subject_ids(self) -> List[int]:
        """Subject ids in cohort order."""
        return [s.subject_id for s in self.subjects]

    def get(self, subject_id: int) -> SubjectSeries:
        """Look up a subject by id.

        Raises:
            KeyError: If the id is unknown
        """
        for series in self.subjects:
            if series.subject_id == subject_id:
                return series
        raise KeyError(f"Unknown subject id: {subject_id}")

    def replace_subjects(self, subjects: List[SubjectSeries]) -> 'Cohort':
        """Cohort with the same schema and new series."""
        return Cohort(subjects=subjects, feature_names=list(self.feature_names))


@dataclass(frozen=True)
class FoldSplit:
    """One leave-one-subject-out fold."""
    train_ids: FrozenSet[int]
    val_id: int
    test_id: int

    def __post_init__(self) -> None:
        if self.val_id == self.test_id:
            raise IntegrityError("Validation and test subject must differ")
        if self.val_id in self.train_ids or self.test_id in self.train_ids:
            raise IntegrityError("Validation/test subject appears in training ids")


@dataclass
class SynthSpec:
    """Parameters of a seeded synthetic cohort.

    Attributes:
        n_subjects: Number of participants (>= 3)
        n_days: Days per participant
        n_features: Feature columns
        domain_shift_scale: Magnitude of per-subject offsets and scales
        anomaly_rate: Fraction of feature cells multiplied by 5
        missing_rate: Fraction of cells blanked
        seed: RNG seed
        dominant_feature: If set, the only feature carrying the latent score
    """
    n_subjects: int = 16
    n_days: int = 120
    n_features: int = 23
    domain_shift_scale: float = 1.0
    anomaly_rate: float = 0.02
    missing_rate: float = 0.01
    seed: int = 0
    dominant_feature: Optional[int] = None

    def __post_init__(self) -> None:
        """Validate ranges."""
        violations = []
        if self.n_subjects < 3:
            violations.append(f"n_subjects must be >= 3, got {self.n_subjects}")
        if self.n_days < 1:
            violations.append(f"n_days must be >= 1, got {self.n_days}")
        if self.n_features < 1:
            violations.append(f"n_features must be >= 1, got {self.n_features}")
        if self.domain_shift_scale < 0:
            violations.append("domain_shift_scale must be non-negative")
        for name in ('anomaly_rate', 'missing_rate'):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                violations.append(f"{name} must lie in [0, 1], got {rate}")
        if self.dominant_feature is not None and not 0 <= self.dominant_feature < self.n_features:
            violations.append(f"dominant_feature out of range: {self.dominant_feature}")
        if violations:
            raise ConfigError(violations[0], field='synthetic', violations=violations)

    @classmethod
    def from_dict(cls, data: Dict) -> 'SynthSpec':
        """Build from a JSON object, rejecting unknown keys."""
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown synthetic keys: {unknown}", field='synthetic')
        return cls(**data)

    def to_dict(self) -> Dict:
        """JSON-ready representation."""
        return {name: getattr(self, name) for name in self.__dataclass_fields__}
