"""
Author: Perry Radau
Date: 2025-03-02
Brief description: Unit tests for cohort module
"""

import unittest

import numpy as np

from cohort import FEATURE_NAMES, Cohort, FoldSplit, SubjectSeries, SynthSpec
from errors import ConfigError, IntegrityError


def make_series(subject_id=0, n_days=4, n_features=3, stage='raw'):
    features = np.arange(n_days * n_features, dtype=float).reshape(n_days, n_features)
    return SubjectSeries(subject_id=subject_id, days=np.arange(n_days), features=features,
                         target=np.linspace(60, 80, n_days), stage=stage)


class TestSubjectSeries(unittest.TestCase):
    """Test cases for SubjectSeries class."""

    def test_schema_has_twenty_three_features(self):
        """Test default feature schema size and uniqueness."""
        self.assertEqual(len(FEATURE_NAMES), 23)
        self.assertEqual(len(set(FEATURE_NAMES)), 23)

    def test_mask_derived_from_nan(self):
        """Test missing mask mirrors NaN cells, target last."""
        features = np.array([[1.0, np.nan], [2.0, 3.0]])
        series = SubjectSeries(subject_id=1, days=[0, 1], features=features, target=[np.nan, 70.0])
        self.assertEqual(series.missing_mask.shape, (2, 3))
        self.assertTrue(series.missing_mask[0, 1])
        self.assertTrue(series.missing_mask[0, 2])
        self.assertFalse(series.missing_mask[1].any())

    def test_infinite_values_become_missing(self):
        """Test non-finite values are stored as NaN."""
        series = SubjectSeries(subject_id=1, days=[0, 1], features=[[np.inf], [1.0]], target=[70.0, -np.inf])
        self.assertTrue(np.isnan(series.features[0, 0]))
        self.assertTrue(np.isnan(series.target[1]))
        self.assertTrue(series.missing_mask[0, 0])

    def test_duplicate_day_rejected(self):
        """Test non-increasing day indices raise an integrity error."""
        with self.assertRaises(IntegrityError):
            SubjectSeries(subject_id=1, days=[0, 1, 1], features=np.zeros((3, 2)), target=np.zeros(3))

    def test_length_mismatch_rejected(self):
        """Test target length must equal the row count."""
        with self.assertRaises(IntegrityError):
            SubjectSeries(subject_id=1, days=[0, 1], features=np.zeros((2, 2)), target=np.zeros(3))

    def test_empty_series_rejected(self):
        """Test a series needs at least one row."""
        with self.assertRaises(IntegrityError):
            SubjectSeries(subject_id=1, days=[], features=np.zeros((0, 2)), target=np.zeros(0))

    def test_unknown_stage_rejected(self):
        """Test stage tag validation."""
        with self.assertRaises(IntegrityError):
            make_series(stage='cooked')

    def test_inconsistent_mask_rejected(self):
        """Test a supplied mask must agree with the NaN cells."""
        with self.assertRaises(IntegrityError):
            SubjectSeries(subject_id=1, days=[0], features=[[1.0]], target=[70.0],
                          missing_mask=np.array([[True, False]]))

    def test_with_values_recomputes_mask(self):
        """Test replacing values clears the mask and sets the stage."""
        series = SubjectSeries(subject_id=1, days=[0, 1], features=[[np.nan], [1.0]], target=[70.0, 71.0])
        filled = series.with_values([[0.5], [1.0]], series.target, stage='imputed')
        self.assertFalse(filled.missing_mask.any())
        self.assertEqual(filled.stage, 'imputed')
        self.assertTrue(series.missing_mask[0, 0])

    def test_select_rows(self):
        """Test row slicing keeps days aligned."""
        series = make_series(n_days=6)
        trimmed = series.select_rows(slice(1, -1))
        self.assertEqual(trimmed.n_days, 4)
        np.testing.assert_array_equal(trimmed.days, [1, 2, 3, 4])
        np.testing.assert_array_equal(trimmed.features[0], series.features[1])


class TestCohort(unittest.TestCase):
    """Test cases for Cohort class."""

    def test_lookup_by_id(self):
        """Test subject lookup and id order."""
        cohort = Cohort(subjects=[make_series(3), make_series(5)], feature_names=['a', 'b', 'c'])
        self.assertEqual(cohort.subject_ids, [3, 5])
        self.assertEqual(cohort.get(5).subject_id, 5)
        with self.assertRaises(KeyError):
            cohort.get(4)

    def test_duplicate_ids_rejected(self):
        """Test subject ids must be unique."""
        with self.assertRaises(IntegrityError):
            Cohort(subjects=[make_series(1), make_series(1)], feature_names=['a', 'b', 'c'])

    def test_schema_mismatch_rejected(self):
        """Test every subject must match the feature schema."""
        with self.assertRaises(IntegrityError):
            Cohort(subjects=[make_series(1, n_features=2)], feature_names=['a', 'b', 'c'])


class TestFoldSplit(unittest.TestCase):
    """Test cases for FoldSplit class."""

    def test_valid_split(self):
        split = FoldSplit(train_ids=frozenset({2, 3}), val_id=1, test_id=0)
        self.assertNotIn(split.test_id, split.train_ids)

    def test_overlap_rejected(self):
        """Test validation and test subjects are disjoint from training."""
        with self.assertRaises(IntegrityError):
            FoldSplit(train_ids=frozenset({1, 2}), val_id=1, test_id=0)
        with self.assertRaises(IntegrityError):
            FoldSplit(train_ids=frozenset({2}), val_id=0, test_id=0)


class TestSynthSpec(unittest.TestCase):
    """Test cases for SynthSpec class."""

    def test_defaults(self):
        spec = SynthSpec()
        self.assertEqual(spec.n_subjects, 16)
        self.assertEqual(spec.n_features, 23)

    def test_collects_all_violations(self):
        """Test every invalid field is reported."""
        with self.assertRaises(ConfigError) as ctx:
            SynthSpec(n_subjects=2, missing_rate=1.5)
        self.assertEqual(ctx.exception.field, 'synthetic')
        self.assertEqual(len(ctx.exception.violations), 2)

    def test_dominant_feature_range(self):
        with self.assertRaises(ConfigError):
            SynthSpec(n_features=4, dominant_feature=4)

    def test_from_dict_rejects_unknown_keys(self):
        with self.assertRaises(ConfigError):
            SynthSpec.from_dict({'n_subjects': 4, 'colour': 'red'})

    def test_dict_round_trip(self):
        spec = SynthSpec(n_subjects=5, seed=9)
        self.assertEqual(SynthSpec.from_dict(spec.to_dict()), spec)


if __name__ == '__main__':
    unittest.main()
