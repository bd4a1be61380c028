"""
Author: Perry Radau
Date: 2025-03-16
Brief description: Writes every adaptcast artifact (JSON reports, CSV tables, run manifest,
                   optional Excel workbook) with atomic file replacement
Dependencies: Python 3.8+, numpy, openpyxl (optional)
Usage: ReportWriter(output_dir).write_cohort_report(report)
"""

import csv
import hashlib
import io
import json
import logging
import os
import platform
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from evalharness import CohortReport, PCAResult
from explain import ShapSummary
from featselect import SelectionResult
from preprocess import AnomalyReport

logger = logging.getLogger(__name__)

VERSIONED_PACKAGES = ('numpy', 'scipy', 'pandas', 'scikit-learn', 'openpyxl')


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + '.tmp')
    with open(temp_path, 'wb') as f:
        f.write(payload)
    os.replace(temp_path, path)
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode('utf-8'))


def canonical_json(data: Dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=_json_default)


def config_hash(config: Dict) -> str:
    """sha256 of the canonical JSON form of a config."""
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value) if isinstance(value, (set, frozenset)) else list(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _format(value) -> str:
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def package_versions() -> Dict[str, str]:
    """Installed versions of the numeric stack (missing packages omitted)."""
    from importlib import metadata

    versions = {'python': platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            continue
    return versions


class ReportWriter:
    """Owns the output directory of one subcommand run."""

    def __init__(self, output_dir: Path):
        """Initialize report writer.

        Args:
            output_dir: Directory to write artifacts into (created if needed)
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, filename: str) -> Path:
        return self.output_dir / filename

    def write_json(self, filename: str, data) -> Path:
        text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
        return atomic_write_text(self.path(filename), text + '\n')

    def write_csv(self, filename: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(value) for value in row])
        return atomic_write_text(self.path(filename), buffer.getvalue())

    def write_manifest(self, subcommand: str, config: Dict, seed: int,
                       outputs: Optional[List[str]] = None) -> Path:
        """manifest.json: config hash, seed, subcommand, package versions and the config itself."""
        return self.write_json('manifest.json', {
            'subcommand': subcommand,
            'seed': seed,
            'config_hash': config_hash(config),
            'config': config,
            'versions': package_versions(),
            'outputs': sorted(outputs or []),
        })

    def write_cohort_report(self, report: CohortReport) -> Dict[str, Path]:
        """report.json, predictions_<subject>.csv and radar.csv.

        Returns:
            Dict mapping artifact names to paths
        """
        paths = {'report': self.write_json('report.json', report.to_dict())}
        by_subject: Dict[int, list] = {}
        for fold in report.folds:
            by_subject.setdefault(fold.test_id, []).append(fold)
        for subject_id, folds in sorted(by_subject.items()):
            paths[f'predictions_{subject_id}'] = self.write_predictions(subject_id, folds)
        paths['radar'] = self.write_csv('radar.csv', ['subject', 'metric', 'model', 'mode', 'value'],
                                        ([r['subject'], r['metric'], r['model'], r['mode'], r['value']]
                                         for r in report.radar_rows()))
        if report.failures:
            logger.warning("%d folds failed; see report.json", len(report.failures))
        return paths

    def write_predictions(self, subject_id: int, folds) -> Path:
        """Per-day test predictions with the rolling band and direction agreement."""
        rows = []
        for fold in folds:
            previous = None
            for day, true, pred, std in fold.predictions:
                if previous is None:
                    agrees = ''
                else:
                    agrees = int(np.sign(round(true - previous[0], 9)) == np.sign(round(pred - previous[1], 9)))
                rows.append([fold.model, fold.mode, day, true, pred, pred - std, pred + std, std, agrees])
                previous = (true, pred)
        return self.write_csv(f'predictions_{subject_id}.csv',
                              ['model', 'mode', 'day', 'true', 'pred', 'lower', 'upper', 'std',
                               'direction_correct'], rows)

    def write_pca(self, result: PCAResult, labels: np.ndarray) -> Path:
        header = ['subject'] + [f'pc{i + 1}' for i in range(result.coordinates.shape[1])]
        rows = [[int(label)] + list(coords) for label, coords in zip(labels, result.coordinates)]
        path = self.write_csv('pca.csv', header, rows)
        self.write_json('pca_explained.json', {'explained': result.explained.tolist(),
                                               'eigenvalues': result.eigenvalues.tolist()})
        return path

    def write_ablation(self, rows: List[Dict]) -> Path:
        header = ['mode', 'n'] + [f'{stat}_{metric}' for metric in ('mse', 'mae', 'rmse')
                                  for stat in ('mean', 'median')]
        return self.write_csv('ablation.csv', header, ([row[key] for key in header] for row in rows))

    def write_grid(self, rows: List[Dict]) -> Path:
        header = ['window', 'horizon', 'model', 'mode', 'mean_rmse', 'median_rmse', 'folds']
        return self.write_csv('grid.csv', header, ([row[key] for key in header] for row in rows))

    def write_search(self, rows: List[Dict]) -> Path:
        return self.write_json('search.json', {'trials': rows, 'best': rows[0] if rows else None})

    def write_shap(self, summary: ShapSummary, name: str) -> Path:
        """shap_<name>.csv ranked by mean |phi|."""
        return self.write_csv(f'shap_{name}.csv', ['feature', 'mean_abs', 'signed_mean'],
                              ([r['feature'], r['mean_abs'], r['signed_mean']] for r in summary.rows()))

    def write_history(self, history: Dict) -> Path:
        return self.write_json('history.json', history)

    def write_anomalies(self, reports: Sequence[AnomalyReport]) -> Path:
        return self.write_json('anomalies.json', {r.method: r.to_dict() for r in reports})

    def write_selection(self, result: SelectionResult) -> Path:
        return self.write_json('selection.json', result.to_dict())

    def export_to_excel(self, report: CohortReport, filename: str = "report.xlsx") -> Optional[Path]:
        """Export the cohort report to Excel format.

        Note: Requires openpyxl library. Returns None if not available.

        Args:
            report: LOOCV result
            filename: Output filename

        Returns:
            Path to generated Excel file, or None if openpyxl not available
        """
        try:
            from openpyxl import Workbook
            from openpyxl.styles import Alignment, Font, PatternFill
        except ImportError:
            logger.info("openpyxl not installed; skipping %s", filename)
            return None

        output_path = self.path(filename)

        wb = Workbook()
        wb.remove(wb.active)  # Remove default sheet

        ws_summary = wb.create_sheet("Summary")
        ws_summary.append(["Model", "Mode", "Metric", "Mean", "Median"])
        for model, mode in report.combinations():
            for metric, stats in report.summary(model, mode).items():
                ws_summary.append([model, mode, metric, stats.get('mean'), stats.get('median')])

        ws_folds = wb.create_sheet("Folds")
        ws_folds.append(["Fold", "Test Subject", "Validation Subject", "Model", "Mode", "MSE", "MAE",
                         "RMSE", "Trend r (test)", "Direction accuracy (test)"])
        for fold in report.folds:
            ws_folds.append([fold.fold, fold.test_id, fold.val_id, fold.model, fold.mode,
                             fold.metrics['mse'], fold.metrics['mae'], fold.metrics['rmse'],
                             fold.trend_corr_test, fold.dir_acc_test])

        ws_radar = wb.create_sheet("Radar")
        ws_radar.append(["Subject", "Metric", "Model", "Mode", "Value"])
        for row in report.radar_rows():
            ws_radar.append([row['subject'], row['metric'], row['model'], row['mode'], row['value']])

        for ws in [ws_summary, ws_folds, ws_radar]:
            header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
            header_font = Font(bold=True, color="FFFFFF")
            for cell in ws[1]:
                cell.fill = header_fill
                cell.font = header_font
                cell.alignment = Alignment(horizontal="center")

        temp_path = output_path.with_suffix('.xlsx.tmp')
        wb.save(temp_path)
        os.replace(temp_path, output_path)
        return output_path
