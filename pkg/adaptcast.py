#!/usr/bin/env python3
"""
Author: Perry Radau
Date: 2025-03-17
Brief description: Command-line entry point for the sleep-score forecasting pipeline
Dependencies: Python 3.8+, numpy, scipy, pandas, scikit-learn, openpyxl (optional)
Usage: python adaptcast.py <generate|preprocess|select-features|train|adapt|loocv|explain|grid> [options]
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from adapt import TTA_FUNCTIONS, phase1_config, train_phase1
from checkpoint import CheckpointManager
from cohort import Cohort, FoldSplit
from dataio import generate_cohort, load_cohort, make_folds, save_cohort, trim_ends
from errors import ConfigError, ContractError
from evalharness import (FoldData, PipelineConfig, compute_metrics, cut_windows, pca_project, prepare_fold,
                         random_search, run_ablation, run_grid, run_loocv, scale_split, window_means)
from explain import cohort_summary, explain_windows, shap_summary
from featselect import select_features
from model import init_model, predict
from preprocess import AnomalyReport, ScalerState, preprocess_cohort
from reporter import ReportWriter
from run_config import RunConfig, load_run_config

logger = logging.getLogger('adaptcast')

SUBCOMMANDS = ('generate', 'preprocess', 'select-features', 'train', 'adapt', 'loocv', 'explain', 'grid')

# flag dest -> dotted config key
FLAG_KEYS = {
    'seed': 'seed',
    'allow_custom': 'allow_custom',
    'input': 'data.input',
    'trim': 'data.trim',
    'preprocessed': 'data.preprocessed',
    'iqr_mult': 'preprocess.iqr_multiplier',
    'roll_window': 'preprocess.roll_window',
    'roll_threshold': 'preprocess.roll_threshold',
    'knn_k': 'preprocess.knn_k',
    'n_subjects': 'synthetic.n_subjects',
    'n_days': 'synthetic.n_days',
    'n_features': 'synthetic.n_features',
    'domain_shift_scale': 'synthetic.domain_shift_scale',
    'anomaly_rate': 'synthetic.anomaly_rate',
    'missing_rate': 'synthetic.missing_rate',
    'dominant_feature': 'synthetic.dominant_feature',
    'selection': 'selection.method',
    'target_k': 'selection.target_k',
    'global_selection': 'selection.global',
    'mode': 'adapt.mode',
    'alpha': 'adapt.alpha',
    'tta_method': 'adapt.tta_method',
    'tta_epochs': 'adapt.tta_epochs',
    'max_epochs': 'adapt.max_epochs',
    'batch_size': 'adapt.batch_size',
    'main_loss': 'adapt.main_loss',
    'window': 'evaluation.window',
    'horizon': 'evaluation.horizon',
    'windows': 'evaluation.windows',
    'horizons': 'evaluation.horizons',
    'modes': 'evaluation.modes',
    'trend_window': 'evaluation.trend_window',
    'scaler_policy': 'evaluation.scaler_policy',
    'val_policy': 'evaluation.val_policy',
    'fixed_val_id': 'evaluation.fixed_val_id',
    'jobs': 'evaluation.jobs',
    'background': 'evaluation.background',
    'instances': 'evaluation.instances',
    'subject': 'evaluation.subject',
    'trials': 'search.trials',
    'output_dir': 'output.dir',
    'excel': 'output.excel',
}


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per pipeline stage.

    Returns:
        argparse.ArgumentParser: Configured parser
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None,
                        help='JSON run configuration (default: config.json when present)')
    common.add_argument('--seed', type=int, default=None, help='Master seed (mandatory unless in config)')
    common.add_argument('--input', type=str, default=None,
                        help='Cohort CSV file or directory (default: synthetic cohort)')
    common.add_argument('--output-dir', type=str, default=None, help='Directory for outputs')
    common.add_argument('--allow-custom', action='store_const', const=True, default=None,
                        help='Allow values outside the documented grids and search space')
    common.add_argument('--trim-ends', dest='trim', action='store_const', const=True, default=None,
                        help='Drop the first and last day of every subject (default)')
    common.add_argument('--no-trim', dest='trim', action='store_const', const=False,
                        help='Keep the first and last day of every subject')
    common.add_argument('--preprocessed', action='store_const', const=True, default=None,
                        help='--input is already cleaned (output of the preprocess subcommand)')
    common.add_argument('--jobs', type=int, default=None, help='Worker processes (default: $ADAPTCAST_JOBS or 1)')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    common.add_argument('-q', '--quiet', action='store_true', help='Only warnings and errors')

    synthetic = common.add_argument_group('synthetic cohort')
    synthetic.add_argument('--n-subjects', type=int, default=None)
    synthetic.add_argument('--n-days', type=int, default=None)
    synthetic.add_argument('--n-features', type=int, default=None)
    synthetic.add_argument('--domain-shift-scale', type=float, default=None)
    synthetic.add_argument('--anomaly-rate', type=float, default=None)
    synthetic.add_argument('--missing-rate', type=float, default=None)
    synthetic.add_argument('--dominant-feature', type=int, default=None)

    pipeline = argparse.ArgumentParser(add_help=False)
    cleaning = pipeline.add_argument_group('cleaning')
    cleaning.add_argument('--iqr-mult', type=float, default=None, help='IQR fence multiplier (default 1.0)')
    cleaning.add_argument('--roll-window', type=int, default=None, help='Rolling-mean window in days (default 5)')
    cleaning.add_argument('--roll-threshold', type=float, default=None,
                          help='Deviation from the rolling mean flagged as anomalous (default 30)')
    cleaning.add_argument('--knn-k', type=int, default=None, help='KNN imputation neighbours (default 3)')

    pipeline.add_argument('--selection', '--method', dest='selection', default=None,
                          help='correlation | mi | rfe | ensemble')
    pipeline.add_argument('--target-k', type=int, default=None, help='Features kept (default 15)')
    pipeline.add_argument('--global', dest='global_selection', action='store_const', const=True, default=None,
                          help='Select features once on the whole cohort instead of per fold')
    pipeline.add_argument('--window', type=int, default=None, help='Input days w')
    pipeline.add_argument('--horizon', type=int, default=None, help='Forecast days delta')
    pipeline.add_argument('--mode', default=None, help='none | train-only | test-only | both')
    pipeline.add_argument('--alpha', type=float, default=None, help='Domain-loss weight')
    pipeline.add_argument('--tta-method', default=None, help='consistency | entropy | temporal')
    pipeline.add_argument('--tta-epochs', type=int, default=None,
                          help='Test-time adaptation epochs (10 by default; 20 is also documented)')
    pipeline.add_argument('--max-epochs', type=int, default=None, help='Phase-1 epoch cap')
    pipeline.add_argument('--batch-size', type=int, default=None)
    pipeline.add_argument('--main-loss', default=None, help='mse | rmse')
    pipeline.add_argument('--scaler-policy', default=None, help='per-split | train')
    pipeline.add_argument('--val-policy', default=None, help='next-subject | fixed-id')
    pipeline.add_argument('--fixed-val-id', type=int, default=None)
    pipeline.add_argument('--trend-window', type=int, default=None)

    parser = argparse.ArgumentParser(
        description='adaptcast - individualized sleep-score forecasting with domain adaptation'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    subparsers.add_parser('generate', parents=[common], help='Write a seeded synthetic cohort CSV')
    subparsers.add_parser('preprocess', parents=[common, pipeline],
                          help='Clean a cohort (anomalies, imputation, smoothing)')
    subparsers.add_parser('select-features', parents=[common, pipeline],
                          help='Rank and select features on the whole cohort')

    train = subparsers.add_parser('train', parents=[common, pipeline],
                                  help='Phase-1 training for one held-out subject; saves a checkpoint')
    train.add_argument('--subject', type=int, default=None, help='Held-out subject (default: first id)')

    adapt = subparsers.add_parser('adapt', parents=[common, pipeline],
                                  help='Test-time adaptation of a checkpoint on its held-out subject')
    adapt.add_argument('--checkpoint', type=Path, default=None,
                       help='Checkpoint directory (default: <output-dir>/checkpoint)')

    loocv = subparsers.add_parser('loocv', parents=[common, pipeline], help='Leave-one-subject-out evaluation')
    loocv.add_argument('--modes', type=_str_list, default=None, help='Comma-separated modes per fold')
    loocv.add_argument('--ablation', action='store_true', help='Also write ablation.csv (four modes)')
    loocv.add_argument('--trials', type=int, default=None, help='Random-search trials (0 = none)')
    loocv.add_argument('--excel', action='store_const', const=True, default=None, help='Also write report.xlsx')

    explain = subparsers.add_parser('explain', parents=[common, pipeline], help='Kernel SHAP attributions')
    explain.add_argument('--subject', type=int, default=None, help='Explain one subject (default: all)')
    explain.add_argument('--background', type=int, default=None, help='Background windows (default 50)')
    explain.add_argument('--instances', type=int, default=None, help='Explained windows (default 100)')
    explain.add_argument('--checkpoint', type=Path, default=None, help='Use a saved model instead of training')

    grid = subparsers.add_parser('grid', parents=[common, pipeline], help='LOOCV RMSE over the w x delta grid')
    grid.add_argument('--windows', type=_int_list, default=None, help='Comma-separated w values')
    grid.add_argument('--horizons', type=_int_list, default=None, help='Comma-separated delta values')
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """Dotted config keys for every flag that was given."""
    values = vars(args)
    return {key: values[dest] for dest, key in FLAG_KEYS.items() if values.get(dest) is not None}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config_path = args.config
    if config_path is None and Path('config.json').exists():
        config_path = Path('config.json')
    return load_run_config(config_path, collect_overrides(args))


def obtain_cohort(config: RunConfig) -> Cohort:
    """Cohort from --input, or a synthetic cohort from the config.

    Raises:
        ConfigError: Input path does not exist (field 'input')
    """
    trim = config['data']['trim']
    if config.input_path is not None:
        if not config.input_path.exists():
            raise ConfigError(f"Input not found: {config.input_path}", field='input')
        return load_cohort(config.input_path, schema=config['data']['schema'], trim=trim)
    cohort = generate_cohort(config.synth_spec())
    return trim_ends(cohort) if trim else cohort


def cleaned_cohort(config: RunConfig) -> Tuple[Cohort, List[AnomalyReport]]:
    """Run the cleaning pipeline, or adopt an input the preprocess subcommand already cleaned.

    Raises:
        ContractError: A --preprocessed input still has missing cells
    """
    if not config['data']['preprocessed']:
        result = preprocess_cohort(obtain_cohort(config), config.preprocess_config())
        return result.cohort, result.reports
    if config.input_path is None:
        raise ConfigError("--preprocessed needs --input", field='input')
    if not config.input_path.exists():
        raise ConfigError(f"Input not found: {config.input_path}", field='input')
    # trimming already happened before the file was written
    cohort = load_cohort(config.input_path, schema=config['data']['schema'], trim=False)
    subjects = []
    for series in cohort.subjects:
        if series.missing_mask.any():
            raise ContractError(f"Subject {series.subject_id}: preprocessed input has missing cells")
        subjects.append(series.with_values(series.features, series.target, stage='smoothed'))
    return cohort.replace_subjects(subjects), []


def fold_for_subject(cohort: Cohort, pipeline: PipelineConfig, subject_id: Optional[int]) -> Tuple[int, FoldSplit]:
    folds = make_folds(cohort, pipeline.val_policy, pipeline.fixed_val_id)
    if subject_id is None:
        return 0, folds[0]
    for index, split in enumerate(folds):
        if split.test_id == subject_id:
            return index, split
    raise ConfigError(f"Unknown subject id: {subject_id}", field='subject')


def _train_fold(cohort: Cohort, pipeline: PipelineConfig, subject_id: Optional[int],
                selected: Optional[List[int]] = None):
    """Phase 1 on the fold holding out ``subject_id``."""
    fold_index, split = fold_for_subject(cohort, pipeline, subject_id)
    data = prepare_fold(cohort, split, fold_index, pipeline, selected)
    cfg = replace(pipeline.adapt, seed=data.seed)
    params = init_model(data.model_config, seed=data.seed)
    trained, history = train_phase1(params, data.train, data.val, phase1_config(cfg))
    return data, trained, history


def _checkpoint_metadata(data: FoldData, pipeline: PipelineConfig, cfg_mode: str) -> Dict:
    return {
        'fold_index': data.fold_index,
        'test_id': data.split.test_id,
        'val_id': data.split.val_id,
        'selected': data.selected,
        'feature_names': data.feature_names,
        'feature_scaler': data.feature_state.to_dict(),
        'target_scaler': data.target_state.to_dict(),
        'scaler_policy': pipeline.scaler_policy,
        'window': pipeline.window,
        'horizon': pipeline.horizon,
        'mode': cfg_mode,
    }


# subcommands

def cmd_generate(config: RunConfig, writer: ReportWriter) -> List[str]:
    cohort = generate_cohort(config.synth_spec())
    path = save_cohort(cohort, writer.path('cohort.csv'))
    print(f"Generated {len(cohort.subjects)} subjects x {cohort.subjects[0].n_days} days -> {path}")
    return ['cohort.csv']


def cmd_preprocess(config: RunConfig, writer: ReportWriter) -> List[str]:
    result = preprocess_cohort(obtain_cohort(config), config.preprocess_config())
    save_cohort(result.cohort, writer.path('preprocessed.csv'))
    writer.write_anomalies(result.reports)
    for report in result.reports:
        print(f"  {report.method}: {report.total} cells flagged")
    return ['preprocessed.csv', 'anomalies.json']


def cmd_select_features(config: RunConfig, writer: ReportWriter) -> List[str]:
    cohort = cleaned_cohort(config)[0]
    X = np.vstack([s.features for s in cohort.subjects])
    y = np.concatenate([s.target for s in cohort.subjects])
    selection = config['selection']
    result = select_features(X, y, selection['method'], selection['target_k'], seed=config.seed,
                             feature_names=cohort.feature_names, n_jobs=config.jobs)
    writer.write_selection(result)
    print(f"Selected ({result.method}): {', '.join(result.selected_names)}")
    return ['selection.json']


def cmd_train(config: RunConfig, writer: ReportWriter, subject: Optional[int]) -> List[str]:
    pipeline = config.pipeline_config()
    cohort = cleaned_cohort(config)[0]
    data, trained, history = _train_fold(cohort, pipeline, subject)
    CheckpointManager(writer.path('checkpoint')).save(
        trained, _checkpoint_metadata(data, pipeline, pipeline.adapt.mode))
    writer.write_history(history.to_dict())
    print(f"Trained on {len(data.split.train_ids)} subjects (test {data.split.test_id}, "
          f"validation {data.split.val_id}); best epoch {history.best_epoch}")
    return ['checkpoint/params.bin', 'checkpoint/params.json', 'history.json']


def _subject_windows(cohort: Cohort, subject_id: int, selected: Sequence[int], metadata: Dict,
                     pipeline: PipelineConfig):
    """Windows of one subject scaled the way its checkpoint prescribes."""
    states = None
    if metadata['scaler_policy'] == 'train':
        states = (ScalerState.from_dict(metadata['feature_scaler']),
                  ScalerState.from_dict(metadata['target_scaler']))
    scaled, _ = scale_split([cohort.get(subject_id)], selected, states)
    return cut_windows(scaled, pipeline, clip=states is not None)


def cmd_adapt(config: RunConfig, writer: ReportWriter, checkpoint_dir: Optional[Path]) -> List[str]:
    manager = CheckpointManager(checkpoint_dir or writer.path('checkpoint'))
    if not manager.exists():
        raise ConfigError(f"No checkpoint in {manager.checkpoint_dir}", field='checkpoint')
    params, metadata = manager.load()
    pipeline = config.pipeline_config(window=metadata['window'], horizon=metadata['horizon'],
                                      scaler_policy=metadata['scaler_policy'])
    cohort = cleaned_cohort(config)[0]
    windows = _subject_windows(cohort, metadata['test_id'], metadata['selected'], metadata, pipeline)
    if len(windows) == 0:
        raise ContractError(f"Subject {metadata['test_id']} has no windows to adapt on")

    cfg = pipeline.adapt
    result = None
    adapted = params
    if cfg.uses_tta:
        result = TTA_FUNCTIONS[cfg.tta_method](params, windows.x, cfg)
        adapted = result.params
    dtype = next(iter(adapted.weights.values())).dtype
    predictions = predict(adapted, windows.x.astype(dtype))
    metrics = compute_metrics(windows.y, predictions)

    CheckpointManager(writer.path('adapted')).save(adapted, {**metadata, 'mode': cfg.mode,
                                                             'tta_method': cfg.tta_method})
    writer.write_json('adapt.json', {
        'test_id': metadata['test_id'], 'mode': cfg.mode, 'tta_method': cfg.tta_method,
        'metrics': metrics, 'skipped': bool(result.skipped) if result else None,
        'epoch_losses': list(result.epoch_losses) if result else [],
    })
    print(f"Subject {metadata['test_id']}: RMSE {metrics['rmse']:.4f} after {cfg.mode} adaptation")
    return ['adapted/params.bin', 'adapted/params.json', 'adapt.json']


def cmd_loocv(config: RunConfig, writer: ReportWriter, ablation: bool) -> List[str]:
    pipeline = config.pipeline_config()
    cohort, anomaly_reports = cleaned_cohort(config)
    outputs = ['report.json', 'radar.csv', 'anomalies.json', 'pca.csv', 'pca_explained.json', 'history.json']
    writer.write_anomalies(anomaly_reports)

    report = run_loocv(cohort, pipeline)
    paths = writer.write_cohort_report(report)
    outputs.extend(f'{name}.csv' for name in paths if name.startswith('predictions_'))
    writer.write_history({f'{f.fold}/{f.model}/{f.mode}': f.history for f in report.folds})

    means, labels = window_means(cohort, pipeline.window)
    writer.write_pca(pca_project(means, dims=2, seed=config.seed), labels)

    if ablation:
        writer.write_ablation(run_ablation(cohort, pipeline, seeds=config['evaluation']['ablation_seeds']))
        outputs.append('ablation.csv')
    if config['search']['trials'] > 0:
        writer.write_search(random_search(cohort, pipeline, config['search']['trials'],
                                          seed=config['search']['seed']))
        outputs.append('search.json')
    if config['output']['excel'] and writer.export_to_excel(report) is not None:
        outputs.append('report.xlsx')

    print(f"\nLOOCV over {len({f.test_id for f in report.folds})} subjects "
          f"({len(report.failures)} failed folds):")
    for model, mode in report.combinations():
        stats = report.summary(model, mode)
        print(f"  {model:8s} {mode:10s} RMSE mean {stats['rmse']['mean']:.4f} "
              f"median {stats['rmse']['median']:.4f}")
    return outputs


def _explain_subject(params, data: FoldData, metadata: Dict, cohort: Cohort, pipeline: PipelineConfig,
                     config: RunConfig):
    """SHAP summary of the held-out subject of one fold, or None when it has no windows."""
    evaluation = config['evaluation']
    subject_id = data.split.test_id
    windows = _subject_windows(cohort, subject_id, data.selected, metadata, pipeline)
    if len(windows) == 0:
        logger.warning("Subject %d has no windows; skipped", subject_id)
        return None
    attributions = explain_windows(params, data.train.x, windows.x, data.feature_names,
                                   n_background=evaluation['background'],
                                   n_instances=evaluation['instances'], seed=config.seed)
    return shap_summary(attributions, subject_id=subject_id)


def cmd_explain(config: RunConfig, writer: ReportWriter, checkpoint_dir: Optional[Path]) -> List[str]:
    """Explain held-out subjects, each with the model of the fold that excluded it."""
    requested = config['evaluation']['subject']
    pipeline = config.pipeline_config()
    cohort = cleaned_cohort(config)[0]

    fitted = []
    if checkpoint_dir is not None:
        params, metadata = CheckpointManager(checkpoint_dir).load()
        if requested is not None and requested != metadata['test_id']:
            raise ConfigError(f"Checkpoint holds out subject {metadata['test_id']}, not {requested}",
                              field='subject')
        pipeline = replace(pipeline, window=metadata['window'], horizon=metadata['horizon'],
                           scaler_policy=metadata['scaler_policy'])
        fold_index, split = fold_for_subject(cohort, pipeline, metadata['test_id'])
        fitted.append((params, prepare_fold(cohort, split, fold_index, pipeline, metadata['selected']), metadata))
    else:
        subjects = [requested] if requested is not None else cohort.subject_ids
        for subject_id in subjects:
            data, params, _ = _train_fold(cohort, pipeline, subject_id)
            fitted.append((params, data, _checkpoint_metadata(data, pipeline, pipeline.adapt.mode)))

    outputs = []
    summaries = []
    for params, data, metadata in fitted:
        summary = _explain_subject(params, data, metadata, cohort, pipeline, config)
        if summary is None:
            continue
        writer.write_shap(summary, str(data.split.test_id))
        outputs.append(f'shap_{data.split.test_id}.csv')
        summaries.append(summary)

    cohort_level = cohort_summary(summaries)
    writer.write_shap(cohort_level, 'cohort')
    outputs.append('shap_cohort.csv')
    print("Top features (cohort): " + ', '.join(cohort_level.top(5)))
    return outputs


def cmd_grid(config: RunConfig, writer: ReportWriter) -> List[str]:
    pipeline = config.pipeline_config()
    cohort = cleaned_cohort(config)[0]
    evaluation = config['evaluation']
    rows = run_grid(cohort, pipeline, windows=evaluation['windows'], horizons=evaluation['horizons'])
    writer.write_grid(rows)
    print(f"Grid: {len(rows)} rows -> {writer.path('grid.csv')}")
    return ['grid.csv']


def run_command(args: argparse.Namespace, config: RunConfig) -> None:
    writer = ReportWriter(config.output_dir)
    command = args.command
    if command == 'generate':
        outputs = cmd_generate(config, writer)
    elif command == 'preprocess':
        outputs = cmd_preprocess(config, writer)
    elif command == 'select-features':
        outputs = cmd_select_features(config, writer)
    elif command == 'train':
        outputs = cmd_train(config, writer, config['evaluation']['subject'])
    elif command == 'adapt':
        outputs = cmd_adapt(config, writer, args.checkpoint)
    elif command == 'loocv':
        outputs = cmd_loocv(config, writer, args.ablation)
    elif command == 'explain':
        outputs = cmd_explain(config, writer, args.checkpoint)
    else:
        outputs = cmd_grid(config, writer)
    writer.write_manifest(command, config.to_dict(), config.seed, outputs)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point.

    Returns:
        int: 0 on success, 1 on runtime failure, 2 on invalid configuration
    """
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = resolve_config(args)
        run_command(args, config)
        return 0
    except ConfigError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"Error: File not found - {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        logger.debug("Traceback", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
