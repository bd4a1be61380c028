"""
Author: Perry Radau
Date: 2025-03-17
Brief description: Unit tests for the adaptcast command-line interface
"""

import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import adaptcast
from adaptcast import SUBCOMMANDS, build_parser, collect_overrides, main

TINY_CONFIG = {
    'seed': 0,
    'allow_custom': True,
    'data': {'schema': ['TK', 'TS', 'TD', 'HA']},
    'synthetic': {'n_subjects': 4, 'n_days': 26, 'n_features': 4, 'anomaly_rate': 0.0, 'missing_rate': 0.0},
    'selection': {'method': 'correlation', 'target_k': 3},
    'model': {'cnn_hidden': 4, 'lstm_hidden': 8},
    'adapt': {'max_epochs': 2, 'tta_epochs': 1, 'batch_size': 8},
    'evaluation': {'background': 5, 'instances': 2},
}


class TestAdaptcastCli(unittest.TestCase):
    """Test cases for the command-line entry point."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config_path = self.temp_dir / 'config.json'
        self.config_path.write_text(json.dumps(TINY_CONFIG))
        self.output_dir = self.temp_dir / 'out'

    def tearDown(self):
        """Clean up test fixtures."""
        import shutil
        shutil.rmtree(self.temp_dir)

    def run_cli(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def common(self):
        return ['--config', str(self.config_path), '--output-dir', str(self.output_dir), '--quiet']

    def test_help_exits_zero(self):
        for argv in (['--help'], *([command, '--help'] for command in SUBCOMMANDS)):
            with contextlib.redirect_stdout(io.StringIO()):
                with self.assertRaises(SystemExit) as ctx:
                    main(argv)
            self.assertEqual(ctx.exception.code, 0, argv)

    def test_overrides_only_given_flags(self):
        args = build_parser().parse_args(['loocv', '--seed', '3', '--window', '5', '--modes', 'none,both'])
        self.assertEqual(collect_overrides(args), {'seed': 3, 'evaluation.window': 5,
                                                   'evaluation.modes': ['none', 'both']})

    def test_missing_input_exits_two(self):
        code, _, stderr = self.run_cli('preprocess', *self.common(), '--input', str(self.temp_dir / 'absent.csv'))
        self.assertEqual(code, 2)
        error = json.loads(stderr.strip().splitlines()[-1])
        self.assertEqual(error['field'], 'input')
        self.assertEqual(error['error'], 'config')

    def test_invalid_config_exits_two(self):
        bad = self.temp_dir / 'bad.json'
        bad.write_text(json.dumps({'seed': 0, 'evaluation': {'window': 4}}))
        code, _, stderr = self.run_cli('generate', '--config', str(bad), '--output-dir', str(self.output_dir))
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])['field'], 'evaluation')

    def test_generate(self):
        code, stdout, _ = self.run_cli('generate', *self.common(), '--seed', '7', '--n-subjects', '3')
        self.assertEqual(code, 0)
        self.assertIn('Generated 3 subjects', stdout)
        lines = (self.output_dir / 'cohort.csv').read_text().splitlines()
        self.assertEqual(len(lines), 1 + 3 * 26)
        manifest = json.loads((self.output_dir / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 7)
        self.assertEqual(manifest['subcommand'], 'generate')
        self.assertEqual(manifest['outputs'], ['cohort.csv'])

    def test_preprocess_generated_input(self):
        self.assertEqual(self.run_cli('generate', *self.common())[0], 0)
        cohort_path = self.output_dir / 'cohort.csv'
        processed_dir = self.temp_dir / 'processed'
        code, _, stderr = self.run_cli('preprocess', '--config', str(self.config_path), '--input', str(cohort_path),
                                       '--output-dir', str(processed_dir), '--quiet')
        self.assertEqual(code, 0, stderr)
        self.assertTrue((processed_dir / 'preprocessed.csv').exists())
        anomalies = json.loads((processed_dir / 'anomalies.json').read_text())
        self.assertEqual(set(anomalies), {'iqr', 'rolling'})

        code, stdout, stderr = self.run_cli('select-features', '--config', str(self.config_path), '--quiet',
                                            '--input', str(processed_dir / 'preprocessed.csv'), '--preprocessed',
                                            '--method', 'mi', '--output-dir', str(self.temp_dir / 'selected'))
        self.assertEqual(code, 0, stderr)
        self.assertIn('Selected (mi)', stdout)

    def test_preprocessed_needs_input(self):
        code, _, stderr = self.run_cli('select-features', *self.common(), '--preprocessed')
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])['field'], 'input')

    def test_select_features(self):
        code, stdout, stderr = self.run_cli('select-features', *self.common())
        self.assertEqual(code, 0, stderr)
        selection = json.loads((self.output_dir / 'selection.json').read_text())
        self.assertEqual(len(selection['selected']), 3)
        self.assertIn('Selected (correlation)', stdout)

    def test_train_then_adapt(self):
        code, _, stderr = self.run_cli('train', *self.common(), '--subject', '2')
        self.assertEqual(code, 0, stderr)
        self.assertTrue((self.output_dir / 'checkpoint' / 'params.bin').exists())

        code, _, stderr = self.run_cli('adapt', *self.common())
        self.assertEqual(code, 0, stderr)
        result = json.loads((self.output_dir / 'adapt.json').read_text())
        self.assertEqual(result['test_id'], 2)
        self.assertEqual(len(result['epoch_losses']), 1)
        self.assertTrue((self.output_dir / 'adapted' / 'params.json').exists())

    def test_adapt_without_checkpoint(self):
        code, _, stderr = self.run_cli('adapt', *self.common())
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])['field'], 'checkpoint')

    def test_explain_one_subject(self):
        code, stdout, stderr = self.run_cli('explain', *self.common(), '--subject', '1')
        self.assertEqual(code, 0, stderr)
        self.assertTrue((self.output_dir / 'shap_1.csv').exists())
        self.assertTrue((self.output_dir / 'shap_cohort.csv').exists())
        self.assertIn('Top features', stdout)

    def test_explain_trains_one_model_per_subject(self):
        with patch('adaptcast._train_fold', wraps=adaptcast._train_fold) as train_fold:
            code, _, stderr = self.run_cli('explain', *self.common())
        self.assertEqual(code, 0, stderr)
        held_out = sorted(call.args[2] for call in train_fold.call_args_list)
        self.assertEqual(held_out, [0, 1, 2, 3])
        for subject_id in held_out:
            self.assertTrue((self.output_dir / f'shap_{subject_id}.csv').exists())

    def test_explain_checkpoint_of_other_subject(self):
        self.assertEqual(self.run_cli('train', *self.common(), '--subject', '2')[0], 0)
        code, _, stderr = self.run_cli('explain', *self.common(), '--subject', '1',
                                       '--checkpoint', str(self.output_dir / 'checkpoint'))
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])['field'], 'subject')

    def test_loocv_reports_are_byte_identical(self):
        first, second = self.temp_dir / 'run1', self.temp_dir / 'run2'
        for output_dir in (first, second):
            code, _, stderr = self.run_cli('loocv', '--config', str(self.config_path), '--quiet',
                                           '--output-dir', str(output_dir))
            self.assertEqual(code, 0, stderr)
        names = sorted(p.name for p in first.iterdir() if p.name != 'manifest.json')
        self.assertIn('report.json', names)
        self.assertIn('radar.csv', names)
        self.assertEqual(names, sorted(p.name for p in second.iterdir() if p.name != 'manifest.json'))
        for name in names:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

    def test_unknown_subject(self):
        code, _, stderr = self.run_cli('train', *self.common(), '--subject', '99')
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])['field'], 'subject')


if __name__ == '__main__':
    unittest.main()
