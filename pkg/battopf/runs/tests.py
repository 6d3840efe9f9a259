import csv
import io
import json
import shutil
import tempfile
from pathlib import Path
from unittest import mock

from django.test import Client, SimpleTestCase, TestCase
from django.urls import reverse

from battopf.exceptions import CaseParseError
from battopf.grid.tests import FIXTURES, load_fixture_case
from battopf.planning.driver import SolverOptions, run_cutting_plane
from .cli import EXIT_DATA, EXIT_FAILED, EXIT_INCOMPLETE, EXIT_OK, EXIT_USAGE, run_cli
from .models import IterationRecord, SolveRun, ValidationRun
from .reports import ITERATION_HEADER, iteration_csv, parse_results, results_document, summary_table
from .tasks import execute_run, solve_run_task

CASE9 = str(FIXTURES / 'case9.m')
CASE9_SCENARIO = str(FIXTURES / 'case9_scenario.json')
TOY3 = str(FIXTURES / 'toy3.m')
TOY3_SCENARIO = str(FIXTURES / 'toy3_scenario.json')


def cli(*argv):
    """Run the CLI and return (exit code, stdout, stderr)."""
    stdout, stderr = io.StringIO(), io.StringIO()
    code = run_cli(list(argv), stdout=stdout, stderr=stderr)
    return code, stdout.getvalue(), stderr.getvalue()


class TemporaryDirectoryMixin:

    def make_tmp(self):
        tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, tmp, ignore_errors=True)
        return tmp


class ReportTests(SimpleTestCase):

    def setUp(self):
        case = load_fixture_case('toy3.m', 'toy3_scenario.json')
        options = SolverOptions.from_settings(threads=1)
        self.report = run_cutting_plane(case, options)
        self.document = results_document(self.report, case, options)

    def test_results_keys(self):
        for key in ('status', 'objective', 'Pg_mw', 'lambda', 'iterations', 'cuts', 'time_s', 'T', 'n', 'm'):
            self.assertIn(key, self.document)
        self.assertEqual(set(self.document['cuts']), {'line', 'speed', 'charge', 'disjunctive'})
        self.assertEqual(self.document['T'], 2)
        self.assertEqual(self.document['responds_to'], [[1]])
        self.assertEqual([entry['t'] for entry in self.document['lambda']], [1, 2])
        json.dumps(self.document)

    def test_parse_round_trip(self):
        again = parse_results(json.dumps(self.document))
        self.assertEqual(again['Pg_mw'], self.document['Pg_mw'])

    def test_iteration_csv(self):
        rows = list(csv.reader(io.StringIO(iteration_csv(self.report.log))))
        self.assertEqual(rows[0], ITERATION_HEADER)
        self.assertEqual(len(rows), self.report.iterations + 1)

    def test_bad_results(self):
        with self.assertRaises(CaseParseError):
            parse_results('{"status": "optimal"')
        with self.assertRaisesMessage(CaseParseError, 'Pg_mw'):
            parse_results('{"status": "optimal", "objective": 1, "lambda": [], "iterations": 1, '
                          '"cuts": {}, "time_s": 0}')

    def test_summary_table(self):
        document = {'T': 6, 'n': 1200, 'm': 3400, 'objective': 2488.054, 'iterations': 17, 'time_s': 366.2}
        self.assertEqual(
            summary_table([document], 'csv'),
            'T,n,m,Cost,Iterations,Time\n6,1200,3400,2488.05,17,366.20\n',
        )
        markdown = summary_table([document, dict(document, T=8, objective=None)], 'md').splitlines()
        self.assertEqual(markdown[0], '| T | n | m | Cost | Iterations | Time |')
        self.assertEqual(len(markdown), 4)
        self.assertIn('| 8 | 1200 | 3400 | - |', markdown[3])
        with self.assertRaises(ValueError):
            summary_table([document], 'html')


class CommandLineTests(TemporaryDirectoryMixin, SimpleTestCase):

    def setUp(self):
        self.tmp = self.make_tmp()
        self.results = self.tmp / 'results.json'

    def _scenario_with(self, name, **battery_changes):
        data = json.loads(Path(CASE9_SCENARIO).read_text())
        for battery in data['batteries']:
            battery.update(battery_changes)
        path = self.tmp / name
        path.write_text(json.dumps(data))
        return str(path)

    def _results_with_lambdas(self, lambda4, lambda9):
        code, _, _ = cli('solve', CASE9, CASE9_SCENARIO, '--out', str(self.results), '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        document = json.loads(self.results.read_text())
        document['lambda'][0]['entries'] = [[lambda4, lambda4], [lambda9, lambda9]]
        path = self.tmp / 'tampered.json'
        path.write_text(json.dumps(document))
        return str(path)

    def test_solve_and_validate(self):
        log = self.tmp / 'iterations.csv'
        code, out, _ = cli('solve', CASE9, CASE9_SCENARIO, '--out', str(self.results), '--log', str(log),
                           '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('optimal', out)
        document = json.loads(self.results.read_text())
        self.assertEqual(document['status'], 'optimal')
        self.assertAlmostEqual(document['objective'], 2726.40, delta=0.01 * 2726.40)
        rows = list(csv.reader(log.open()))
        self.assertEqual(rows[0], ITERATION_HEADER)
        self.assertEqual(len(rows) - 1, document['iterations'])

        code, out, _ = cli('validate', CASE9, CASE9_SCENARIO, str(self.results), '--samples', '10000',
                           '--seed', '42')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('validation passed', out)

        code, out, _ = cli('report', str(self.results), '--format', 'md')
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith('| T | n | m | Cost | Iterations | Time |'))

    def test_results_on_stdout(self):
        code, out, _ = cli('solve', TOY3, TOY3_SCENARIO, '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out)['status'], 'optimal')

    def test_missing_case_is_a_data_error(self):
        code, _, err = cli('solve', str(self.tmp / 'missing.m'), CASE9_SCENARIO)
        self.assertEqual(code, EXIT_DATA)
        self.assertIn('missing.m', err)

    def test_malformed_scenario_is_a_data_error(self):
        path = self.tmp / 'broken.json'
        path.write_text('{"T": 1,')
        self.assertEqual(cli('solve', CASE9, str(path))[0], EXIT_DATA)

    def test_usage_errors(self):
        self.assertEqual(cli()[0], EXIT_USAGE)
        self.assertEqual(cli('optimize', CASE9)[0], EXIT_USAGE)
        self.assertEqual(cli('solve', CASE9)[0], EXIT_USAGE)
        self.assertEqual(cli('solve', CASE9, CASE9_SCENARIO, '--max-iter', '0')[0], EXIT_USAGE)
        self.assertEqual(cli('report', CASE9, '--format', 'html')[0], EXIT_USAGE)

    def test_infeasible_exit_code(self):
        scenario = self._scenario_with('empty.json', initial_mwh=0.0)
        code, _, err = cli('solve', CASE9, scenario, '--out', str(self.results), '--threads', '1')
        self.assertEqual(code, EXIT_FAILED)
        self.assertIn('infeasible', err)
        document = json.loads(self.results.read_text())
        self.assertEqual(document['status'], 'infeasible')
        self.assertIsNone(document['Pg_mw'])
        self.assertTrue(document['trail'])
        # no plan to check
        self.assertEqual(cli('validate', CASE9, scenario, str(self.results))[0], EXIT_DATA)

    def test_iteration_limit_exit_code(self):
        code, _, _ = cli('solve', CASE9, CASE9_SCENARIO, '--out', str(self.results), '--max-iter', '1')
        self.assertEqual(code, EXIT_INCOMPLETE)
        self.assertEqual(json.loads(self.results.read_text())['status'], 'iteration_limit')

    def test_validate_failing_plan(self):
        tampered = self._results_with_lambdas(0.1, 0.9)
        code, _, err = cli('validate', CASE9, CASE9_SCENARIO, tampered, '--samples', '2000')
        self.assertEqual(code, EXIT_FAILED)
        self.assertIn('range', err)

    def test_validate_rejects_unbalanced_plan(self):
        tampered = self._results_with_lambdas(0.5, 0.6)
        self.assertEqual(cli('validate', CASE9, CASE9_SCENARIO, tampered)[0], EXIT_DATA)

    def test_validate_sample_count(self):
        self.assertEqual(cli('validate', CASE9, CASE9_SCENARIO, CASE9_SCENARIO, '--samples', '0')[0], EXIT_USAGE)

    def test_validation_report_file(self):
        cli('solve', TOY3, TOY3_SCENARIO, '--out', str(self.results), '--threads', '1')
        out = self.tmp / 'validation.json'
        code, _, _ = cli('validate', TOY3, TOY3_SCENARIO, str(self.results), '--samples', '300', '--out', str(out))
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out.read_text())
        self.assertTrue(report['passed'])
        self.assertEqual(report['samples'], 300)

    def test_scalability_table(self):
        code, out, _ = cli(
            'scalability', '--periods', '2', '3', '--buses', '40', '--branches', '55', '--generators', '6',
            '--wind-farms', '4', '--batteries', '3', '--threads', '1',
        )
        self.assertEqual(code, EXIT_OK)
        rows = list(csv.reader(io.StringIO(out)))
        self.assertEqual(rows[0], ['T', 'n', 'm', 'Cost', 'Iterations', 'Time'])
        self.assertEqual([row[0] for row in rows[1:]], ['2', '3'])
        self.assertLess(int(rows[1][1]), int(rows[2][1]))

    def test_scalability_needs_positive_horizons(self):
        self.assertEqual(cli('scalability', '--periods', '0')[0], EXIT_USAGE)


class RecordedRunTests(TemporaryDirectoryMixin, TestCase):

    def setUp(self):
        self.tmp = self.make_tmp()
        self.client = Client()

    def test_record_and_review(self):
        code, _, err = cli('solve', TOY3, TOY3_SCENARIO, '--out', str(self.tmp / 'r.json'), '--record',
                           '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        self.assertIn('Recorded run', err)
        run = SolveRun.objects.get()
        self.assertEqual(run.status, SolveRun.Status.OPTIMAL)
        self.assertTrue(run.is_robust)
        self.assertEqual(run.case_name, 'toy3')
        self.assertEqual(run.periods, 2)
        self.assertEqual(run.iteration_log.count(), run.iterations)
        self.assertEqual(str(run), 'toy3 (Optimal)')

        response = self.client.get(reverse('runs:detail', args=[run.id]))
        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual(data['status'], 'optimal')
        self.assertEqual(data['results']['T'], 2)

        response = self.client.get(reverse('runs:iterations', args=[run.id]))
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response['Content-Type'], 'text/csv')
        self.assertIn('attachment', response['Content-Disposition'])
        rows = list(csv.reader(io.StringIO(response.content.decode())))
        self.assertEqual(rows[0], ITERATION_HEADER)

        response = self.client.get(reverse('runs:list'), {'status': 'optimal'})
        self.assertEqual([item['id'] for item in response.json()['runs']], [run.id])

    def test_validation_attached_to_run(self):
        results = self.tmp / 'r.json'
        cli('solve', TOY3, TOY3_SCENARIO, '--out', str(results), '--record', '--threads', '1')
        run = SolveRun.objects.get()
        code, _, _ = cli('validate', TOY3, TOY3_SCENARIO, str(results), '--samples', '200', '--run', str(run.id))
        self.assertEqual(code, EXIT_OK)
        validation = ValidationRun.objects.get()
        self.assertTrue(validation.passed)
        self.assertEqual(validation.run, run)
        self.assertEqual(cli('validate', TOY3, TOY3_SCENARIO, str(results), '--run', '999')[0], EXIT_DATA)

    def test_unknown_run(self):
        response = self.client.get(reverse('runs:detail', args=[999]))
        self.assertEqual(response.status_code, 404)

    def test_views_are_read_only(self):
        run = SolveRun.objects.create(case_path=TOY3, scenario_path=TOY3_SCENARIO)
        response = self.client.post(reverse('runs:detail', args=[run.id]))
        self.assertEqual(response.status_code, 405)

    def test_background_solve_is_queued(self):
        with mock.patch('battopf.runs.management.commands.solve.solve_run_task') as task:
            code, out, _ = cli('solve', TOY3, TOY3_SCENARIO, '--background')
        self.assertEqual(code, EXIT_OK)
        run = SolveRun.objects.get()
        self.assertEqual(run.status, SolveRun.Status.PENDING)
        task.delay.assert_called_once_with(run.pk)
        self.assertIn(f'Queued run {run.pk}', out)


class TaskTests(TestCase):

    def test_task_solves_a_pending_run(self):
        options = SolverOptions.from_settings(threads=1)
        run = SolveRun.objects.create(case_path=TOY3, scenario_path=TOY3_SCENARIO, options=options.to_dict())
        result = solve_run_task.apply(args=(run.pk,))
        self.assertEqual(result.get(), 'optimal')
        run.refresh_from_db()
        self.assertEqual(run.status, SolveRun.Status.OPTIMAL)
        self.assertEqual(IterationRecord.objects.filter(run=run).count(), run.iterations)
        self.assertEqual(run.results['status'], 'optimal')

    def test_failed_run(self):
        run = SolveRun.objects.create(case_path='/nonexistent/case.m', scenario_path=TOY3_SCENARIO)
        with self.assertLogs('battopf.runs.tasks', level='ERROR'):
            execute_run(run)
        run.refresh_from_db()
        self.assertEqual(run.status, SolveRun.Status.FAILED)
        self.assertTrue(run.message)

    def test_recording_twice_replaces_the_log(self):
        case = load_fixture_case('toy3.m', 'toy3_scenario.json')
        report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        document = results_document(report, case)
        run = SolveRun.objects.create(case_path=TOY3, scenario_path=TOY3_SCENARIO)
        run.record(report, document)
        run.record(report, document)
        self.assertEqual(run.iteration_log.count(), report.iterations)
