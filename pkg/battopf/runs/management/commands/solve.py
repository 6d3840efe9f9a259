"""
Management command to solve the robust dispatch problem of a case.
Run with: python manage.py solve case9.m case9_scenario.json --out results.json
"""
import json
import logging

from django.core.management.base import BaseCommand, CommandError

from battopf.exceptions import BattopfError
from battopf.grid.scenario import load_case
from battopf.lp.problem import BACKENDS
from battopf.planning.driver import SolverOptions, run_cutting_plane
from battopf.runs.cli import STATUS_EXIT, data_error, usage_error
from battopf.runs.models import SolveRun
from battopf.runs.reports import results_document, write_iteration_csv, write_results
from battopf.runs.tasks import solve_run_task

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Solves the robust multi-period dispatch problem of a MATPOWER case and scenario'

    def add_arguments(self, parser):
        parser.add_argument('case', help='MATPOWER case file (.m)')
        parser.add_argument('scenario', help='Scenario JSON file')
        parser.add_argument('--out', help='Write the results JSON here instead of stdout')
        parser.add_argument('--log', help='Write the iteration log CSV here')
        parser.add_argument('--max-iter', type=int, help='Iteration limit')
        parser.add_argument('--tol', type=float, help='Violation tolerance')
        parser.add_argument('--max-cuts', type=int, help='Cuts added per iteration')
        parser.add_argument('--seed', type=int, help='Seed recorded with the run')
        parser.add_argument('--threads', type=int, help='Separation workers (0 = available cores)')
        parser.add_argument('--backend', choices=sorted(BACKENDS), help='LP backend')
        parser.add_argument('--record', action='store_true', help='Store the run in the database')
        parser.add_argument('--background', action='store_true', help='Queue the solve as a Celery task')

    def handle(self, *args, **options):
        solver_options = self._solver_options(options)

        if options['background']:
            run = SolveRun.objects.create(
                case_path=options['case'],
                scenario_path=options['scenario'],
                options=solver_options.to_dict(),
            )
            solve_run_task.delay(run.pk)
            self.stdout.write(self.style.SUCCESS(f'Queued run {run.pk}'))
            return

        try:
            case = load_case(options['case'], options['scenario'])
        except (BattopfError, OSError) as exc:
            raise data_error(exc)

        try:
            report = run_cutting_plane(case, solver_options)
        except BattopfError as exc:
            raise data_error(exc)

        document = results_document(report, case, solver_options)
        try:
            if options['out']:
                write_results(document, options['out'])
            else:
                self.stdout.write(json.dumps(document, indent=2))
            if options['log']:
                with open(options['log'], 'w', newline='', encoding='utf-8') as handle:
                    write_iteration_csv(report.log, handle)
        except OSError as exc:
            raise data_error(exc)

        if options['record']:
            run = SolveRun.objects.create(
                case_path=options['case'],
                scenario_path=options['scenario'],
                case_name=case.name,
                options=solver_options.to_dict(),
            )
            run.record(report, document)
            self.stderr.write(f'Recorded run {run.pk}')

        code = STATUS_EXIT[report.status]
        if code:
            raise CommandError(f'{report.status}: {report.message}', returncode=code)
        if options['out']:
            self.stdout.write(self.style.SUCCESS(
                f'{report.status}: objective {report.objective:.2f} after {report.iterations} iterations '
                f'({report.time_s:.2f} s)'
            ))

    def _solver_options(self, options):
        if options['max_iter'] is not None and options['max_iter'] < 1:
            raise usage_error('--max-iter must be >= 1')
        if options['tol'] is not None and options['tol'] <= 0:
            raise usage_error('--tol must be positive')
        if options['max_cuts'] is not None and options['max_cuts'] < 1:
            raise usage_error('--max-cuts must be >= 1')
        if options['threads'] is not None and options['threads'] < 0:
            raise usage_error('--threads must be >= 0')
        return SolverOptions.from_settings(
            max_iter=options['max_iter'],
            tolerance=options['tol'],
            max_cuts_per_iter=options['max_cuts'],
            seed=options['seed'],
            threads=options['threads'],
            backend=options['backend'],
        )
