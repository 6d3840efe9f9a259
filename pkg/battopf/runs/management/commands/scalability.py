"""
Management command to solve seeded synthetic cases over several horizons.
Run with: python manage.py scalability --periods 6 8 10 12 --format md
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from battopf.exceptions import BattopfError
from battopf.grid.synthetic import synthetic_case
from battopf.planning.driver import SolverOptions, run_cutting_plane
from battopf.runs.cli import STATUS_EXIT, data_error, usage_error
from battopf.runs.reports import results_document, summary_table

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Solves synthetic grid cases for each horizon and prints T, n, m, Cost, Iterations and Time'

    def add_arguments(self, parser):
        parser.add_argument('--periods', type=int, nargs='+', default=[6, 8, 10, 12], help='Horizons T to solve')
        parser.add_argument('--seed', type=int, default=0, help='Seed of the synthetic case')
        parser.add_argument('--buses', type=int, default=2746)
        parser.add_argument('--branches', type=int, default=3514)
        parser.add_argument('--generators', type=int, default=388)
        parser.add_argument('--wind-farms', type=int, default=32)
        parser.add_argument('--batteries', type=int, default=32)
        parser.add_argument('--max-iter', type=int, help='Iteration limit')
        parser.add_argument('--threads', type=int, help='Separation workers (0 = available cores)')
        parser.add_argument('--format', choices=['csv', 'md'], default='csv', help='Table format')

    def handle(self, *args, **options):
        if min(options['periods']) < 1:
            raise usage_error('--periods must be >= 1')
        solver_options = SolverOptions.from_settings(max_iter=options['max_iter'], threads=options['threads'])

        documents = []
        worst = 0
        for periods in options['periods']:
            try:
                case = synthetic_case(
                    periods,
                    seed=options['seed'],
                    buses=options['buses'],
                    branches=options['branches'],
                    generators=options['generators'],
                    wind_farms=options['wind_farms'],
                    batteries=options['batteries'],
                )
                report = run_cutting_plane(case, solver_options)
            except BattopfError as exc:
                raise data_error(exc)
            logger.info(f"T={periods}: {report.status} after {report.iterations} iterations in {report.time_s:.1f} s")
            documents.append(results_document(report, case, solver_options))
            worst = max(worst, STATUS_EXIT[report.status])

        self.stdout.write(summary_table(documents, options['format']), ending='')
        if worst:
            raise CommandError('not every horizon reached a robust optimum', returncode=worst)
