"""
Management command to print the summary table of one or more results files.
Run with: python manage.py report results_T6.json results_T8.json --format md
"""
from django.core.management.base import BaseCommand

from battopf.exceptions import BattopfError
from battopf.runs.cli import data_error
from battopf.runs.reports import read_results, summary_table


class Command(BaseCommand):
    help = 'Prints T, n, m, Cost, Iterations and Time for results files'

    def add_arguments(self, parser):
        parser.add_argument('results', nargs='+', help='Results JSON files written by solve')
        parser.add_argument('--format', choices=['csv', 'md'], default='csv', help='Table format')

    def handle(self, *args, **options):
        documents = []
        for path in options['results']:
            try:
                documents.append(read_results(path))
            except (BattopfError, OSError) as exc:
                raise data_error(f'{path}: {exc}')
        self.stdout.write(summary_table(documents, options['format']), ending='')
