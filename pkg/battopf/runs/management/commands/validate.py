"""
Management command to Monte Carlo check a solved plan.
Run with: python manage.py validate case9.m case9_scenario.json results.json --samples 10000
"""
import json

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from battopf.exceptions import BattopfError
from battopf.grid.scenario import load_case
from battopf.runs.cli import EXIT_FAILED, data_error, usage_error
from battopf.runs.models import SolveRun, ValidationRun
from battopf.runs.reports import read_results
from battopf.validation.services import monte_carlo_validate, plan_from_results


class Command(BaseCommand):
    help = 'Replays sampled renewable deviations through a solved plan and reports every violation'

    def add_arguments(self, parser):
        parser.add_argument('case', help='MATPOWER case file (.m)')
        parser.add_argument('scenario', help='Scenario JSON file')
        parser.add_argument('results', help='Results JSON written by solve')
        parser.add_argument('--samples', type=int, help='Number of deviation samples')
        parser.add_argument('--seed', type=int, help='Sampler seed')
        parser.add_argument('--out', help='Write the validation report JSON here')
        parser.add_argument('--run', type=int, help='Attach the report to this recorded run')

    def handle(self, *args, **options):
        samples = options['samples'] if options['samples'] is not None else settings.BATTOPF_VALIDATION_SAMPLES
        seed = options['seed'] if options['seed'] is not None else settings.BATTOPF_SEED
        if samples < 1:
            raise usage_error('--samples must be >= 1')

        run = None
        if options['run'] is not None:
            run = SolveRun.objects.filter(pk=options['run']).first()
            if run is None:
                raise data_error(f"no recorded run {options['run']}")

        try:
            case = load_case(options['case'], options['scenario'])
            dispatch, policy = plan_from_results(case, read_results(options['results']))
            report = monte_carlo_validate(case, dispatch, policy, samples=samples, seed=seed)
        except (BattopfError, OSError) as exc:
            raise data_error(exc)

        if options['out']:
            try:
                with open(options['out'], 'w', encoding='utf-8') as handle:
                    json.dump(report.to_dict(), handle, indent=2)
            except OSError as exc:
                raise data_error(exc)
        if run is not None:
            ValidationRun.from_report(run, report)

        worst = ', '.join(f'{family} {report.max_violation[family]:.6g}' for family in report.families())
        if not report.passed:
            raise CommandError(
                f'validation failed: {report.violating_samples} of {samples} samples violate the plan ({worst})',
                returncode=EXIT_FAILED,
            )
        self.stdout.write(self.style.SUCCESS(
            f'validation passed: {samples} samples (seed {seed}), no violation above {report.tolerance:g}'
        ))
