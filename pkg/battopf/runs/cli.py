"""
Command-line entry point.

run_cli dispatches to the solve, validate, report and scalability management commands
and turns their CommandError return codes into process exit codes:

    0   optimal solve / validation passed
    2   robust problem infeasible / validation failed
    3   stalled or iteration limit
    64  usage error
    65  data error (unreadable or invalid case, scenario or results)
"""
import os
import sys

from django.core.management import call_command
from django.core.management.base import CommandError

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_INCOMPLETE = 3
EXIT_USAGE = 64
EXIT_DATA = 65

STATUS_EXIT = {
    'optimal': EXIT_OK,
    'infeasible': EXIT_FAILED,
    'stalled': EXIT_INCOMPLETE,
    'iteration_limit': EXIT_INCOMPLETE,
}

COMMANDS = ('solve', 'validate', 'report', 'scalability')

USAGE = """usage: battopf solve <case.m> <scenario.json> [--out results.json] [--log iters.csv]
                     [--max-iter N] [--tol X] [--seed S] [--threads K]
       battopf validate <case.m> <scenario.json> <results.json> [--samples N] [--seed S]
       battopf report <results.json> [--format csv|md]
       battopf scalability [--periods T ...] [--seed S] [--format csv|md]
"""


def data_error(exc):
    """CommandError with the data-error exit code for a loader exception."""
    return CommandError(str(exc), returncode=EXIT_DATA)


def usage_error(message):
    return CommandError(message, returncode=EXIT_USAGE)


def run_cli(argv, stdout=None, stderr=None):
    """Run one subcommand and return its exit code.

    Args:
        argv: arguments after the program name, e.g. ['solve', 'case9.m', 'case9_scenario.json']
        stdout, stderr: streams for command output (default sys.stdout / sys.stderr)
    """
    stderr = stderr or sys.stderr
    argv = list(argv)
    if not argv or argv[0] not in COMMANDS:
        stderr.write(USAGE)
        return EXIT_USAGE
    try:
        call_command(argv[0], *argv[1:], stdout=stdout or sys.stdout, stderr=stderr)
    except CommandError as exc:
        stderr.write(f"{exc}\n")
        # argument parsing failures carry Django's default code
        return exc.returncode if exc.returncode != 1 else EXIT_USAGE
    return EXIT_OK


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'battopf.settings')
    import django
    django.setup()
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == '__main__':
    main()
