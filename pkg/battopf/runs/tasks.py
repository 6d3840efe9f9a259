"""
Background solves.

`solve --background` records a pending SolveRun and hands its id to
solve_run_task; a Celery worker loads the case and stores the outcome.
"""
import logging

from celery import shared_task

from battopf.exceptions import BattopfError
from battopf.grid.scenario import load_case
from battopf.planning.driver import SolverOptions, run_cutting_plane

from .models import SolveRun
from .reports import results_document

logger = logging.getLogger(__name__)


def execute_run(run):
    """Solve a recorded run and store its report on the row."""
    run.status = SolveRun.Status.RUNNING
    run.save(update_fields=['status', 'updated_at'])
    try:
        case = load_case(run.case_path, run.scenario_path)
        options = SolverOptions(**run.options) if run.options else SolverOptions.from_settings()
        report = run_cutting_plane(case, options)
    except (BattopfError, OSError) as exc:
        logger.error(f"run {run.pk} failed: {exc}")
        run.status = SolveRun.Status.FAILED
        run.message = str(exc)
        run.save(update_fields=['status', 'message', 'updated_at'])
        return run
    run.case_name = case.name
    run.options = options.to_dict()
    run.record(report, results_document(report, case, options))
    logger.info(f"run {run.pk} finished: {report.status}, objective {report.objective}")
    return run


@shared_task
def solve_run_task(run_id):
    run = SolveRun.objects.get(pk=run_id)
    return execute_run(run).status
