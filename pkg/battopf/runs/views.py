from django.http import HttpResponse, JsonResponse
from django.shortcuts import get_object_or_404
from django.views.decorators.http import require_GET

from .models import SolveRun
from .reports import write_iteration_csv


def _summary(run):
    return {
        'id': run.id,
        'case': run.case_name or run.case_path,
        'status': run.status,
        'objective': run.objective,
        'iterations': run.iterations,
        'T': run.periods,
        'time_s': run.time_s,
        'created_at': run.created_at.isoformat(),
    }


@require_GET
def run_list(request):
    """Most recent recorded runs, newest first"""
    status = request.GET.get('status')
    runs = SolveRun.objects.all()
    if status:
        runs = runs.filter(status=status)
    return JsonResponse({'runs': [_summary(run) for run in runs[:50]]})


@require_GET
def run_detail(request, run_id):
    """Results document of one run with its validations"""
    run = get_object_or_404(SolveRun, id=run_id)
    data = _summary(run)
    data['message'] = run.message
    data['results'] = run.results
    data['validations'] = [
        {
            'samples': validation.samples,
            'seed': validation.seed,
            'passed': validation.passed,
            'max_violation': validation.max_violation,
        }
        for validation in run.validations.all()
    ]
    return JsonResponse(data)


@require_GET
def run_iterations_csv(request, run_id):
    """Iteration log of one run as CSV"""
    run = get_object_or_404(SolveRun, id=run_id)
    response = HttpResponse(content_type='text/csv')
    response['Content-Disposition'] = f'attachment; filename="run_{run.id}_iterations.csv"'
    write_iteration_csv(run.iteration_log.all(), response)
    return response
