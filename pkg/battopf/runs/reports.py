"""
Results documents, iteration logs and summary tables.

The results JSON carries everything `validate` needs (dispatch, gains and
the response sets), so a plan can be re-checked without solver state.
"""
import csv
import io
import json
import logging

from battopf.exceptions import CaseParseError

logger = logging.getLogger(__name__)

ITERATION_HEADER = ['iteration', 'n', 'm', 'objective', 'line', 'speed', 'charge', 'disjunctive', 'time_s']
SUMMARY_HEADER = ['T', 'n', 'm', 'Cost', 'Iterations', 'Time']
REQUIRED_KEYS = ('status', 'objective', 'Pg_mw', 'lambda', 'iterations', 'cuts', 'time_s')


def results_document(report, case, options=None):
    """Results JSON for a RunReport of case."""
    candidate = report.candidate
    return {
        'status': report.status,
        'objective': report.objective,
        'Pg_mw': None if candidate is None else candidate.dispatch.tolist(),
        'lambda': None if candidate is None else candidate.policy.to_list(),
        'iterations': report.iterations,
        'cuts': dict(report.cuts),
        'time_s': report.time_s,
        'T': case.periods,
        'n': report.num_variables,
        'm': report.num_constraints,
        'responds_to': [
            None if battery.responds_to is None else [j + 1 for j in battery.responds_to]
            for battery in case.batteries
        ],
        'case': case.name,
        'message': report.message,
        'monotone': report.monotone,
        'trail': report.trail,
        'options': options.to_dict() if options is not None else {},
    }


def write_results(document, path):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=2)
        handle.write('\n')
    logger.info(f"results written to {path}")


def parse_results(text):
    """Decode a results document.

    Raises:
        CaseParseError: invalid JSON or a required key is missing
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"results file is not valid JSON: {exc.msg}", exc.lineno) from exc
    if not isinstance(document, dict):
        raise CaseParseError("results file must hold a JSON object")
    missing = [key for key in REQUIRED_KEYS if key not in document]
    if missing:
        raise CaseParseError(f"results file lacks {', '.join(missing)}")
    return document


def read_results(path):
    with open(path, encoding='utf-8') as handle:
        return parse_results(handle.read())


def _iteration_values(row):
    """CSV values of a driver IterationRow or a stored IterationRecord."""
    cuts = getattr(row, 'cuts', None)
    if cuts is None:
        cuts = {
            'line': row.line_cuts,
            'speed': row.speed_cuts,
            'charge': row.charge_cuts,
            'disjunctive': row.disjunctive_cuts,
        }
    return [
        row.iteration, row.num_variables, row.num_constraints, f"{row.objective:.6f}",
        cuts['line'], cuts['speed'], cuts['charge'], cuts['disjunctive'], f"{row.wall_time:.3f}",
    ]


def write_iteration_csv(rows, handle):
    writer = csv.writer(handle)
    writer.writerow(ITERATION_HEADER)
    for row in rows:
        writer.writerow(_iteration_values(row))


def iteration_csv(rows):
    buffer = io.StringIO()
    write_iteration_csv(rows, buffer)
    return buffer.getvalue()


def _summary_values(document):
    objective = document.get('objective')
    return [
        str(document.get('T', '')),
        str(document.get('n', '')),
        str(document.get('m', '')),
        '-' if objective is None else f"{objective:.2f}",
        str(document.get('iterations', '')),
        f"{document.get('time_s', 0.0):.2f}",
    ]


def summary_table(documents, fmt='csv'):
    """Table of T, n, m, Cost, Iterations and Time, one row per results document.

    Args:
        documents: results documents (dicts)
        fmt: 'csv' or 'md'
    """
    rows = [_summary_values(document) for document in documents]
    if fmt == 'csv':
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)
        return buffer.getvalue()
    if fmt == 'md':
        lines = ['| ' + ' | '.join(SUMMARY_HEADER) + ' |', '|' + '---|' * len(SUMMARY_HEADER)]
        lines += ['| ' + ' | '.join(row) + ' |' for row in rows]
        return '\n'.join(lines) + '\n'
    raise ValueError(f"unknown table format {fmt!r}")
