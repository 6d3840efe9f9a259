"""
Reader for the subset of the MATPOWER case format the DC model needs.

Only mpc.baseMVA and the bus, gen, branch and gencost matrices are read.
AC data (reactive power, voltages, resistance, line charging, shunts,
taps, phase shifts) is parsed and discarded; each kind of discarded data
is reported once in GridCase.warnings and logged.
"""
import logging
import re

from battopf.exceptions import CaseParseError, CaseValidationError
from battopf.grid.cases import BranchSpec, Bus, BusType, CostCurve, GeneratorSpec, GridCase

logger = logging.getLogger(__name__)

_SCALAR = re.compile(r'^\s*mpc\.(\w+)\s*=\s*([^\[\{;]+?)\s*;?\s*$')
_MATRIX_START = re.compile(r'^\s*mpc\.(\w+)\s*=\s*([\[\{])(.*)$')

# minimum column counts for the tables we read
_MIN_COLUMNS = {'bus': 3, 'gen': 10, 'branch': 4, 'gencost': 4}

# bus columns
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
# gen columns
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
# branch columns
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)
# gencost columns
MODEL, STARTUP, SHUTDOWN, NCOST, COST = range(5)


def _strip_comment(line):
    return line.split('%', 1)[0].rstrip()


def _parse_row(text, table, line_number):
    tokens = [token for token in re.split(r'[\s,]+', text.strip()) if token]
    try:
        return [float(token) for token in tokens]
    except ValueError:
        raise CaseParseError(f"malformed row in mpc.{table}: {text.strip()!r}", line_number) from None


def read_tables(text):
    """Split a MATPOWER file into scalars and numeric matrices.

    Returns:
        tuple: (scalars dict, tables dict of name -> list of (line, row)),
        plus the names of non-numeric blocks (cell arrays) that were skipped
    """
    scalars = {}
    tables = {}
    skipped = []
    current = None
    closing = None
    pending = ''
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if current is None:
            start = _MATRIX_START.match(line)
            if start:
                current, opener, line = start.group(1), start.group(2), start.group(3)
                closing = ']' if opener == '[' else '}'
                if opener == '{':
                    skipped.append(current)
                tables.setdefault(current, [])
            else:
                scalar = _SCALAR.match(line)
                if scalar:
                    scalars[scalar.group(1)] = scalar.group(2).strip()
                continue

        done = closing in line
        if done:
            line = line.split(closing, 1)[0]
        if closing == ']':
            pieces = line.split(';')
            for position, piece in enumerate(pieces):
                pending = f"{pending} {piece}".strip() if pending else piece.strip()
                ends_row = position < len(pieces) - 1 or not pending.endswith('...')
                if pending.endswith('...'):
                    pending = pending[:-3]
                    continue
                if pending and ends_row:
                    tables[current].append((line_number, _parse_row(pending, current, line_number)))
                    pending = ''
        if done:
            if pending:
                tables[current].append((line_number, _parse_row(pending, current, line_number)))
            pending = ''
            current = None
    if current is not None:
        raise CaseParseError(f"mpc.{current} is never closed", len(text.splitlines()))
    for name in skipped:
        tables.pop(name, None)
    return scalars, tables, skipped


def _table(tables, name, required=True):
    rows = tables.get(name)
    if rows is None:
        if required:
            raise CaseParseError(f"case does not define mpc.{name}")
        return []
    for line_number, row in rows:
        if len(row) < _MIN_COLUMNS[name]:
            raise CaseParseError(
                f"mpc.{name} row has {len(row)} columns, need at least {_MIN_COLUMNS[name]}", line_number
            )
    return rows


def _column(row, index, default=0.0):
    return row[index] if index < len(row) else default


def _gencost(row, line_number):
    model = int(row[MODEL])
    count = int(row[NCOST])
    values = row[COST:]
    if model == 2:
        if len(values) < count:
            raise CaseParseError(f"gencost declares {count} coefficients, found {len(values)}", line_number)
        return CostCurve.polynomial(*values[:count])
    if model == 1:
        if len(values) < 2 * count:
            raise CaseParseError(f"gencost declares {count} points, found {len(values) // 2}", line_number)
        points = [(values[2 * k], values[2 * k + 1]) for k in range(count)]
        return CostCurve(model='piecewise', points=points)
    raise CaseParseError(f"unknown gencost model {model}", line_number)


def parse_matpower_case(text, name=''):
    """Parse MATPOWER case text into a single-period GridCase.

    Args:
        text: MATPOWER .m file contents
        name: case name; defaults to the function name in the file

    Returns:
        GridCase with T = 1; GridCase.warnings lists discarded data

    Raises:
        CaseParseError: malformed table row (carries the line number)
        CaseValidationError: missing slack bus, duplicate bus id, dangling reference
    """
    scalars, tables, skipped = read_tables(text)
    warnings = [f"mpc.{table} is not numeric and was ignored" for table in skipped]
    if not name:
        match = re.search(r'function\s+\w+\s*=\s*(\w+)', text)
        name = match.group(1) if match else ''

    try:
        base_mva = float(scalars.get('baseMVA', 'nan'))
    except ValueError:
        raise CaseParseError(f"baseMVA is not a number: {scalars['baseMVA']!r}") from None
    if base_mva != base_mva:
        raise CaseParseError("case does not define mpc.baseMVA")

    buses = []
    isolated = set()
    shunts = False
    for line_number, row in _table(tables, 'bus'):
        bus_type = int(row[BUS_TYPE])
        if bus_type not in tuple(BusType):
            raise CaseParseError(f"unknown bus type {bus_type}", line_number)
        if bus_type == BusType.ISOLATED:
            isolated.add(int(row[BUS_I]))
            warnings.append(f"bus {int(row[BUS_I])} is isolated (type 4) and was dropped")
            continue
        shunts = shunts or _column(row, GS) != 0 or _column(row, BS) != 0
        buses.append(Bus(id=int(row[BUS_I]), type=BusType(bus_type), pd_mw=row[PD]))
    if shunts:
        warnings.append("bus shunts (Gs, Bs) are ignored by the DC model")
    warnings.append("reactive power and voltage data are ignored by the DC model")

    gen_rows = _table(tables, 'gen')
    cost_rows = _table(tables, 'gencost')
    if len(cost_rows) < len(gen_rows):
        line_number = cost_rows[-1][0] if cost_rows else None
        raise CaseParseError(f"{len(gen_rows)} generators but only {len(cost_rows)} gencost rows", line_number)
    if len(cost_rows) > len(gen_rows):
        warnings.append("reactive gencost rows are ignored")

    generators = []
    for k, ((line_number, row), (cost_line, cost_row)) in enumerate(zip(gen_rows, cost_rows), start=1):
        if _column(row, GEN_STATUS, 1.0) <= 0:
            warnings.append(f"generator {k} at bus {int(row[GEN_BUS])} is out of service and was dropped")
            continue
        generators.append(GeneratorSpec(
            bus=int(row[GEN_BUS]),
            pmin_mw=row[PMIN],
            pmax_mw=(row[PMAX],),
            cost=_gencost(cost_row, cost_line),
        ))

    branches = []
    taps = False
    for line_number, row in _table(tables, 'branch'):
        f, t = int(row[F_BUS]), int(row[T_BUS])
        label = f"{f}-{t}"
        if _column(row, BR_STATUS, 1.0) <= 0:
            warnings.append(f"branch {label} is out of service and was dropped")
            continue
        if f in isolated or t in isolated:
            warnings.append(f"branch {label} touches an isolated bus and was dropped")
            continue
        x = row[BR_X]
        if x == 0:
            raise CaseParseError(f"branch {label} has zero reactance", line_number)
        if x < 0:
            warnings.append(f"branch {label} has negative reactance {x}; its magnitude is used")
        ratio = _column(row, TAP)
        taps = taps or (ratio not in (0.0, 1.0)) or _column(row, SHIFT) != 0
        rate = _column(row, RATE_A)
        branches.append(BranchSpec(
            from_bus=f,
            to_bus=t,
            susceptance=1.0 / abs(x),
            limit_mw=rate if rate > 0 else None,
        ))
    if taps:
        warnings.append("transformer tap ratios and phase shifts are ignored by the DC model")

    for warning in warnings:
        logger.warning(f"{name or 'case'}: {warning}")

    case = GridCase(
        name=name,
        base_mva=base_mva,
        buses=buses,
        branches=branches,
        generators=generators,
        warnings=warnings,
    )
    return case.validate()


def read_matpower_file(path):
    try:
        with open(path, encoding='utf-8') as handle:
            return parse_matpower_case(handle.read())
    except CaseValidationError as exc:
        raise CaseValidationError(f"{path}: {exc}") from exc
