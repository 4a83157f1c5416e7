from __future__ import annotations

import csv
import io
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .assembly import DiscreteField, assemble_fem, assemble_fve, export_matrix_market, field_from_solution, solve
from .config import MESH_SCHEMA, STUDY_SCHEMA, load_document, validate_document, worker_count
from .dualscheme import DualStrategy, gaussian_duality, load_scheme, preset, preset_names
from .errnorms import (
    ErrorReport,
    ExactError,
    FieldDifference,
    broken_h1_seminorm,
    estimate_orders,
    global_norms,
    norm_h1x_super,
    norm_h1x_ultra,
    norm_l2_super,
)
from .exceptions import ConfigIssue, ConfigValidationError, MissingReferenceCell, SolverFailure, UnknownPreset
from .meshgen import RectMesh, mesh_from_document, perturbed_family, uniform_mesh
from .pdemodel import ManufacturedProblem, get_problem
from .superstruct import Mode, build_superclose

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'markdown', 'json')
KINDS = ('fve', 'fem')
DEFAULT_TOLERANCE_FACTOR = 2.0
DEFAULT_ORDER_TOLERANCE = 0.3

_FEM_SCHEME = re.compile(r'^FE-(\d+)$')


@dataclass(frozen=True)
class Scheme:
    """A resolved discretization: FVE with its dual strategy, or FEM of order k.

    ``points`` supplies the dual lines and superconvergence points used by the discrete norms;
    for FE-k it is the Gaussian duality of order k.
    """

    name: str
    kind: str
    k: int
    points: DualStrategy
    strategy: DualStrategy | None = None


def resolve_scheme(name: str, kind: str | None = None) -> Scheme:
    if kind is not None and kind not in KINDS:
        raise ConfigValidationError([ConfigIssue(path='$.kind', message=f'must be one of {KINDS}')], what='study')

    match = _FEM_SCHEME.match(name.strip().upper())
    if match:
        if kind == 'fve':
            raise ConfigValidationError([ConfigIssue(path='$.kind', message=f'{name} is a finite element scheme')], what='study')
        k = int(match.group(1))
        g = gaussian_duality(k)
        return Scheme(name=f'FE-{k}', kind='fem', k=k, points=DualStrategy(x=g, y=g, name=f'FE-{k}'))

    if name in preset_names():
        strategy = preset(name)
    elif Path(name).is_file():
        strategy = load_scheme(name)
    else:
        raise UnknownPreset(f'unknown scheme {name!r}; use a preset ({", ".join(preset_names())}), FE-k or a scheme file')

    kind = kind or 'fve'
    return Scheme(
        name=strategy.name or name,
        kind=kind,
        k=strategy.k,
        points=strategy,
        strategy=strategy if kind == 'fve' else None,
    )


@dataclass(frozen=True)
class NormContext:
    problem: ManufacturedProblem
    mesh: RectMesh
    field: DiscreteField
    scheme: Scheme


def _bridge_l2_super(ctx: NormContext) -> float:
    superclose = build_superclose(ctx.problem, ctx.mesh, ctx.scheme.points, Mode.SUPER)
    return global_norms(FieldDifference(ctx.field, superclose), ctx.mesh, ctx.scheme.k)[0]


def _bridge_h1_ultra(ctx: NormContext) -> float:
    superclose = build_superclose(ctx.problem, ctx.mesh, ctx.scheme.points, Mode.ULTRA)
    return broken_h1_seminorm(FieldDifference(ctx.field, superclose), ctx.mesh, ctx.scheme.k)


NORMS: dict[str, Callable[[NormContext], float]] = {
    'h1x-super': lambda c: norm_h1x_super(ExactError(c.field, c.problem), c.mesh, c.scheme.points),
    'l2-super': lambda c: norm_l2_super(ExactError(c.field, c.problem), c.mesh, c.scheme.points),
    'h1x-ultra': lambda c: norm_h1x_ultra(ExactError(c.field, c.problem), c.mesh, c.scheme.points),
    'l2': lambda c: global_norms(ExactError(c.field, c.problem), c.mesh, c.scheme.k)[0],
    'h1': lambda c: global_norms(ExactError(c.field, c.problem), c.mesh, c.scheme.k)[1],
    'l2-bridge-super': _bridge_l2_super,
    'h1-bridge-ultra': _bridge_h1_ultra,
}
FVE_ONLY_NORMS = ('l2-bridge-super', 'h1-bridge-ultra')


@dataclass(frozen=True)
class StudyConfig:
    problem: str = 'BVP-DR'
    scheme: str = 'FVE-3-3'
    kind: str | None = None
    mesh_sizes: tuple[int, ...] = (12, 16, 20, 24)
    meshes: tuple[Mapping[str, Any], ...] = ()
    perturb: float = 0.0
    seed: int = 0
    norms: tuple[str, ...] = ('h1x-ultra',)
    name: str | None = None
    output: str | None = None
    format: str = 'csv'
    check_reference: bool = False
    tolerance_factor: float = DEFAULT_TOLERANCE_FACTOR
    order_tolerance: float = DEFAULT_ORDER_TOLERANCE
    solver: str = 'direct'
    export_matrix: str | None = None

    @property
    def label(self) -> str:
        return self.name or f'{self.scheme}_{self.problem}'

    def issues(self) -> list[ConfigIssue]:
        issues: list[ConfigIssue] = []
        mesh_count = len(self.meshes) if self.meshes else len(self.mesh_sizes)
        if mesh_count < 2:
            issues.append(ConfigIssue(path='$.mesh_sizes', message='at least 2 meshes are needed for orders'))
        if any(n < 2 for n in self.mesh_sizes):
            issues.append(ConfigIssue(path='$.mesh_sizes', message='mesh sizes must be >= 2'))
        if not self.meshes and len(set(self.mesh_sizes)) != len(self.mesh_sizes):
            issues.append(ConfigIssue(path='$.mesh_sizes', message='mesh sizes must be distinct'))
        if not 0.0 <= self.perturb < 0.5:
            issues.append(ConfigIssue(path='$.perturb', message='must lie in [0, 1/2)'))
        if self.kind is not None and self.kind not in KINDS:
            issues.append(ConfigIssue(path='$.kind', message=f'must be one of {KINDS}'))
        if self.format not in FORMATS:
            issues.append(ConfigIssue(path='$.format', message=f'must be one of {FORMATS}'))
        if self.solver not in ('direct', 'gmres'):
            issues.append(ConfigIssue(path='$.solver', message="must be 'direct' or 'gmres'"))
        if not self.norms:
            issues.append(ConfigIssue(path='$.norms', message='at least one norm is required'))
        for idx, norm in enumerate(self.norms):
            if norm not in NORMS:
                issues.append(ConfigIssue(path=f'$.norms[{idx}]', message=f'unknown norm {norm!r}'))
        if self.tolerance_factor < 1.0:
            issues.append(ConfigIssue(path='$.tolerance_factor', message='must be >= 1'))
        if self.order_tolerance <= 0.0:
            issues.append(ConfigIssue(path='$.order_tolerance', message='must be > 0'))
        return issues

    def validate(self) -> 'StudyConfig':
        issues = self.issues()
        if issues:
            raise ConfigValidationError(issues, what=f'study {self.label}')
        return self


_LIST_FIELDS = ('mesh_sizes', 'norms', 'meshes')


def study_from_mapping(raw: Mapping[str, Any], defaults: Mapping[str, Any] | None = None) -> StudyConfig:
    merged = {**(defaults or {}), **raw}
    known = {f for f in StudyConfig.__dataclass_fields__}
    values = {key: value for key, value in merged.items() if key in known}
    for key in _LIST_FIELDS:
        if key in values and values[key] is not None:
            values[key] = tuple(values[key])
    return StudyConfig(**values)


def load_study_configs(path: Path | str) -> list[StudyConfig]:
    """A study file holds either one study or ``{defaults: {...}, studies: [...]}``."""
    raw = load_document(path, STUDY_SCHEMA, what='study config')
    if 'studies' in raw:
        defaults = raw.get('defaults') or {}
        return [study_from_mapping(entry, defaults) for entry in raw['studies']]
    return [study_from_mapping(raw)]


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    scheme: Scheme
    reports: list[ErrorReport]
    orders: dict[str, list[float | None]]


def build_meshes(config: StudyConfig) -> list[RectMesh]:
    if config.meshes:
        issues = [
            ConfigIssue(path=f'$.meshes[{idx}]{issue.path[1:]}', message=issue.message)
            for idx, doc in enumerate(config.meshes)
            for issue in validate_document(doc, MESH_SCHEMA)
        ]
        if issues:
            raise ConfigValidationError(issues, what=f'study {config.label}')
        return [mesh_from_document(doc) for doc in config.meshes]
    if config.perturb > 0.0:
        return perturbed_family(config.mesh_sizes, config.perturb, config.seed)
    return [uniform_mesh(n, n) for n in config.mesh_sizes]


def _run_mesh(config: StudyConfig, scheme: Scheme, problem: ManufacturedProblem, mesh: RectMesh) -> ErrorReport:
    label = f'{mesh.nx}x{mesh.ny}'
    started = time.perf_counter()
    if scheme.kind == 'fve':
        system = assemble_fve(mesh, scheme.strategy, problem)
    else:
        system = assemble_fem(mesh, scheme.k, problem)
    if config.export_matrix:
        export_matrix_market(system, Path(config.export_matrix) / f'{config.label}_{label}.mtx')
    try:
        x = solve(system, method=config.solver)
    except SolverFailure as e:
        raise SolverFailure(f'{config.label} on mesh {label}: {e}', residual=e.residual) from e

    ctx = NormContext(problem=problem, mesh=mesh, field=field_from_solution(system, mesh, x, strategy=scheme.strategy), scheme=scheme)
    norms = {name: NORMS[name](ctx) for name in config.norms}
    elapsed = time.perf_counter() - started
    logger.info('%s mesh %s: %d unknowns, %.3fs', config.label, label, system.dimension, elapsed)
    return ErrorReport(h=mesh.h_nominal, norms=norms, dofs=system.dimension, wall_time=elapsed, h_max=mesh.h, nx=mesh.nx, ny=mesh.ny)


def run_study(config: StudyConfig) -> StudyResult:
    config.validate()
    scheme = resolve_scheme(config.scheme, config.kind)
    if scheme.kind == 'fem':
        fve_only = [n for n in config.norms if n in FVE_ONLY_NORMS]
        if fve_only:
            raise ConfigValidationError(
                [ConfigIssue(path='$.norms', message=f'{", ".join(fve_only)} require an FVE scheme')],
                what=f'study {config.label}',
            )
    problem = get_problem(config.problem)
    meshes = build_meshes(config)

    workers = max(1, min(worker_count(), len(meshes)))
    logger.info('running %s on %d meshes with %d workers', config.label, len(meshes), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda mesh: _run_mesh(config, scheme, problem, mesh), meshes))
    return StudyResult(config=config, scheme=scheme, reports=reports, orders=estimate_orders(reports))


@dataclass(frozen=True)
class ReferenceCell:
    scheme: str
    problem: str
    norm: str
    n: int
    value: float
    order: float | None


class ReferenceTable:
    def __init__(self, cells: Sequence[ReferenceCell]):
        self._cells = {(c.scheme, c.problem, c.norm, c.n): c for c in cells}

    def __len__(self) -> int:
        return len(self._cells)

    def cells(self) -> list[ReferenceCell]:
        return list(self._cells.values())

    def lookup(self, scheme: str, problem: str, norm: str, n: int) -> ReferenceCell:
        try:
            return self._cells[(scheme, problem, norm, n)]
        except KeyError:
            raise MissingReferenceCell(f'no reference value for {scheme} / {problem} / {norm} at h=1/{n}') from None


def _reference_text() -> str:
    import importlib.resources as resources

    return resources.files('fvegrid.data').joinpath('reference_tables.yml').read_text(encoding='utf-8')


@lru_cache(maxsize=1)
def reference_table() -> ReferenceTable:
    raw = yaml.safe_load(_reference_text())
    cells = []
    for column in raw['columns']:
        for n, value, order in column['rows']:
            cells.append(ReferenceCell(column['scheme'], column['problem'], column['norm'], int(n), float(value), order))
    return ReferenceTable(cells)


@dataclass(frozen=True)
class CellCheck:
    cell: ReferenceCell
    value: float
    order: float | None
    value_ok: bool
    order_ok: bool

    @property
    def passed(self) -> bool:
        return self.value_ok and self.order_ok


@dataclass(frozen=True)
class ComparisonResult:
    checks: list[CellCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CellCheck]:
        return [c for c in self.checks if not c.passed]


def compare_reference(
    result: StudyResult,
    table: ReferenceTable | None = None,
    *,
    factor: float | None = None,
    order_tolerance: float | None = None,
) -> ComparisonResult:
    """Check every (mesh, norm) cell: value within a multiplicative factor, order within an absolute band."""
    table = table or reference_table()
    factor = factor if factor is not None else result.config.tolerance_factor
    order_tolerance = order_tolerance if order_tolerance is not None else result.config.order_tolerance
    ordered = sorted(result.reports, key=lambda r: -r.h)

    checks: list[CellCheck] = []
    for norm in result.config.norms:
        for idx, report in enumerate(ordered):
            n = round(1.0 / report.h)
            cell = table.lookup(result.scheme.name, result.config.problem.upper(), norm, n)
            value = report.norms[norm]
            value_ok = cell.value / factor <= value <= cell.value * factor
            order = result.orders[norm][idx]
            if cell.order is None:
                order_ok = True
            else:
                order_ok = order is not None and abs(order - cell.order) <= order_tolerance
            check = CellCheck(cell=cell, value=value, order=order, value_ok=value_ok, order_ok=order_ok)
            if not check.passed:
                logger.warning(
                    '%s / %s / %s at h=1/%d: computed %.4e (order %s), reference %.4e (order %s)',
                    cell.scheme, cell.problem, norm, n, value, _fmt_order(order), cell.value, _fmt_order(cell.order),
                )
            checks.append(check)
    return ComparisonResult(checks=checks)


def _fmt_order(order: float | None) -> str:
    return '' if order is None else f'{order:.4f}'


def _fmt_h(report: ErrorReport) -> str:
    n = round(1.0 / report.h)
    return f'1/{n}' if abs(report.h * n - 1.0) < 1e-12 else f'{report.h:.6g}'


def _ordered(result: StudyResult) -> list[tuple[int, ErrorReport]]:
    return list(enumerate(sorted(result.reports, key=lambda r: -r.h)))


def to_csv(result: StudyResult) -> str:
    norms = list(result.config.norms)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['h', 'dofs', *norms, *[f'{n}_order' for n in norms]])
    for idx, report in _ordered(result):
        writer.writerow(
            [
                f'{report.h:.10g}',
                report.dofs,
                *[f'{report.norms[n]:.6e}' for n in norms],
                *[_fmt_order(result.orders[n][idx]) for n in norms],
            ]
        )
    return buffer.getvalue()


def to_markdown(result: StudyResult) -> str:
    norms = list(result.config.norms)
    header = ['h', 'dofs']
    for n in norms:
        header.extend([n, 'Order'])
    lines = [
        f'**{result.scheme.name}** on **{result.config.problem}**',
        '',
        '| ' + ' | '.join(header) + ' |',
        '|' + '|'.join(['---'] * len(header)) + '|',
    ]
    for idx, report in _ordered(result):
        cells = [_fmt_h(report), str(report.dofs)]
        for n in norms:
            order = result.orders[n][idx]
            cells.extend([f'{report.norms[n]:.4e}', '\\' if order is None else f'{order:.4f}'])
        lines.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines) + '\n'


def to_json(result: StudyResult) -> str:
    config = asdict(result.config)
    config['meshes'] = [dict(m) for m in result.config.meshes]
    payload = {
        'study': result.config.label,
        'scheme': result.scheme.name,
        'kind': result.scheme.kind,
        'config': config,
        'rows': [
            {
                'h': r.h,
                'h_max': r.h_max,
                'nx': r.nx,
                'ny': r.ny,
                'dofs': r.dofs,
                'wall_time': r.wall_time,
                'norms': dict(r.norms),
            }
            for _, r in _ordered(result)
        ],
        'orders': result.orders,
    }
    return json.dumps(payload, indent=2)


_EMITTERS: dict[str, Callable[[StudyResult], str]] = {'csv': to_csv, 'markdown': to_markdown, 'json': to_json}


def emit(result: StudyResult, format: str = 'csv', path: Path | str | None = None) -> str:
    try:
        text = _EMITTERS[format](result)
    except KeyError:
        raise ValueError(f'unknown format {format!r}; expected one of {FORMATS}') from None
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding='utf-8')
    return text


def with_overrides(config: StudyConfig, **overrides: Any) -> StudyConfig:
    """Replace the fields given (``None`` values are ignored)."""
    values = {key: value for key, value in overrides.items() if value is not None}
    for key in _LIST_FIELDS:
        if key in values:
            values[key] = tuple(values[key])
    return replace(config, **values)
