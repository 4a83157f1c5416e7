from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from .config import env_str
from .dualscheme import preset, preset_names
from .exceptions import FveGridError
from .harness import FORMATS, KINDS, NORMS, StudyConfig, compare_reference, emit, load_study_configs, resolve_scheme, run_study, with_overrides
from .pdemodel import problem_names
from .superstruct import point_sets_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2

_SUFFIXES = {'csv': '.csv', 'markdown': '.md', 'json': '.json'}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fvegrid', description='Convergence studies for bi-k-order FVE and FEM schemes on rectangular meshes.')
    parser.add_argument('--config', help='Study file (YAML or JSON); flags override its values.')
    parser.add_argument('--problem', help=f'Benchmark problem ({", ".join(problem_names())}, POLY-k).')
    parser.add_argument('--scheme', help='Preset name, FE-k, or a scheme-definition file.')
    parser.add_argument('--kind', choices=KINDS)
    parser.add_argument('--mesh-sizes', type=int, nargs='+', metavar='N')
    parser.add_argument('--perturb', type=float, metavar='DELTA', help='Mesh jitter as a fraction of the spacing, below 1/2.')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--norms', nargs='+', choices=sorted(NORMS))
    parser.add_argument('--format', choices=FORMATS)
    parser.add_argument('--out', help='Output file; a directory when the config holds several studies.')
    parser.add_argument('--check-reference', action='store_true', default=None, help='Compare against the embedded reference tables.')
    parser.add_argument('--tolerance-factor', type=float)
    parser.add_argument('--order-tolerance', type=float)
    parser.add_argument('--solver', choices=('direct', 'gmres'))
    parser.add_argument('--list-presets', action='store_true', help='Print the built-in schemes and exit.')
    parser.add_argument('--export-points', metavar='PATH', help='Write the superconvergence point sets as JSON.')
    parser.add_argument('--export-matrix', metavar='DIR', help='Write every assembled system in Matrix Market format.')
    parser.add_argument('--log-level', help='Defaults to FVEGRID_LOG_LEVEL or WARNING.')
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        'problem': args.problem,
        'scheme': args.scheme,
        'kind': args.kind,
        'mesh_sizes': args.mesh_sizes,
        'perturb': args.perturb,
        'seed': args.seed,
        'norms': args.norms,
        'format': args.format,
        'check_reference': args.check_reference,
        'tolerance_factor': args.tolerance_factor,
        'order_tolerance': args.order_tolerance,
        'solver': args.solver,
        'export_matrix': args.export_matrix,
    }


def _target(base: str | None, fallback: str | None, name: str, several: bool) -> Path | None:
    """Flag value first, then the study's own setting; several studies share `base` as a directory."""
    if base is None:
        return Path(fallback) if fallback else None
    return Path(base) / name if several else Path(base)


def _log_level(value: str | None) -> int:
    level = logging.getLevelName((value or env_str('FVEGRID_LOG_LEVEL', default='WARNING')).upper())
    return level if isinstance(level, int) else logging.WARNING


def _list_presets() -> None:
    for name in preset_names():
        strategy = preset(name)
        print(f'{name}\tk={strategy.k}\tr={strategy.r}')
    print('FE-k\tGalerkin finite elements of order k (kind fem)')


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=_log_level(args.log_level))

    try:
        if args.list_presets:
            _list_presets()
            return EXIT_OK

        studies = load_study_configs(args.config) if args.config else [StudyConfig()]
        studies = [with_overrides(study, **_overrides(args)) for study in studies]
        several = len(studies) > 1

        mismatch = False
        for study in studies:
            if args.export_points:
                scheme = resolve_scheme(study.scheme, study.kind)
                target = _target(args.export_points, None, f'{study.label}_points.json', several)
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(point_sets_json(scheme.points, strict=False), encoding='utf-8')

            result = run_study(study)
            target = _target(args.out, study.output, f'{study.label}{_SUFFIXES[study.format]}', several)
            text = emit(result, study.format, target)
            if target is None:
                sys.stdout.write(text)

            if study.check_reference:
                comparison = compare_reference(result)
                failed = comparison.failures()
                if failed:
                    mismatch = True
                    print(f'{study.label}: {len(failed)} of {len(comparison.checks)} reference checks failed', file=sys.stderr)
                else:
                    logger.info('%s: all %d reference checks passed', study.label, len(comparison.checks))
    except (FveGridError, OSError, ValueError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_ERROR

    return EXIT_MISMATCH if mismatch else EXIT_OK


if __name__ == '__main__':
    raise SystemExit(main())
