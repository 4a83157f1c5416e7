from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping

import yaml
from jsonschema import Draft202012Validator

from .exceptions import ConfigIssue, ConfigValidationError

SCHEME_SCHEMA = 'scheme_v1.schema.json'
MESH_SCHEMA = 'mesh_v1.schema.json'
STUDY_SCHEMA = 'study_v1.schema.json'


def _load_schema(name: str) -> dict[str, Any]:
    import importlib.resources as resources

    schema_text = resources.files('fvegrid.schemas').joinpath(name).read_text(encoding='utf-8')
    return json.loads(schema_text)


def _json_path(parts) -> str:
    path = '$'
    for p in parts:
        if isinstance(p, int):
            path += f'[{p}]'
        else:
            path += f'.{p}'
    return path


def validate_document(raw: Any, schema_name: str) -> list[ConfigIssue]:
    if not isinstance(raw, Mapping):
        return [ConfigIssue(path='$', message='document must be an object')]
    validator = Draft202012Validator(_load_schema(schema_name))
    issues: list[ConfigIssue] = []
    for e in sorted(validator.iter_errors(raw), key=lambda x: [str(p) for p in x.absolute_path]):
        issues.append(ConfigIssue(path=_json_path(e.absolute_path), message=e.message))
    return issues


def load_document(path: Path | str, schema_name: str, *, what: str = 'document') -> dict[str, Any]:
    """Read a YAML or JSON file and validate it against one of the bundled schemas."""
    target = Path(path)
    with target.open('r', encoding='utf-8') as handle:
        raw = yaml.safe_load(handle)

    issues = validate_document(raw, schema_name)
    if issues:
        raise ConfigValidationError(issues, what=f'{what} {target.name}')
    return dict(raw)


def save_document(document: Mapping[str, Any], path: Path | str, schema_name: str, *, what: str = 'document') -> None:
    normalized = dict(document)
    issues = validate_document(normalized, schema_name)
    if issues:
        raise ConfigValidationError(issues, what=what)

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open('w', encoding='utf-8') as handle:
        if target.suffix.lower() in ('.yml', '.yaml'):
            yaml.safe_dump(normalized, handle, sort_keys=False, allow_unicode=True)
        else:
            handle.write(json.dumps(normalized, indent=2))
            handle.write('\n')


def env_flag_enabled(name: str) -> bool:
    value = os.getenv(name, '')
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


def env_int(name: str, *, default: int) -> int:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def env_str(name: str, *, default: str) -> str:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    return raw.strip()


def worker_count() -> int:
    """Worker cap from ``FVE_THREADS``; 0, negative or unset means one per CPU."""
    threads = env_int('FVE_THREADS', default=0)
    if threads <= 0:
        return os.cpu_count() or 1
    return threads
