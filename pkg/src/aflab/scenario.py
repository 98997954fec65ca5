"""Scenario documents for the command-line front end.

A scenario is a JSON object validated against :data:`SCENARIO_SCHEMA`
before anything is computed.  Factor and branch indices (``theta``, ``k``)
are 1-based in scenarios and converted to 0-based here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .bundle import EXAMPLES, BundleSpec, validate
from .errors import InvalidSpec, ScenarioError

__all__ = ["SCENARIO_SCHEMA", "Scenario", "load_scenario", "resolve_bundle"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_posvec = {"type": "array", "items": _pos, "minItems": 1}
_span = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_index_set = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1, "uniqueItems": True}

_BUNDLE_INLINE = {
    "type": "object",
    "properties": {
        "m": {"type": "integer"},
        "r": {"type": "integer"},
        "n": {"type": "array", "items": {"type": "integer"}},
        "p": {"type": "array", "items": {"type": "integer"}},
        "Q": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
    },
    "required": ["m", "r", "n", "p", "Q"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "aflab scenario",
    "type": "object",
    "properties": {
        "bundle": {"oneOf": [{"type": "string"}, _BUNDLE_INLINE]},
        "initial": {
            "type": "object",
            "properties": {
                "Y": _vec, "a": _pos, "b": _posvec,
                "H": {"type": "array", "items": _vec, "minItems": 1},
                "einstein_ray": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "clock": {"enum": ["u", "tau"]},
        "u_span": _span,
        "tau_span": _span,
        "tol": _pos,
        "sample_taus": _posvec,
        "base_curv": _posvec,
        "time_offset": _num,
        "theta": {"type": "array", "items": _index_set},
        "max_subsets": {"type": "integer", "minimum": 1},
        "shoot": {
            "type": "object",
            "properties": {
                "branch": {"enum": ["unstable", "gamma", "classify"]},
                "k": {"type": "integer", "minimum": 1},
                "eps": _pos,
                "directions": {"type": "integer", "minimum": 1},
                "starts": {"type": "array", "items": _vec},
            },
            "required": ["branch"],
            "additionalProperties": False,
        },
        "portrait": {
            "type": "object",
            "properties": {
                "ymax": _pos,
                "shape": {"oneOf": [{"type": "integer", "minimum": 1},
                                    {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "u_max": _pos,
                "step": _pos,
                "basins": {"type": "boolean"},
            },
            "required": ["ymax", "shape"],
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "criteria": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
                "c0_scale": _pos,
                "tol_scale": _pos,
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {"prefix": {"type": "string", "pattern": "^[A-Za-z0-9_.-]*$"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class Scenario:
    data: dict
    spec: BundleSpec | None
    base_dir: Path

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def prefix(self) -> str:
        return self.data.get("outputs", {}).get("prefix", "")

    @property
    def theta(self):
        """Requested subsets as 0-based tuples, or None."""
        if "theta" not in self.data:
            return None
        return [tuple(sorted(i - 1 for i in t)) for t in self.data["theta"]]


def resolve_bundle(ref, base_dir=Path(".")) -> BundleSpec:
    """Bundle from an inline object, an example name, or a JSON file path."""
    if isinstance(ref, dict):
        return BundleSpec.from_dict(ref)
    if ref in EXAMPLES:
        return EXAMPLES[ref]
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ScenarioError(f"bundle reference {ref!r} is neither an example name nor a file")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec([f"{path}: not valid JSON: {exc}"]) from None
    jsonschema_errors = sorted(jsonschema.Draft7Validator(_BUNDLE_INLINE).iter_errors(data), key=str)
    if jsonschema_errors:
        raise InvalidSpec([f"{path}: {e.message}" for e in jsonschema_errors])
    return BundleSpec.from_dict(data)


def _check_indices(data, spec):
    m = spec.m
    for t in data.get("theta", []):
        if max(t) > m:
            raise ScenarioError(f"theta {t} refers to a factor beyond m = {m}")
    shoot = data.get("shoot", {})
    if "k" in shoot and shoot["k"] > m:
        raise ScenarioError(f"k = {shoot['k']} exceeds m = {m}")
    init = data.get("initial", {})
    for key in ("Y", "b"):
        if key in init and len(init[key]) != m:
            raise ScenarioError(f"initial.{key} must have {m} entries")
    if "H" in init:
        H = init["H"]
        if len(H) != spec.r or any(len(row) != spec.r for row in H):
            raise ScenarioError(f"initial.H must be {spec.r}x{spec.r}")
    if "base_curv" in data and len(data["base_curv"]) != m:
        raise ScenarioError(f"base_curv must have {m} entries")


def load_scenario(source, *, require_bundle=True) -> Scenario:
    """Parse and fully validate a scenario from a path, JSON text or dict."""
    base_dir = Path(".")
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        try:
            is_file = path.is_file()
        except OSError:
            is_file = False
        if is_file:
            base_dir = path.parent
            text = path.read_text()
        else:
            text = str(source)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    errors = sorted(jsonschema.Draft7Validator(SCENARIO_SCHEMA).iter_errors(data),
                    key=lambda e: (str(list(e.absolute_path)), e.message))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(x) for x in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ScenarioError("; ".join(msgs))
    spec = None
    if "bundle" in data:
        spec = resolve_bundle(data["bundle"], base_dir)
        report = validate(spec)
        if not report.ok:
            raise InvalidSpec(report.failures)
        _check_indices(data, spec)
    elif require_bundle:
        raise ScenarioError("scenario needs a 'bundle'")
    return Scenario(data=data, spec=spec, base_dir=base_dir)
