"""Scenario configuration: YAML text → validated ScenarioConfig.

Grammar (one scenario per file)::

    metric: {name: minkowski, params: {n: 4}}
    hypersurface:
      kind: cone            # cone | horizon | custom-section
      tip: [0, 0, 0, 0]     # cone only
      s_min: 0.1            # cone only
      s_max: 4.0
      grid: [8, 16]         # section sizes (each ≥ 8)
      window: [0.0, 1.0]    # horizon / custom-section
      sections: {t1: "0", t2: "0.5 + 0.1*cos(u1)"}
      embedding: [...]      # custom-section: n expressions in u1..u_{n-2}
      normal: [...]         # custom-section: n expressions for L
      box: [[0, 1], [0, 1]] # custom-section parameter box
    weight: zero            # or a DSL expression in the coordinates and s
    N: 4
    checks: [nc1, nce, riccati, lightcone, hawking, rigidity, stability, rescaling]
    tolerances: {tol_c: 1.0e-7, tol_e: 1.0e-6, riccati: 1.0e-6, lightcone: 1.0e-7, hawking: 1.0e-8}
    nce: {pairs: 20, thin_window: auto}
    rescaling: {samples: 5}
    stability: {perturbation: focusing, eps: [0.0, 0.01, 0.02], resolutions: [64, 128]}
    numerics: {steps_per_unit: 128}
    output: {dir: out, patch_csv: false}
    seed: 0
"""

import copy
from dataclasses import dataclass

import jsonschema
import yaml

from .errors import ParseError, UnknownMetric, ValidationError
from .expr import parse_expression

CHECKS = ("nc1", "nce", "riccati", "lightcone", "hawking", "rigidity", "stability", "rescaling")

_num = {"type": "number"}
_expr = {"type": ["string", "number"]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["metric", "hypersurface", "checks"],
    "properties": {
        "metric": {
            "type": "object", "additionalProperties": False, "required": ["name"],
            "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
        },
        "hypersurface": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cone", "horizon", "custom-section"]},
                "tip": {"type": "array", "items": _num},
                "s_min": {"type": "number", "exclusiveMinimum": 0},
                "s_max": {"type": "number", "exclusiveMinimum": 0},
                "s_ref": {"type": "number", "exclusiveMinimum": 0},
                "grid": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 1, "maxItems": 3},
                "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "sections": {"type": "object", "additionalProperties": False,
                             "properties": {"t1": _expr, "t2": _expr}},
                "embedding": {"type": "array", "items": _expr},
                "normal": {"type": "array", "items": _expr},
                "box": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
            },
        },
        "weight": _expr,
        "N": _num,
        "checks": {"type": "array", "items": {"enum": list(CHECKS)}, "minItems": 1},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("tol_c", "tol_e", "riccati", "lightcone", "hawking")},
        },
        "nce": {"type": "object", "additionalProperties": False,
                "properties": {"pairs": {"type": "integer", "minimum": 0},
                               "thin_window": {"enum": ["auto", True, False]}}},
        "rescaling": {"type": "object", "additionalProperties": False,
                      "properties": {"samples": {"type": "integer", "minimum": 1}}},
        "stability": {"type": "object", "additionalProperties": False,
                      "properties": {"perturbation": {"type": ["string", "object"]},
                                     "eps": {"type": "array", "items": _num, "minItems": 1},
                                     "resolutions": {"type": "array", "items": {"type": "integer", "minimum": 8},
                                                     "minItems": 1}}},
        "numerics": {"type": "object", "additionalProperties": False,
                     "properties": {"steps_per_unit": {"type": "integer", "minimum": 8},
                                    "store_every": {"type": "integer", "minimum": 1}}},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"}, "patch_csv": {"type": "boolean"}}},
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "weight": "zero",
    "tolerances": {"tol_c": 1e-7, "tol_e": 1e-6, "riccati": 1e-6, "lightcone": 1e-7, "hawking": 1e-8},
    "nce": {"pairs": 20, "thin_window": "auto"},
    "rescaling": {"samples": 5},
    "stability": {"perturbation": "focusing", "eps": [0.0, 0.005, 0.01, 0.02], "resolutions": [64, 128]},
    "numerics": {"steps_per_unit": 128, "store_every": 4},
    "output": {"dir": "out", "patch_csv": False},
    "seed": 0,
}

HYPERSURFACE_DEFAULTS = {
    "cone": {"s_min": 0.1, "s_max": 4.0, "grid": [8, 16]},
    "horizon": {"window": [0.0, 1.0], "grid": [8, 16], "sections": {"t1": 0, "t2": 0.5}},
    "custom-section": {"window": [0.0, 1.0], "grid": [8, 8], "sections": {"t1": 0, "t2": 0.5}},
}


@dataclass
class ScenarioConfig:
    metric: dict
    hypersurface: dict
    weight: str
    N: float
    checks: list
    tolerances: dict
    nce: dict
    rescaling: dict
    stability: dict
    numerics: dict
    output: dict
    seed: int

    def as_dict(self):
        return copy.deepcopy(self.__dict__)


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _load_yaml(text):
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(f"malformed config: {exc.problem or exc}", line, col) from None
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed config: {exc}", None, None) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping at the top level", 1, 1)
    return data


def _path(err):
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def parse_config(text):
    """Parse and validate a scenario; defaults are filled, unknown keys rejected."""
    from .spacetime import KINDS, make_metric

    data = _load_yaml(text)
    violations = []
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    for err in sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        violations.append(f"{_path(err)}: {err.message}")
    if violations:
        N = data.get("N")
        if isinstance(N, (int, float)) and not N > 2:
            violations.append("N must exceed 2")
        raise ValidationError(violations)
    data = _merge(DEFAULTS, data)
    hs = data["hypersurface"]
    data["hypersurface"] = _merge(HYPERSURFACE_DEFAULTS[hs["kind"]], hs)
    mname = data["metric"]["name"]
    if mname not in KINDS:
        raise UnknownMetric(f"unknown metric {mname!r}; known: {', '.join(KINDS)}")
    try:
        model = make_metric(mname, data["metric"].get("params", {}))
    except ValidationError as exc:
        violations.extend(f"metric.params: {v}" for v in exc.violations)
        model = None
    if model is not None:
        n = model.n
        N = data.get("N", n)
        data["N"] = float(N)
        if not N > 2:
            violations.append("N must exceed 2")
        elif N < n:
            violations.append(f"N must be at least the dimension {n}")
        w = data["weight"]
        if isinstance(w, (int, float)):
            data["weight"] = w = str(w)
        if w != "zero":
            try:
                e = parse_expression(w, list(model.coords) + ["s"])
                if N == n and e.free_names:
                    violations.append("a non-constant weight needs N > n")
            except ParseError as exc:
                violations.append(f"weight: {exc}")
        hs = data["hypersurface"]
        if hs["kind"] == "cone":
            tip = hs.get("tip")
            if tip is not None and len(tip) != n:
                violations.append(f"hypersurface.tip must have {n} entries")
            if hs["s_min"] >= hs["s_max"]:
                violations.append("hypersurface.s_min must be below s_max")
            if len(hs["grid"]) != 2 and n - 2 >= 2:
                violations.append("hypersurface.grid must be [n_lat, n_lon]")
        else:
            if hs["window"][0] >= hs["window"][1]:
                violations.append("hypersurface.window must be increasing")
            names = [f"u{i + 1}" for i in range(n - 2)]
            for key in ("t1", "t2"):
                try:
                    parse_expression(str(hs["sections"].get(key, 0)), names)
                except ParseError as exc:
                    violations.append(f"hypersurface.sections.{key}: {exc}")
            if hs["kind"] == "horizon" and mname not in ("schwarzschild-lemaitre", "product-surface-M2"):
                violations.append(f"horizon sections are not defined for metric {mname!r}")
            if hs["kind"] == "custom-section":
                for key in ("embedding", "normal"):
                    if len(hs.get(key, [])) != n:
                        violations.append(f"hypersurface.{key} needs {n} expressions")
                    for j, ex in enumerate(hs.get(key, [])):
                        try:
                            parse_expression(str(ex), names)
                        except ParseError as exc:
                            violations.append(f"hypersurface.{key}[{j}]: {exc}")
                if len(hs.get("box", [])) != n - 2:
                    violations.append(f"hypersurface.box needs {n - 2} intervals")
                if len(hs["grid"]) != n - 2:
                    violations.append(f"hypersurface.grid needs {n - 2} sizes")
        if "lightcone" in data["checks"] and hs["kind"] != "cone":
            violations.append("the lightcone check needs a cone hypersurface")
        if "hawking" in data["checks"] and hs["kind"] == "cone":
            violations.append("the hawking check needs a horizon or custom section")
    if violations:
        raise ValidationError(violations)
    return ScenarioConfig(**{k: data[k] for k in ScenarioConfig.__dataclass_fields__})
