"""Configuration documents: JSON schema, loading, and problem construction.

A configuration has sections mesh / operator / nonlinearity / discounts /
cost / data / admissible / time, plus optional optimizer and horizon_study
sections.  Closed-form data fields use the named templates of
:mod:`horizonopt.descriptors`.
"""

from __future__ import annotations

import json

import jsonschema

from .admissible import AdmissibleSet
from .descriptors import field_from_config
from .horizon import HorizonStudyConfig
from .mesh import interval_mesh, rectangle_mesh
from .optimizer import OptimizerConfig
from .problem import (Discounts, EllipticForm, Nonlinearity, ProblemSpec,
                      builtin_nonlinearities, default_aux_rate,
                      default_integrability_exponent, linear_nonlinearity)
from .solvers import NewtonConfig
from .spaces import TimeGrid


class ConfigError(ValueError):
    """Malformed configuration document (parse or schema failure)."""


_FIELD_SCHEMA = {
    "type": "object",
    "properties": {"template": {"type": "string"}},
    "required": ["template"],
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "mesh": {
            "type": "object",
            "properties": {
                "dimension": {"enum": [1, 2]},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "nodes": {"type": "integer", "minimum": 3},
                "lengths": {"type": "array", "items": {"type": "number"}, "minItems": 2,
                            "maxItems": 2},
                "shape": {"type": "array", "items": {"type": "integer"}, "minItems": 2,
                          "maxItems": 2},
                "control": {"type": "object"},
                "observation": {"type": "object"},
            },
            "required": ["control"],
        },
        "operator": {
            "type": "object",
            "properties": {
                "diffusion": {"type": ["number", "array"]},
                "reaction": {"type": ["number", "array"]},
            },
        },
        "nonlinearity": {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "coefficient": {"type": "number"},
            },
            "required": ["name"],
        },
        "discounts": {
            "type": "object",
            "properties": {
                "state_discount": {"type": "number"},
                "control_discount": {"type": "number"},
                "aux_rate": {"type": "number"},
                "integrability_exponent": {"type": "number"},
                "enforce_second_order": {"type": "boolean"},
            },
            "required": ["state_discount", "control_discount"],
        },
        "cost": {
            "type": "object",
            "properties": {
                "control_weight": {"type": "number", "exclusiveMinimum": 0},
                "track_on_observation": {"type": "boolean"},
            },
            "required": ["control_weight"],
        },
        "data": {
            "type": "object",
            "properties": {
                "initial": _FIELD_SCHEMA,
                "source": _FIELD_SCHEMA,
                "target": _FIELD_SCHEMA,
            },
            "required": ["initial", "source", "target"],
        },
        "admissible": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["ball", "box"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "lower": {"type": "number"},
                "upper": {"type": "number"},
            },
            "required": ["kind"],
        },
        "time": {
            "type": "object",
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["horizon", "step"],
        },
        "optimizer": {"type": "object"},
        "horizon_study": {
            "type": "object",
            "properties": {
                "horizons": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "reference_horizon": {"type": "number"},
                "extension": {"enum": ["reference", "zero"]},
            },
            "required": ["horizons"],
        },
        "seed": {"type": "integer"},
    },
    "required": ["mesh", "nonlinearity", "discounts", "cost", "data", "admissible", "time"],
}


def load_config(path) -> dict:
    """Read and schema-validate a configuration file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_config(raw)
    return raw


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"configuration field {path}: {exc.message}") from exc


def _build_mesh(mcfg: dict):
    dim = mcfg.get("dimension", 1)
    if dim == 1:
        ctrl = mcfg["control"]
        obs = mcfg.get("observation")
        return interval_mesh(
            mcfg.get("length", 1.0), mcfg.get("nodes", 51),
            control=(ctrl["lo"], ctrl["hi"]),
            observation=None if obs is None else (obs["lo"], obs["hi"]))
    ctrl = mcfg["control"]["box"]
    obs = mcfg.get("observation")
    return rectangle_mesh(
        tuple(mcfg.get("lengths", (1.0, 1.0))), tuple(mcfg.get("shape", (16, 16))),
        control=tuple((lo, hi) for lo, hi in ctrl),
        observation=None if obs is None else tuple((lo, hi) for lo, hi in obs["box"]))


def _build_nonlinearity(ncfg: dict) -> Nonlinearity:
    name = ncfg["name"]
    if name == "linear":
        return linear_nonlinearity(ncfg.get("coefficient", 1.0))
    catalog = builtin_nonlinearities()
    if name not in catalog:
        raise ConfigError(f"unknown nonlinearity {name!r}; "
                          f"available: linear, {', '.join(sorted(catalog))}")
    return catalog[name]


def build_problem(cfg: dict) -> ProblemSpec:
    """Construct a ProblemSpec from a validated configuration dictionary."""
    validate_config(cfg)
    mesh = _build_mesh(cfg["mesh"])
    ocfg = cfg.get("operator", {})
    form = EllipticForm(diffusion=ocfg.get("diffusion", 1.0),
                        reaction=ocfg.get("reaction", 0.0))
    nonlin = _build_nonlinearity(cfg["nonlinearity"])
    dcfg = cfg["discounts"]
    aux = dcfg.get("aux_rate")
    if aux is None:
        aux = default_aux_rate(dcfg["state_discount"], nonlin.growth_exponent,
                               nonlin.min_slope)
    p = dcfg.get("integrability_exponent")
    if p is None:
        p = default_integrability_exponent(mesh.dimension)
    discounts = Discounts(
        state_rate=float(dcfg["state_discount"]),
        control_rate=float(dcfg["control_discount"]),
        aux_rate=float(aux),
        growth_exponent=nonlin.growth_exponent,
        integrability_exponent=float(p),
        enforce_second_order=bool(dcfg.get("enforce_second_order", False)),
    )
    acfg = cfg["admissible"]
    if acfg["kind"] == "ball":
        if "radius" not in acfg:
            raise ConfigError("ball admissible set requires a radius")
        admissible = AdmissibleSet("ball", radius=float(acfg["radius"]))
    else:
        if "lower" not in acfg or "upper" not in acfg:
            raise ConfigError("box admissible set requires lower and upper bounds")
        admissible = AdmissibleSet("box", lower=float(acfg["lower"]),
                                   upper=float(acfg["upper"]))
    tcfg = cfg["time"]
    try:
        grid = TimeGrid(float(tcfg["horizon"]), float(tcfg["step"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = cfg["data"]
    try:
        initial = field_from_config(data["initial"])
        source = field_from_config(data["source"])
        target = field_from_config(data["target"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"data field: {exc}") from exc
    ccfg = cfg["cost"]
    return ProblemSpec(
        mesh=mesh, operator=form, nonlinearity=nonlin, discounts=discounts,
        grid=grid, initial_state=initial, source=source, target=target,
        control_weight=float(ccfg["control_weight"]), admissible=admissible,
        track_on_observation=bool(ccfg.get("track_on_observation", True)),
    )


def build_optimizer_config(cfg: dict) -> OptimizerConfig:
    ocfg = dict(cfg.get("optimizer", {}))
    newton = NewtonConfig(**ocfg.pop("newton", {}))
    known = {"initial_step", "armijo_slope", "backtrack", "tolerance",
             "max_iterations", "min_step", "seed", "initial_control"}
    unknown = set(ocfg) - known
    if unknown:
        raise ConfigError(f"unknown optimizer options: {sorted(unknown)}")
    return OptimizerConfig(newton=newton, **ocfg)


def build_horizon_config(cfg: dict) -> HorizonStudyConfig:
    hcfg = cfg.get("horizon_study")
    if hcfg is None:
        raise ConfigError("configuration has no horizon_study section")
    return HorizonStudyConfig(
        horizons=tuple(hcfg["horizons"]),
        reference_horizon=hcfg.get("reference_horizon"),
        extension=hcfg.get("extension", "reference"),
        optimizer=build_optimizer_config(cfg),
    )


def apply_overrides(cfg: dict, assignments: list) -> dict:
    """Apply ``section.key=value`` command-line overrides to a config dict."""
    out = json.loads(json.dumps(cfg))
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object")
        node[keys[-1]] = value
    validate_config(out)
    return out
