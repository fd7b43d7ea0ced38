"""JSON run configuration: schema, defaults and construction of model objects.

A configuration has the sections ``arms``, ``covariates``, ``target``,
``policy``, ``trial``, ``mc`` and ``output``. It is validated against
:data:`SCHEMA` (unknown keys are rejected), every default is filled in, and
the fully resolved document is what gets echoed into output files.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import jsonschema

from .covariates import Bernoulli, Categorical, CovariateDistribution, Gaussian, Intercept, Uniform
from .designs import CADBCD, ZHCC, CompleteRandomization, default_m0
from .glm import BERNOULLI, DEFAULT_BOX, POISSON, ArmModel, DimensionError, normal
from .montecarlo import MCConfig
from .targets import ANALYTIC, DEFAULT_FD_STEP, FINITE_DIFFERENCE, RSIHR, Fixed, NeymanBinary
from .trial import TrialConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


_NUMBER = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}


def _closed(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_ARM = _closed(
    {
        "family": {"enum": ["bernoulli_logit", "poisson_log", "normal_identity"]},
        "theta": {"type": "array", "items": _NUMBER, "minItems": 1},
        "box": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        "phi": {"type": "number", "exclusiveMinimum": 0},
    },
    required=["family", "theta"],
)

_COMPONENT = {
    "oneOf": [
        _closed({"type": {"const": "intercept"}}, ["type"]),
        _closed({"type": {"const": "bernoulli"}, "p": _NUMBER}, ["type", "p"]),
        _closed({"type": {"const": "categorical"}, "probs": {"type": "array", "items": _NUMBER, "minItems": 2}}, ["type", "probs"]),
        _closed({"type": {"const": "uniform"}, "a": _NUMBER, "b": _NUMBER}, ["type", "a", "b"]),
        _closed({"type": {"const": "gaussian"}, "mean": _NUMBER, "sd": _NUMBER}, ["type", "mean", "sd"]),
    ]
}

SCHEMA = _closed(
    {
        "arms": {"type": "array", "items": _ARM, "minItems": 2, "maxItems": 2},
        "covariates": {"type": "array", "items": _COMPONENT, "minItems": 1},
        "target": _closed(
            {
                "variant": {"enum": ["rsihr", "neyman", "fixed"]},
                "gradient_mode": {"enum": [ANALYTIC, FINITE_DIFFERENCE]},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
                "c": _NUMBER,
            },
            required=["variant"],
        ),
        "policy": _closed(
            {
                "variant": {"enum": ["cadbcd", "zhcc", "complete_randomization"]},
                "gamma": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]},
                "m0": _POS_INT,
                "p": _NUMBER,
            },
            required=["variant"],
        ),
        "trial": _closed(
            {
                "n": _POS_INT,
                "refit_stride": _POS_INT,
                "seed": {"type": "integer", "minimum": 0},
                "exact_rho": {"type": "boolean"},
                "keep_history": {"type": "boolean"},
            },
            required=["n"],
        ),
        "mc": _closed({"replications": {"type": "integer"}, "base_seed": {"type": "integer", "minimum": 0}}),
        "output": _closed({"format": {"enum": ["json", "csv"]}, "path": {"type": "string"}}),
    },
    required=["arms", "covariates", "target", "policy", "trial"],
)


def _path(parts) -> str:
    return ".".join(str(p) for p in parts)


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    # oneOf failures are reported against the branch that matched the
    # declared type, which names the field the user actually got wrong.
    if err.validator == "oneOf" and isinstance(err.instance, dict) and err.context:
        kind = err.instance.get("type")
        branches = err.schema["oneOf"]
        for sub in err.context:
            branch = branches[sub.relative_schema_path[0]]
            if branch.get("properties", {}).get("type", {}).get("const") == kind:
                return _schema_error(sub)
    path = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return ConfigError(_path(path + missing[:1]), "required field is missing")
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ConfigError(_path(path + extra[:1]), "unknown key")
    return ConfigError(_path(path), err.message)


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise _schema_error(errors[0])


def resolve(doc: dict) -> dict:
    """Validate ``doc`` and return a copy with every default filled in."""
    validate(doc)
    out = copy.deepcopy(doc)
    d = sum(_component_dim(c) for c in out["covariates"])
    for arm in out["arms"]:
        arm.setdefault("box", list(DEFAULT_BOX))
        arm.setdefault("phi", 1.0)
    target = out["target"]
    target.setdefault("gradient_mode", ANALYTIC)
    target.setdefault("fd_step", DEFAULT_FD_STEP)
    if target["variant"] == "fixed":
        target.setdefault("c", 0.5)
    policy = out["policy"]
    policy.setdefault("m0", default_m0(d))
    if policy["variant"] == "cadbcd":
        policy.setdefault("gamma", 2.0)
    if policy["variant"] == "complete_randomization":
        policy.setdefault("p", 0.5)
    trial = out["trial"]
    trial.setdefault("refit_stride", 1)
    trial.setdefault("seed", 0)
    trial.setdefault("exact_rho", True)
    trial.setdefault("keep_history", False)
    mc = out.setdefault("mc", {})
    mc.setdefault("replications", 1000)
    mc.setdefault("base_seed", 0)
    output = out.setdefault("output", {})
    output.setdefault("format", "json")
    return out


def _component_dim(spec: dict) -> int:
    return len(spec["probs"]) - 1 if spec["type"] == "categorical" else 1


def load(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    return resolve(doc)


def _family(spec: dict):
    kind = spec["family"]
    if kind == "bernoulli_logit":
        return BERNOULLI
    if kind == "poisson_log":
        return POISSON
    return normal(spec["phi"])


def _component(spec: dict):
    kind = spec["type"]
    if kind == "intercept":
        return Intercept()
    if kind == "bernoulli":
        return Bernoulli(spec["p"])
    if kind == "categorical":
        return Categorical(tuple(spec["probs"]))
    if kind == "uniform":
        return Uniform(spec["a"], spec["b"])
    return Gaussian(spec["mean"], spec["sd"])


def _gamma(value) -> float:
    return math.inf if value == "inf" else float(value)


@dataclass(frozen=True, eq=False)
class Built:
    trial: TrialConfig
    resolved: dict

    def mc(self, replications: int | None = None) -> MCConfig:
        mc = self.resolved["mc"]
        reps = mc["replications"] if replications is None else replications
        if reps < 2:
            raise ConfigError("mc.replications", "at least two replications are required")
        return MCConfig(self.trial, reps, mc["base_seed"])


def _guard(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, DimensionError) as exc:
        raise ConfigError(path, str(exc)) from exc


def build(resolved: dict) -> Built:
    """Model objects for an already :func:`resolve`-d configuration."""
    families = [_family(a) for a in resolved["arms"]]
    arms = tuple(
        _guard(f"arms.{k}", ArmModel, fam, spec["theta"], tuple(spec["box"]))
        for k, (fam, spec) in enumerate(zip(families, resolved["arms"]))
    )
    comps = [_guard(f"covariates.{i}", _component, c) for i, c in enumerate(resolved["covariates"])]
    dist = CovariateDistribution(comps)
    for k, arm in enumerate(arms):
        if arm.d != dist.d:
            raise ConfigError(f"arms.{k}.theta", f"has {arm.d} entries but the covariates have dimension {dist.d}")

    t = resolved["target"]
    common = dict(families=tuple(families), gradient_mode=t["gradient_mode"], fd_step=t["fd_step"])
    variant = t["variant"]
    if variant == "rsihr":
        target = _guard("target", RSIHR, **common)
    elif variant == "neyman":
        target = _guard("target", NeymanBinary, **common)
    else:
        target = _guard("target.c", Fixed, c=t["c"], **common)

    p = resolved["policy"]
    if p["variant"] == "cadbcd":
        policy = _guard("policy", CADBCD, _gamma(p["gamma"]), p["m0"])
    elif p["variant"] == "zhcc":
        policy = _guard("policy", ZHCC, p["m0"])
    else:
        policy = _guard("policy.p", CompleteRandomization, p["p"], p["m0"])

    tr = resolved["trial"]
    if tr["n"] <= 2 * p["m0"]:
        raise ConfigError("trial.n", f"must exceed the burn-in length 2*m0 = {2 * p['m0']}")
    trial = _guard(
        "trial",
        TrialConfig,
        tr["n"],
        arms,
        dist,
        target,
        policy,
        refit_stride=tr["refit_stride"],
        seed=tr["seed"],
        keep_history=tr["keep_history"],
        exact_rho=tr["exact_rho"],
    )
    return Built(trial, resolved)


def load_and_build(path: str) -> Built:
    return build(load(path))
