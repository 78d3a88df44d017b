"""Experiment configuration: JSON schema, validation, and default tables.

Configs are plain JSON with explicit seeds.  Omitted step sizes are filled
from the benchmark defaults below, keyed by sampler and by the target's
step class; ratio-network depths likewise default per target family.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from . import targets as targets_mod
from .metrics import TEST_FUNCTION_KINDS

__all__ = [
    "ConfigError",
    "TargetInfo",
    "SamplerSpec",
    "ExperimentConfig",
    "TARGET_REGISTRY",
    "STEP_SIZE_DEFAULTS",
    "build_target",
    "parse_config",
    "parse_config_dict",
    "serialize_config",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the JSON path."""


SAMPLER_KINDS = ("regs", "svgd", "ula", "mala")

# step-size defaults per (sampler kind, target step class)
STEP_SIZE_DEFAULTS: dict[tuple[str, str], float | None] = {
    ("regs", "2gaussians"): 5e-4,
    ("regs", "8gaussians"): 5e-4,
    ("regs", "9gaussians"): 5e-4,
    ("regs", "25gaussians"): 5e-4,
    ("regs", "gaussian"): 5e-3,
    ("regs", "bgir"): 2e-3,
    ("regs", "covertype"): 2e-3,
    ("svgd", "2gaussians"): 2e-2,
    ("svgd", "8gaussians"): 2e-2,
    ("svgd", "9gaussians"): 2e-2,
    ("svgd", "25gaussians"): 2e-2,
    ("svgd", "gaussian"): 2e-2,
    ("svgd", "bgir"): 5e-2,
    ("svgd", "covertype"): 5e-2,
    ("ula", "2gaussians"): 2e-2,
    ("ula", "8gaussians"): 5e-2,
    ("ula", "9gaussians"): 1e-1,
    ("ula", "25gaussians"): 5e-2,
    ("ula", "gaussian"): 2e-2,
    ("ula", "bgir"): 1e-3,
    ("ula", "covertype"): 1e-4,
    ("mala", "2gaussians"): 5e-2,
    ("mala", "8gaussians"): 2e-1,
    ("mala", "9gaussians"): 5e-1,
    ("mala", "25gaussians"): 5e-1,
    ("mala", "gaussian"): 5e-2,
    ("mala", "bgir"): 1e-3,
    ("mala", "covertype"): None,  # known to not converge; no default provided
}


@dataclass(frozen=True)
class TargetInfo:
    builder: Callable[[dict], "targets_mod.UnnormalizedTarget"]
    step_class: str
    net_depth: int
    default_particles: int
    allowed_params: frozenset[str]
    kind: str = "density"  # "density" | "blr"


def _scenario_builder(sid: int, **fixed):
    def build(params: dict):
        return targets_mod.make_scenario(sid, **{**fixed, **params})

    return build


def _ar_builder(params: dict):
    return targets_mod.make_ar_gaussian(int(params.get("d", 10)), float(params.get("rho", 0.7)))


UNEQUAL_8 = tuple(w / 16.0 for w in (1, 1, 1, 1, 3, 3, 3, 3))
UNEQUAL_25 = tuple((1 / 51.0 if i < 12 else 3 / 51.0) for i in range(25))

TARGET_REGISTRY: dict[str, TargetInfo] = {
    "2gaussians_1d1": TargetInfo(_scenario_builder(1), "2gaussians", 3, 1000, frozenset()),
    "2gaussians_1d2": TargetInfo(_scenario_builder(2), "2gaussians", 3, 1000, frozenset()),
    "2gaussians_1d3": TargetInfo(_scenario_builder(3), "2gaussians", 3, 1000, frozenset()),
    "2gaussians": TargetInfo(_scenario_builder(4), "2gaussians", 3, 1000, frozenset({"r", "sigma2", "weights"})),
    "8gaussians": TargetInfo(_scenario_builder(5), "8gaussians", 4, 2000, frozenset({"r", "sigma2", "weights"})),
    "8gaussians_unequal": TargetInfo(
        _scenario_builder(5, weights=UNEQUAL_8), "8gaussians", 4, 2000, frozenset({"r", "sigma2"})
    ),
    "9gaussians": TargetInfo(_scenario_builder(6), "9gaussians", 4, 2000, frozenset({"sigma2", "weights"})),
    "16gaussians_1c": TargetInfo(_scenario_builder(7), "25gaussians", 6, 2000, frozenset({"weights"})),
    "16gaussians_2c": TargetInfo(_scenario_builder(8), "25gaussians", 6, 2000, frozenset({"weights"})),
    "25gaussians": TargetInfo(_scenario_builder(9), "25gaussians", 6, 5000, frozenset({"sigma2", "weights"})),
    "25gaussians_unequal": TargetInfo(
        _scenario_builder(9, weights=UNEQUAL_25), "25gaussians", 6, 5000, frozenset({"sigma2"})
    ),
    "49gaussians": TargetInfo(_scenario_builder(10), "25gaussians", 6, 5000, frozenset({"weights"})),
    "81gaussians": TargetInfo(_scenario_builder(11), "25gaussians", 6, 5000, frozenset({"weights"})),
    "1circle": TargetInfo(_scenario_builder(12), "8gaussians", 4, 2000, frozenset({"noise"})),
    "2circles": TargetInfo(_scenario_builder(13), "8gaussians", 4, 2000, frozenset({"noise"})),
    "1spiral": TargetInfo(_scenario_builder(14), "8gaussians", 4, 2000, frozenset({"noise"})),
    "2spirals": TargetInfo(_scenario_builder(15), "8gaussians", 4, 2000, frozenset({"noise"})),
    "moons": TargetInfo(_scenario_builder(16), "8gaussians", 4, 2000, frozenset({"noise"})),
    "ar_gaussian": TargetInfo(_ar_builder, "gaussian", 3, 5000, frozenset({"d", "rho"})),
    "blr_synthetic": TargetInfo(
        lambda params: None,  # built by the harness together with its dataset
        "bgir",
        3,
        5000,
        frozenset({"n", "d_x", "data_seed", "gamma_rate"}),
        kind="blr",
    ),
    "blr": TargetInfo(
        lambda params: None,
        "bgir",
        3,
        5000,
        frozenset({"path", "subsample", "splits", "train_fraction", "covertype", "gamma_rate"}),
        kind="blr",
    ),
}


def build_target(name: str, params: dict) -> "targets_mod.UnnormalizedTarget":
    info = TARGET_REGISTRY[name]
    if info.kind == "blr":
        raise ConfigError(f"target {name!r} is dataset-backed; the harness builds it per split")
    return info.builder(params)


@dataclass(frozen=True)
class SamplerSpec:
    name: str  # unique id, e.g. "ula_50"
    kind: str  # one of SAMPLER_KINDS
    step_size: float | None
    chains: int = 1
    burn_in: int = 1000
    iterations: int = 10000
    net_depth: int = 4
    net_width: int = 128
    inner_steps_first: int = 200
    inner_steps_warm: int = 20
    thin: int = 1

    def to_dict(self) -> dict[str, Any]:
        # every parser-accepted key is emitted so that parse(serialize(.))
        # reproduces the spec exactly (chain count is encoded in the name)
        return {
            "name": self.name,
            "step_size": self.step_size,
            "burn_in": self.burn_in,
            "iterations": self.iterations,
            "net_depth": self.net_depth,
            "net_width": self.net_width,
            "inner_steps_first": self.inner_steps_first,
            "inner_steps_warm": self.inner_steps_warm,
            "thin": self.thin,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    target_name: str
    target_params: dict
    samplers: tuple[SamplerSpec, ...]
    metrics: tuple[str, ...]
    seed: int
    particles: int
    output_dir: str
    direction: str = "ones"  # "ones" | "random"
    figures: bool = True
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": {"name": self.target_name, "params": dict(self.target_params)},
            "samplers": [s.to_dict() for s in self.samplers],
            "metrics": list(self.metrics),
            "seed": self.seed,
            "particles": self.particles,
            "output_dir": self.output_dir,
            "direction": self.direction,
            "figures": self.figures,
        }


_CHAIN_NAME = re.compile(r"^(ula|mala)(?:_(\d+))?$")


def _sampler_kind(name: str) -> tuple[str, int]:
    if name in ("regs", "svgd"):
        return name, 1
    match = _CHAIN_NAME.match(name)
    if match:
        return match.group(1), int(match.group(2) or 1)
    raise ConfigError(
        f"unknown sampler {name!r}; expected regs, svgd, ula[_k], or mala[_k]"
    )


def _require_keys(blob: dict, allowed: set[str], path: str) -> None:
    unknown = set(blob) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def parse_config(text: str) -> ExperimentConfig:
    try:
        blob = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: not valid JSON ({exc})") from None
    return parse_config_dict(blob)


def parse_config_dict(blob: dict) -> ExperimentConfig:
    _expect(isinstance(blob, dict), "$: top level must be a JSON object")
    _require_keys(
        blob,
        {"target", "sampler", "samplers", "metrics", "seed", "particles", "output_dir", "direction", "figures"},
        "$",
    )

    if "seed" not in blob:
        raise ConfigError("$.seed: missing (explicit seeds are required)")
    seed = blob["seed"]
    _expect(isinstance(seed, int) and not isinstance(seed, bool), "$.seed: must be an integer")

    target = blob.get("target")
    _expect(target is not None, "$.target: missing")
    if isinstance(target, str):
        target_name, target_params = target, {}
    elif isinstance(target, dict):
        _require_keys(target, {"name", "params"}, "$.target")
        target_name = target.get("name")
        target_params = target.get("params", {})
        _expect(isinstance(target_params, dict), "$.target.params: must be an object")
    else:
        raise ConfigError("$.target: must be a name or {name, params} object")
    _expect(isinstance(target_name, str), "$.target.name: must be a string")
    if target_name not in TARGET_REGISTRY:
        raise ConfigError(
            f"$.target: unknown target {target_name!r}; known: {sorted(TARGET_REGISTRY)}"
        )
    info = TARGET_REGISTRY[target_name]
    bad_params = set(target_params) - set(info.allowed_params)
    if bad_params:
        raise ConfigError(f"$.target.params: unknown keys {sorted(bad_params)} for {target_name!r}")
    step_class = info.step_class
    if target_name == "blr" and target_params.get("covertype"):
        step_class = "covertype"

    raw_samplers = blob.get("samplers", blob.get("sampler", []))
    if "samplers" in blob and "sampler" in blob:
        raise ConfigError("$: give either 'sampler' or 'samplers', not both")
    if isinstance(raw_samplers, (str, dict)):
        raw_samplers = [raw_samplers]
    _expect(isinstance(raw_samplers, list), "$.samplers: must be a list")

    particles = blob.get("particles", info.default_particles)
    _expect(
        isinstance(particles, int) and particles >= 1, "$.particles: must be a positive integer"
    )

    warnings: list[str] = []
    specs: list[SamplerSpec] = []
    seen_names: set[str] = set()
    allowed_sampler_keys = {
        "name", "step_size", "burn_in", "iterations", "net_depth", "net_width",
        "inner_steps_first", "inner_steps_warm", "thin",
    }
    for i, entry in enumerate(raw_samplers):
        path = f"$.samplers[{i}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        _expect(isinstance(entry, dict), f"{path}: must be a name or object")
        _require_keys(entry, allowed_sampler_keys, path)
        name = entry.get("name")
        _expect(isinstance(name, str), f"{path}.name: must be a string")
        if name in seen_names:
            raise ConfigError(f"{path}: duplicate sampler name {name!r}")
        seen_names.add(name)
        kind, chains = _sampler_kind(name)

        step = entry.get("step_size")
        if step is None:
            step = STEP_SIZE_DEFAULTS[(kind, step_class)]
            if step is None:
                warnings.append(
                    f"{path}: no default step size for {name!r} on {target_name!r} "
                    "(documented non-convergence); the sampler will be recorded as failed "
                    "unless step_size is set explicitly"
                )
        else:
            _expect(
                isinstance(step, (int, float)) and step > 0, f"{path}.step_size: must be positive"
            )
        default_iters = 2000 if kind == "svgd" else 10000
        spec = SamplerSpec(
            name=name,
            kind=kind,
            step_size=None if step is None else float(step),
            chains=chains,
            burn_in=int(entry.get("burn_in", 1000)),
            iterations=int(entry.get("iterations", default_iters)),
            net_depth=int(entry.get("net_depth", info.net_depth)),
            net_width=int(entry.get("net_width", 128)),
            inner_steps_first=int(entry.get("inner_steps_first", 200)),
            inner_steps_warm=int(entry.get("inner_steps_warm", 20)),
            thin=int(entry.get("thin", 1)),
        )
        _expect(spec.burn_in >= 0, f"{path}.burn_in: must be non-negative")
        _expect(spec.iterations >= 0, f"{path}.iterations: must be non-negative")
        specs.append(spec)

    default_metrics = ["accuracy"] if info.kind == "blr" else list(TEST_FUNCTION_KINDS)
    metrics = blob.get("metrics", default_metrics)
    _expect(isinstance(metrics, list), "$.metrics: must be a list")
    valid_metrics = set(TEST_FUNCTION_KINDS) | {"accuracy"}
    for i, m in enumerate(metrics):
        if m not in valid_metrics:
            raise ConfigError(f"$.metrics[{i}]: unknown metric {m!r}; known: {sorted(valid_metrics)}")
        if m == "accuracy" and info.kind != "blr":
            raise ConfigError(f"$.metrics[{i}]: 'accuracy' applies only to blr targets")

    direction = blob.get("direction", "ones")
    _expect(direction in ("ones", "random"), "$.direction: must be 'ones' or 'random'")
    output_dir = blob.get("output_dir", "entflow_out")
    _expect(isinstance(output_dir, str), "$.output_dir: must be a string")
    figures = blob.get("figures", True)
    _expect(isinstance(figures, bool), "$.figures: must be a boolean")

    return ExperimentConfig(
        target_name=target_name,
        target_params=dict(target_params),
        samplers=tuple(specs),
        metrics=tuple(metrics),
        seed=seed,
        particles=particles,
        output_dir=output_dir,
        direction=direction,
        figures=figures,
        warnings=tuple(warnings),
    )


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
