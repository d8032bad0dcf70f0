"""Strict JSON configuration schema for the experiment runner.

A config is a single JSON object:

    {"experiment": "<name>",
     "grid": {"dim": 2, "topology": "torus", "n_per_axis": 16, "extent": 1.0},
     "solver": {"tol": 1e-10, "max_iter": null, "lambda": 1.0},
     "seed": 42,
     "output_path": "out",
     "params": { ... experiment-specific ... }}

Unknown keys anywhere are rejected; "experiment" and "seed" are mandatory.
``--seed`` / ``--out`` on the command line override the file's values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .fields import Grid
from .transport import SolverConfig

EXPERIMENTS = (
    "we-norm",
    "wfr-norm",
    "submersion",
    "divergence-sweep",
    "second-variation",
    "flat-factorize",
    "seq-demo",
    "euler-alpha",
    "path-energy",
    "static-eval",
    "toy-geodesic",
    "bounds",
)

_GRID_KEYS = {"dim", "topology", "n_per_axis", "extent"}
_SOLVER_KEYS = {"tol", "max_iter", "lambda"}
_TOP_KEYS = {"experiment", "grid", "solver", "seed", "output_path", "params"}

# experiment-specific parameter names and their defaults
PARAM_SCHEMAS = {
    "we-norm": {"n_trials": 3, "modes": 3, "amplitude": 0.2},
    "wfr-norm": {"n_trials": 3, "modes": 3, "amplitude": 0.3},
    "submersion": {"n_trials": 20, "n_perturb": 10, "modes": 3, "amplitude": 0.15},
    "divergence-sweep": {"n_pairs": 1000, "modes": 3, "amplitude": 0.3},
    "second-variation": {"n_triples": 50, "step": 1e-2, "modes": 3, "amplitude": 0.3},
    "flat-factorize": {"n_instances": 5, "n_non_flat": 3, "amplitude": 0.008},
    "seq-demo": {"ns": [8, 12, 16, 20, 24], "n_max": 64, "quad_points": 2049},
    "euler-alpha": {"stencil_order": 4},
    "path-energy": {"n_paths": 10, "n_t": 8, "modes": 3, "amplitude": 0.2},
    "static-eval": {"iters": 12, "modes": 2, "lambda_balance": 1.0, "kind": "kl_met"},
    "toy-geodesic": {"n_t": 16, "amplitude": 0.08, "n_perturb": 10},
    "bounds": {"n_pairs": 5, "n_t": 16, "modes": 3, "amplitude": 0.3},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: Grid
    solver: SolverConfig
    seed: int
    output_path: str | None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "grid": {
                "dim": self.grid.dim,
                "topology": self.grid.topology,
                "n_per_axis": self.grid.n_per_axis,
                "extent": self.grid.extent,
            },
            "solver": {
                "tol": self.solver.tol,
                "max_iter": self.solver.max_iter,
                "lambda": self.solver.lam,
            },
            "seed": self.seed,
            "output_path": self.output_path,
            "params": dict(self.params),
        }


def _reject_unknown(obj, allowed, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _expect(condition, message):
    if not condition:
        raise ConfigError(message)


def parse_config(obj: dict) -> ExperimentConfig:
    _expect(isinstance(obj, dict), "config must be a JSON object")
    _reject_unknown(obj, _TOP_KEYS, "config")
    _expect("experiment" in obj, "config needs an 'experiment' key")
    _expect("seed" in obj, "config needs a 'seed' key")
    experiment = obj["experiment"]
    _expect(experiment in EXPERIMENTS, f"unknown experiment {experiment!r}")
    seed = obj["seed"]
    _expect(
        isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
        "seed must be a 64-bit unsigned integer",
    )

    grid_obj = obj.get("grid", {})
    _expect(isinstance(grid_obj, dict), "'grid' must be an object")
    _reject_unknown(grid_obj, _GRID_KEYS, "grid")
    defaults = {"dim": 2, "topology": "torus", "n_per_axis": 16}
    merged = {**defaults, **grid_obj}
    if merged["topology"] == "box":
        merged.setdefault("extent", 2.0)
    else:
        merged.setdefault("extent", 1.0)
    try:
        grid = Grid(merged["dim"], merged["topology"], merged["n_per_axis"], merged["extent"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc

    solver_obj = obj.get("solver", {})
    _expect(isinstance(solver_obj, dict), "'solver' must be an object")
    _reject_unknown(solver_obj, _SOLVER_KEYS, "solver")
    try:
        solver = SolverConfig(
            tol=float(solver_obj.get("tol", 1e-10)),
            max_iter=solver_obj.get("max_iter"),
            lam=float(solver_obj.get("lambda", 1.0)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from exc

    output_path = obj.get("output_path")
    _expect(
        output_path is None or isinstance(output_path, str),
        "'output_path' must be a string",
    )

    params_obj = obj.get("params", {})
    _expect(isinstance(params_obj, dict), "'params' must be an object")
    schema = PARAM_SCHEMAS[experiment]
    _reject_unknown(params_obj, schema, f"params for {experiment}")
    params = {**schema, **params_obj}

    return ExperimentConfig(
        experiment=experiment,
        grid=grid,
        solver=solver,
        seed=seed,
        output_path=output_path,
        params=params,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(obj)
