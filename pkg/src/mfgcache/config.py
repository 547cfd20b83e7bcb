"""Experiment configuration: TOML files with ``include`` layering and schema checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import CostParams, dbm_to_watts
from .policies import POLICY_NAMES
from .solver import CAPACITY_RULES, SolverConfig

DEFAULTS_NAME = "defaults.toml"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


_NUM = (int, float)

# key path -> accepted types; every key is required after includes are merged
SCHEMA: dict[str, tuple] = {
    "topology.radius": _NUM,
    "topology.ifd": _NUM,
    "topology.ifd_sweep": (list,),
    "topology.users": (int,),
    "topology.pathloss_exponent": _NUM,
    "catalog.files": (int,),
    "catalog.file_size": _NUM,
    "catalog.capacity_files": _NUM,
    "popularity.beta": _NUM,
    "popularity.betas": (list,),
    "popularity.time_variant": (bool,),
    "popularity.period": (int,),
    "arrivals.rate": _NUM,
    "cost.W": _NUM,
    "cost.P": _NUM,
    "cost.noise_dbm": _NUM,
    "cost.R_F": _NUM,
    "cost.a": _NUM,
    "cost.eta": _NUM,
    "cost.eta1": _NUM,
    "cost.eta2": _NUM,
    "cost.omega1": _NUM,
    "cost.omega2": _NUM,
    "solver.Ns": (int,),
    "solver.Nt": (int,),
    "solver.T": _NUM,
    "solver.max_iters": (int,),
    "solver.tol": _NUM,
    "solver.rho": _NUM,
    "solver.eps_diffusion": _NUM,
    "solver.kappa": _NUM,
    "solver.full_eps": _NUM,
    "solver.hjb_tol": _NUM,
    "solver.initial_state": _NUM,
    "simulation.slots": (int,),
    "simulation.slot_duration": (str, int, float),
    "simulation.steps_per_slot": (int,),
    "simulation.policies": (list,),
    "simulation.seed": (int,),
    "simulation.seeds": (list,),
    "simulation.capacity_rule": (str,),
    "simulation.meanfield_bins": (int,),
    "simulation.meanfield_files": (list,),
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read_toml(text: str, origin: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def packaged_defaults_text() -> str:
    return resources.files("mfgcache").joinpath(DEFAULTS_NAME).read_text()


def _resolve_include(name: str, base_dir: Path | None) -> tuple[str, str, Path | None]:
    if base_dir is not None and (base_dir / name).is_file():
        path = base_dir / name
        return path.read_text(), str(path), path.parent
    if Path(name).name == DEFAULTS_NAME:
        return packaged_defaults_text(), f"<packaged {DEFAULTS_NAME}>", None
    raise ConfigError(f"included file {name!r} not found", "include")


def load_tree(text: str, origin: str = "<string>", base_dir: Path | None = None,
              _depth: int = 0) -> dict:
    """Parse TOML text and resolve its ``include`` list (later files win, the includer wins last)."""
    if _depth > 8:
        raise ConfigError("include nesting too deep", "include")
    raw = _read_toml(text, origin)
    includes = raw.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    tree: dict = {}
    for name in includes:
        inc_text, inc_origin, inc_dir = _resolve_include(name, base_dir)
        tree = _merge(tree, load_tree(inc_text, inc_origin, inc_dir, _depth + 1))
    return _merge(tree, raw)


def validate_tree(tree: dict) -> None:
    for path, types in SCHEMA.items():
        section, key = path.split(".")
        node = tree.get(section)
        if not isinstance(node, dict) or key not in node:
            raise ConfigError("required field is missing", path)
        value = node[key]
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(f"expected {types}, got bool", path)
        if not isinstance(value, types):
            raise ConfigError(f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}", path)
    sim = tree["simulation"]
    for name in sim["policies"]:
        if name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r}; known: {', '.join(POLICY_NAMES)}",
                              "simulation.policies")
    if sim["capacity_rule"] not in CAPACITY_RULES:
        raise ConfigError(f"must be one of {CAPACITY_RULES}", "simulation.capacity_rule")
    sd = sim["slot_duration"]
    if isinstance(sd, str) and sd != "auto":
        raise ConfigError('must be "auto" or a positive number', "simulation.slot_duration")
    if not isinstance(sd, str) and not sd > 0:
        raise ConfigError("must be > 0", "simulation.slot_duration")
    if tree["popularity"]["period"] < 1:
        raise ConfigError("must be >= 1", "popularity.period")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully merged configuration tree plus typed views on it."""

    tree: dict

    @classmethod
    def from_tree(cls, tree: dict) -> "ExperimentConfig":
        validate_tree(tree)
        cfg = cls(copy.deepcopy(tree))
        try:
            cfg.cost_params()
            cfg.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_text(cls, text: str, origin: str = "<string>", base_dir: Path | None = None) -> "ExperimentConfig":
        return cls.from_tree(load_tree(text, origin, base_dir))

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_text(text, str(path), path.parent)

    @classmethod
    def defaults(cls, **overrides: dict) -> "ExperimentConfig":
        tree = load_tree(packaged_defaults_text(), DEFAULTS_NAME)
        return cls.from_tree(_merge(tree, overrides))

    def with_overrides(self, **sections: dict) -> "ExperimentConfig":
        return ExperimentConfig.from_tree(_merge(self.tree, sections))

    def __getitem__(self, section: str) -> dict:
        return self.tree[section]

    def cost_params(self) -> CostParams:
        c, cat = self.tree["cost"], self.tree["catalog"]
        S = float(cat["file_size"])
        return CostParams(
            S=S, W=float(c["W"]), P=float(c["P"]), sigma2=dbm_to_watts(float(c["noise_dbm"])),
            R_F=float(c["R_F"]), a=float(c["a"]), eta=float(c["eta"]), eta1=float(c["eta1"]),
            eta2=float(c["eta2"]), omega1=float(c["omega1"]), omega2=float(c["omega2"]),
            C=float(cat["capacity_files"]) * S,
        )

    def solver_config(self, **changes: Any) -> SolverConfig:
        s = self.tree["solver"]
        kwargs = dict(Ns=s["Ns"], Nt=s["Nt"], T=float(s["T"]), max_iters=s["max_iters"],
                      tol=float(s["tol"]), rho=float(s["rho"]), eps_diffusion=float(s["eps_diffusion"]),
                      kappa=float(s["kappa"]), full_eps=float(s["full_eps"]), hjb_tol=float(s["hjb_tol"]))
        kwargs.update(changes)
        return SolverConfig(**kwargs)

    def canonical_json(self) -> str:
        return json.dumps(self.tree, sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob hash (SHA-1 of ``blob <len>\\0<body>``) of the canonical JSON form."""
        body = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()
