"""Experiment configuration: TOML files with a fixed set of dotted keys."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .integrals import BUILTIN_PROFILES, RadialProfile
from .kernel import QuadraturePolicy
from .sampling import MCSettings

SUBCOMMANDS = ("verify-kernel", "identities", "rates", "bounds", "edgeworth")
SEED_ENV = "STEINLAB_SEED"
U64_MAX = 2**64 - 1

# key -> (type, description)
KEYS: dict[str, tuple[type | tuple, str]] = {
    "experiment.dim": (int, "ambient dimension d >= 2"),
    "experiment.radius": (float, "carrier radius R > 0"),
    "experiment.profiles": (list, "profile names, built-in or defined under [profiles.<name>]"),
    "experiment.k_grid": (list, "strictly increasing family indices"),
    "experiment.probes": (int, "probe points for the divergence identity"),
    "experiment.pairs": (int, "random pairs for the compatibility check"),
    "experiment.kd_pairs": (int, "random pairs used to estimate K_d"),
    "experiment.kd_seed": (int, "seed of the K_d estimate"),
    "experiment.kd_override": (float, "use this K_d instead of the estimate"),
    "experiment.realizations": (int, "configurations for the commutation check"),
    "experiment.test_function": (str, "Edgeworth test function: sin or identity"),
    "experiment.orders": (list, "Edgeworth orders n"),
    "experiment.edgeworth_profile": (str, "profile of the Edgeworth integrand"),
    "experiment.edgeworth_k": (int, "family index of the Edgeworth integrand"),
    "experiment.separation_replications": (int, "replications of the W1 comparison at k = 64"),
    "kernel.nodes": (int, "initial Gauss-Legendre nodes on a ray"),
    "kernel.tol": (float, "relative tolerance of the ray quadrature"),
    "kernel.max_nodes": (int, "node budget of the ray quadrature"),
    "kernel.epsilon_excision": (float, "excised radius around the diagonal, in units of R"),
    "kernel.apply_nodes": (int, "initial nodes of area integrals"),
    "kernel.apply_tol": (float, "relative tolerance of area integrals"),
    "kernel.apply_max_nodes": (int, "node budget of area integrals"),
    "kernel.eta_center": (list, "mollifier centre, in units of R"),
    "kernel.eta_radius": (float, "mollifier radius, in units of R"),
    "mc.replications": (int, "Monte Carlo replications"),
    "mc.master_seed": (int, "master seed of all simulations"),
    "mc.workers": (int, "worker threads"),
    "mc.chunk_size": (int, "configurations per seeded chunk"),
    "output.dir": (str, "output directory"),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "verify-kernel": {"experiment.probes": 20, "experiment.pairs": 10_000},
    "identities": {"mc.replications": 100_000, "experiment.realizations": 10,
                   "experiment.probes": 10},
    "rates": {"experiment.k_grid": [2**j for j in range(9)],
              "experiment.separation_replications": 1_000_000},
    "bounds": {"experiment.k_grid": [1, 4, 16, 64]},
    "edgeworth": {"mc.replications": 1_000_000, "experiment.orders": [1, 2]},
}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    dim: int = 2
    R: float = 1.0
    profiles: tuple = ()
    k_grid: tuple = (1, 4, 16, 64)
    mc: MCSettings = field(default_factory=MCSettings)
    quadrature: QuadraturePolicy = field(default_factory=QuadraturePolicy)
    eta_center: tuple | None = None
    eta_radius: float | None = None
    probes: int = 20
    pairs: int = 10_000
    kd_pairs: int = 10_000
    kd_seed: int = 42
    kd_override: float | None = None
    realizations: int = 10
    test_function: str = "sin"
    orders: tuple = (1, 2)
    edgeworth_profile: str = "g_balanced"
    edgeworth_k: int = 16
    separation_replications: int | None = None
    output: str | None = None
    resolved: dict = field(default_factory=dict, compare=False)

    def profile(self, name: str) -> RadialProfile:
        for p in self.profiles:
            if p.name == name:
                return p
        if name in BUILTIN_PROFILES:
            return BUILTIN_PROFILES[name](self.dim)
        raise ConfigError(f"unknown profile {name!r}")


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and not key.startswith("profiles."):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_type(key: str, value: Any):
    typ = KEYS[key][0]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {type(value).__name__}")
    if typ is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return value


def _custom_profiles(flat: dict[str, Any]) -> tuple[RadialProfile, ...]:
    out = []
    for key in [k for k in flat if k.startswith("profiles.")]:
        name = key.split(".", 1)[1]
        body = flat.pop(key)
        if not isinstance(body, dict) or set(body) - {"breaks", "coeffs"} or "coeffs" not in body:
            raise ConfigError(f"[{key}] takes 'coeffs' and optional 'breaks'")
        coeffs = body["coeffs"]
        try:
            if "breaks" in body:
                prof = RadialProfile.piecewise(body["breaks"], coeffs, name=name)
            else:
                prof = RadialProfile.polynomial(coeffs, 1.0, name=name)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{key}]: {exc}") from exc
        out.append(prof)
    return tuple(out)


def parse_seed(text: str | int, source: str) -> int:
    try:
        seed = int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: seed must be an unsigned 64-bit integer") from None
    if not 0 <= seed <= U64_MAX:
        raise ConfigError(f"{source}: seed must be an unsigned 64-bit integer")
    return seed


def load_config(path: str | os.PathLike | None, name: str, seed: int | None = None,
                workers: int | None = None, out: str | None = None,
                environ: dict | None = None) -> ExperimentSpec:
    """Read and validate a config file for subcommand ``name``.

    Seed precedence: ``seed`` argument, then $STEINLAB_SEED, then mc.master_seed.
    """
    if name not in SUBCOMMANDS:
        raise ConfigError(f"unknown experiment {name!r}")
    tree: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                tree = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    flat = _flatten(tree)
    customs = _custom_profiles(flat)
    unknown = sorted(set(flat) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(DEFAULTS[name])
    values.update({k: _check_type(k, v) for k, v in flat.items()})

    environ = os.environ if environ is None else environ
    if seed is not None:
        values["mc.master_seed"] = parse_seed(seed, "--seed")
    elif environ.get(SEED_ENV):
        values["mc.master_seed"] = parse_seed(environ[SEED_ENV], SEED_ENV)
    if workers is not None:
        values["mc.workers"] = workers
    if out is not None:
        values["output.dir"] = out
    return build_spec(name, values, customs)


def build_spec(name: str, values: dict[str, Any], customs: tuple = ()) -> ExperimentSpec:
    g = values.get
    dim, R = g("experiment.dim", 2), g("experiment.radius", 1.0)
    if dim < 2:
        raise ConfigError("experiment.dim must be >= 2")
    if not R > 0:
        raise ConfigError("experiment.radius must be positive")
    k_grid = tuple(g("experiment.k_grid", (1, 4, 16, 64)))
    if not k_grid or any(not isinstance(k, int) or k < 1 for k in k_grid):
        raise ConfigError("experiment.k_grid must hold positive integers")
    if any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise ConfigError("experiment.k_grid must be strictly increasing")
    mc_defaults = MCSettings()
    mc = MCSettings(g("mc.replications", mc_defaults.replications),
                    parse_seed(g("mc.master_seed", mc_defaults.master_seed), "mc.master_seed"),
                    g("mc.workers", 1), g("mc.chunk_size", mc_defaults.chunk_size))
    if mc.chunk_size < 1:
        raise ConfigError("mc.chunk_size must be >= 1")
    qd = QuadraturePolicy()
    quad = replace(qd, **{k.split(".")[1]: values[k] for k in values
                          if k.startswith("kernel.") and k.split(".")[1] in qd.__dataclass_fields__})
    if name in ("rates", "bounds") and mc.replications < 1000:
        raise ConfigError("rate experiments need mc.replications >= 1000")
    sep_n = g("experiment.separation_replications")
    if sep_n is not None and sep_n < 1000:
        raise ConfigError("experiment.separation_replications must be >= 1000")
    if quad.nodes < 2 or quad.apply_nodes < 2 or quad.tol <= 0 or quad.apply_tol <= 0:
        raise ConfigError("kernel quadrature settings must be positive")
    if not 0 <= quad.epsilon_excision < 1:
        raise ConfigError("kernel.epsilon_excision must lie in [0, 1)")
    eta_center = g("kernel.eta_center")
    if eta_center is not None:
        if len(eta_center) != dim or not all(isinstance(c, (int, float)) for c in eta_center):
            raise ConfigError("kernel.eta_center needs dim numbers")
        eta_center = tuple(float(c) for c in eta_center)
    eta_radius = g("kernel.eta_radius")
    if eta_radius is not None and not eta_radius > 0:
        raise ConfigError("kernel.eta_radius must be positive")
    orders = tuple(g("experiment.orders", (1, 2)))
    if any(not isinstance(n, int) or not 0 <= n <= 2 for n in orders):
        raise ConfigError("experiment.orders must be integers in {0, 1, 2}")
    test_fn = g("experiment.test_function", "sin")
    if test_fn not in ("sin", "identity"):
        raise ConfigError("experiment.test_function must be 'sin' or 'identity'")
    for key in ("experiment.probes", "experiment.pairs", "experiment.kd_pairs",
                "experiment.realizations", "experiment.edgeworth_k"):
        if key in values and values[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    spec = ExperimentSpec(
        name=name, dim=dim, R=float(R), profiles=customs, k_grid=k_grid, mc=mc, quadrature=quad,
        eta_center=eta_center, eta_radius=eta_radius,
        probes=g("experiment.probes", 20), pairs=g("experiment.pairs", 10_000),
        kd_pairs=g("experiment.kd_pairs", 10_000), kd_seed=g("experiment.kd_seed", 42),
        kd_override=g("experiment.kd_override"), realizations=g("experiment.realizations", 10),
        test_function=test_fn, orders=orders,
        edgeworth_profile=g("experiment.edgeworth_profile", "g_balanced"),
        edgeworth_k=g("experiment.edgeworth_k", 16), separation_replications=sep_n,
        output=g("output.dir"))
    names = g("experiment.profiles", ["g_plus", "g_balanced"])
    if not names or not all(isinstance(n, str) for n in names):
        raise ConfigError("experiment.profiles must be a list of names")
    profiles = tuple(spec.profile(n) for n in names)
    spec.profile(spec.edgeworth_profile)
    resolved = {
        "experiment": {"name": name, "dim": dim, "radius": float(R), "profiles": list(names),
                       "k_grid": list(k_grid), "probes": spec.probes, "pairs": spec.pairs,
                       "kd_pairs": spec.kd_pairs, "kd_seed": spec.kd_seed,
                       "kd_override": spec.kd_override, "realizations": spec.realizations,
                       "test_function": test_fn, "orders": list(orders),
                       "edgeworth_profile": spec.edgeworth_profile,
                       "edgeworth_k": spec.edgeworth_k,
                       "separation_replications": sep_n},
        "kernel": {**{k: getattr(quad, k) for k in quad.__dataclass_fields__},
                   "eta_center": list(eta_center) if eta_center else None,
                   "eta_radius": eta_radius},
        "mc": {"replications": mc.replications, "master_seed": mc.master_seed,
               "workers": mc.workers, "chunk_size": mc.chunk_size},
        "profiles": {p.name: {"breaks": list(p.breaks), "coeffs": [list(map(float, q.coef))
                                                                   for q in p.pieces]}
                     for p in profiles},
    }
    return replace(spec, profiles=profiles, resolved=resolved)


def default_output_dir(spec: ExperimentSpec) -> Path:
    return Path(spec.output) if spec.output else Path("steinlab-out") / spec.name
