"""Experiment configuration and seeded initial data.

Configs are YAML mappings. Scalars may be given where a list is expected
(``d: 2`` is the same as ``d: [2]``). Unknown keys are rejected so typos do
not silently fall back to defaults.

Sampling order, which is what makes seeds portable: one
``numpy.random.Generator`` per ensemble, all positions first (row-major,
``N x d``), then all velocities or natural velocities. Truncated Gaussians
are drawn by rejection in batches of the full block size, in the same order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..ensemble import AtomicMeasure, Representation, natural_velocities, to_second_order
from ..kernel import KernelParams

__all__ = ["ConfigError", "InitSpec", "ExperimentConfig", "load_config", "sample_block", "sample_ensemble",
           "cell_rng", "SCENARIOS"]

SCENARIOS = ("equivalence", "dissipation", "convergence_rate", "stability", "mean_field", "simulate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitSpec:
    kind: str = "uniform"  # uniform | gaussian
    x_range: tuple = (-1.0, 1.0)
    y_range: tuple = (-0.5, 0.5)
    y_kind: str = "velocity"  # velocity | omega
    x_std: float = 0.5
    y_std: float = 0.25

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ConfigError(f"init.kind must be uniform or gaussian, not {self.kind!r}")
        if self.y_kind not in ("velocity", "omega"):
            raise ConfigError(f"init.y_kind must be velocity or omega, not {self.y_kind!r}")
        for name in ("x_range", "y_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"init.{name} must be an interval [lo, hi]")
        if not (self.x_std > 0 and self.y_std > 0):
            raise ConfigError("init standard deviations must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    d: tuple = (1,)
    N: tuple = (16,)
    alpha: tuple = (0.5,)
    epsilons: tuple = (1e-2, 1e-3, 1e-4)
    T: float = 1.0
    sample_dt: float = 0.1
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    rtol: float = 1e-9
    atol: float = 1e-12
    # convergence_rate / stability: number of random ensembles or pairs
    ensembles: int = 1
    perturbation: float = 1e-3
    closed_form: bool = False
    # equivalence: acceptance threshold on the smallest-epsilon discrepancy
    discrepancy_tol: float = 1e-3
    # convergence_rate: fraction of the horizon used to fix the prefactor
    fit_window: float = 0.5
    tolerance_factor: float = 1.05
    representation: str = "first_order"  # simulate only
    jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if any(int(n) < 1 for n in self.N):
            raise ConfigError("N must be >= 1")
        if any(int(d) < 1 for d in self.d):
            raise ConfigError("d must be >= 1")
        if any(not 0.0 < a < 1.0 for a in self.alpha):
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if not self.sample_dt > 0:
            raise ConfigError("sample_dt must be positive")
        if any(not e > 0 for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if list(self.epsilons) != sorted(self.epsilons, reverse=True) or len(set(self.epsilons)) != len(self.epsilons):
            raise ConfigError("epsilon ladder must be strictly decreasing")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive")
        if not 0.0 < self.fit_window <= 1.0:
            raise ConfigError("fit_window must lie in (0, 1]")
        if self.representation not in ("first_order", "second_order"):
            raise ConfigError("representation must be first_order or second_order")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["init"] = asdict(self.init)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        out["init"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["init"].items()}
        out.pop("out")
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_TUPLE_INT = ("d", "N")
_TUPLE_FLOAT = ("alpha", "epsilons")


def _as_tuple(value, cast, name):
    seq = value if isinstance(value, (list, tuple)) else [value]
    try:
        return tuple(cast(v) for v in seq)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def config_from_mapping(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "scenario" not in raw:
        raise ConfigError("config needs a scenario")
    kw = dict(raw)
    try:
        for name in _TUPLE_INT:
            if name in kw:
                kw[name] = _as_tuple(kw[name], int, name)
        for name in _TUPLE_FLOAT:
            if name in kw:
                kw[name] = _as_tuple(kw[name], float, name)
        for name in ("T", "sample_dt", "rtol", "atol", "perturbation", "discrepancy_tol", "fit_window",
                     "tolerance_factor"):
            if name in kw:
                kw[name] = float(kw[name])
        for name in ("seed", "ensembles", "jobs"):
            if name in kw:
                kw[name] = int(kw[name])
        if "init" in kw:
            init = dict(kw["init"] or {})
            bad = set(init) - {f.name for f in fields(InitSpec)}
            if bad:
                raise ConfigError(f"unknown init keys: {', '.join(sorted(bad))}")
            for name in ("x_range", "y_range"):
                if name in init:
                    init[name] = _as_tuple(init[name], float, f"init.{name}")
                    if len(init[name]) != 2:
                        raise ConfigError(f"init.{name} needs two numbers")
            kw["init"] = InitSpec(**init)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return config_from_mapping(raw)


# -- sampling --------------------------------------------------------------------------

def cell_rng(seed: int, *key) -> np.random.Generator:
    """Generator for one grid cell; ``key`` entries are ints (alphas enter in micro-units)."""
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


def sample_block(rng: np.random.Generator, n: int, d: int, kind: str, box, std: float) -> np.ndarray:
    lo, hi = box
    if kind == "uniform":
        return rng.uniform(lo, hi, size=(n, d))
    centre = 0.5 * (lo + hi)
    out = np.empty((0, d))
    while out.shape[0] < n:
        draw = centre + std * rng.standard_normal(size=(n, d))
        keep = np.all((draw >= lo) & (draw <= hi), axis=1)
        out = np.vstack([out, draw[keep]])
    return out[:n]


def sample_ensemble(spec: InitSpec, n: int, d: int, rng: np.random.Generator, params: KernelParams,
                    representation: str = "first_order") -> AtomicMeasure:
    """Uniform-weight ensemble; velocities are mapped through the change of variables when needed."""
    x = sample_block(rng, n, d, spec.kind, spec.x_range, spec.x_std)
    y = sample_block(rng, n, d, spec.kind, spec.y_range, spec.y_std)
    if spec.y_kind == "velocity":
        f = AtomicMeasure.uniform(x, y, Representation.SECOND_ORDER)
        return f if representation == "second_order" else natural_velocities(f, params)
    m = AtomicMeasure.uniform(x, y, Representation.FIRST_ORDER)
    return m if representation == "first_order" else to_second_order(m, params)


def alpha_key(alpha: float) -> int:
    return int(round(alpha * 1e6))
