"""Run configuration: schema, validation, and TOML/JSON loading.

A scenario is a flat table of keys (TOML or JSON, same names). Validation
errors carry the offending field so a bad file fails with a precise message.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConfigError", "ScenarioConfig", "SweepSpec", "load_config",
           "load_sweep"]

_PROTOCOLS = ("oat", "tss")
_BACKENDS = ("ed", "traj", "twa", "analytic")
_SPACINGS = ("linear", "log")
_VARIANTS = ("full", "sy_only")


class ConfigError(ValueError):
    """Schema violation; message names the field."""

    def __init__(self, fieldname, message):
        super().__init__(f"config field '{fieldname}': {message}")
        self.field = fieldname


@dataclass
class ScenarioConfig:
    """One simulation run.

    Rates: either give gamma_over_chi directly (with chi setting the time
    unit) or the cavity parameters (g, kappa, delta_c), from which chi and
    Gamma derive. delta_N is the total atom-number fluctuation
    (sigma_n = delta_N / sqrt(2) per ensemble for tss).
    """

    protocol: str = "oat"
    backend: str = "ed"
    N: int = 100
    chi: float = 1.0
    gamma_over_chi: float = 0.0
    g: float = None
    kappa: float = None
    delta_c: float = None
    gamma_s: float = 0.0
    gamma_el: float = 0.0
    delta_N: float = 0.0
    t_max: float = None
    n_times: int = 60
    t_spacing: str = "linear"
    n_traj: int = 10_000
    seed: int = 1234
    n_trunc: int = 5
    variant: str = "full"
    hamiltonian: str = None
    label: str = ""
    plot: bool = True

    def validate(self):
        if self.protocol not in _PROTOCOLS:
            raise ConfigError("protocol", f"must be one of {_PROTOCOLS}")
        if self.backend not in _BACKENDS:
            raise ConfigError("backend", f"must be one of {_BACKENDS}")
        if self.N < 2:
            raise ConfigError("N", "need at least 2 atoms")
        if self.protocol == "tss" and self.N % 2:
            raise ConfigError("N", "tss needs an even atom number")
        if self.t_spacing not in _SPACINGS:
            raise ConfigError("t_spacing", f"must be one of {_SPACINGS}")
        if self.variant not in _VARIANTS:
            raise ConfigError("variant", f"must be one of {_VARIANTS}")
        if self.n_times < 1:
            raise ConfigError("n_times", "need at least one time point")
        if self.t_max is not None and self.t_max <= 0:
            raise ConfigError("t_max", "must be positive")
        for name in ("gamma_over_chi", "gamma_s", "gamma_el", "delta_N"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        cavity = [self.g, self.kappa, self.delta_c]
        if any(v is not None for v in cavity) and any(v is None for v in cavity):
            raise ConfigError("g", "cavity parameters g, kappa, delta_c "
                                   "must be given together")
        if self.n_traj < 2 and self.backend in ("twa",):
            raise ConfigError("n_traj", "twa needs n_traj >= 2")
        if self.backend == "twa" and self.gamma_over_chi > 0 and self.g is None:
            raise ConfigError(
                "backend", "the twa solver does not model collective emission; "
                           "use backend 'ed', 'traj', or 'analytic' for Gamma > 0")
        if self.gamma_s > 0 and self.gamma_el > 0 and self.backend == "analytic":
            raise ConfigError("gamma_el", "no combined gamma_s + gamma_el "
                                          "analytic model exists")
        return self

    @property
    def sigma_n(self):
        """Per-ensemble number std: delta_N / sqrt(2) for tss (two independent
        ensembles), delta_N itself for the single oat ensemble."""
        return (self.delta_N / np.sqrt(2.0)) if self.protocol == "tss" \
            else self.delta_N

    def rates(self):
        """(chi, Gamma) in absolute units."""
        if self.g is not None:
            from ..analytic import cavity_rates
            cr = cavity_rates(self.g, self.kappa, self.delta_c)
            return cr.chi, cr.Gamma
        return self.chi, self.gamma_over_chi * self.chi

    def time_grid(self):
        chi, Gamma = self.rates()
        t_max = self.t_max
        if t_max is None:
            from ..analytic import optimum_fixed_ratio
            t_max = 2.0 * optimum_fixed_ratio(self.protocol, self.N, 0.0,
                                              chi=abs(chi)).t_opt * abs(chi)
        # grids are expressed in 1/chi units
        if self.n_times == 1:
            return np.array([t_max])
        if self.t_spacing == "log":
            return np.concatenate([[0.0], np.geomspace(t_max / self.n_times**2,
                                                       t_max, self.n_times - 1)])
        return np.linspace(0.0, t_max, self.n_times)

    def resolved(self):
        d = dataclasses.asdict(self)
        chi, Gamma = self.rates()
        d["resolved_chi"] = chi
        d["resolved_Gamma"] = Gamma
        d["resolved_sigma_n"] = self.sigma_n
        return d

    def content_hash(self):
        payload = json.dumps(self.resolved(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_AXES = ("gamma_over_chi", "N", "delta_N", "t", "delta_c")


@dataclass
class SweepSpec:
    """Independent scenario runs along one axis."""

    axis: str
    values: list
    scenario: ScenarioConfig
    overrides: list = field(default_factory=list)

    def validate(self):
        if self.axis not in _AXES:
            raise ConfigError("axis", f"must be one of {_AXES}")
        if len(self.values) < 1:
            raise ConfigError("values", "need at least one sweep point")
        if self.overrides and len(self.overrides) != len(self.values):
            raise ConfigError("overrides", "must match the number of values")
        self.scenario.validate()
        return self

    def point_configs(self):
        out = []
        for i, v in enumerate(self.values):
            d = dataclasses.asdict(self.scenario)
            if self.axis == "t":
                d["t_max"] = float(v)
                d["n_times"] = 1
            elif self.axis == "N":
                d["N"] = int(v)
            else:
                d[self.axis] = float(v)
            if self.overrides:
                d.update(self.overrides[i])
            cfg = ScenarioConfig(**d)
            cfg.label = cfg.label or f"{self.axis}={v:g}"
            out.append(cfg.validate())
        return out


def _read_table(path):
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        return json.loads(text)
    try:
        import tomllib as toml  # py >= 3.11
    except ImportError:
        import tomli as toml
    return toml.loads(text.decode())


def _scenario_from_dict(d, context=""):
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(context + sorted(unknown)[0], "unknown field")
    try:
        cfg = ScenarioConfig(**d)
    except TypeError as exc:
        raise ConfigError(context + "<scenario>", str(exc))
    return cfg.validate()


def load_config(path):
    """Load and validate a scenario file (.toml or .json)."""
    return _scenario_from_dict(_read_table(path))


def load_sweep(path):
    """Load and validate a sweep file: axis, values or log_range, scenario."""
    d = _read_table(path)
    if "axis" not in d:
        raise ConfigError("axis", "missing")
    values = d.get("values")
    if values is None and "log_range" in d:
        lo, hi, num = d["log_range"]
        values = np.geomspace(float(lo), float(hi), int(num)).tolist()
    if values is None:
        raise ConfigError("values", "give 'values' or 'log_range'")
    scen = _scenario_from_dict(d.get("scenario", {}), context="scenario.")
    spec = SweepSpec(axis=d["axis"], values=list(values), scenario=scen,
                     overrides=d.get("overrides", []))
    return spec.validate()
