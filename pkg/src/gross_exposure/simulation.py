"""Three-factor return simulator with calibrated default parameters.

Loadings and idiosyncratic noise levels are drawn once per universe and held
fixed; factor returns and Student-t noise are redrawn for every panel.
Parameters are in daily percent; with ``units="fraction"`` (the default)
generated returns and covariances are rescaled to decimal fractions.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CovarianceEstimate, ReturnPanel

MU_B = (0.7828, 0.5180, 0.4100)
COV_B = ((0.02914, 0.02387, 0.010184),
         (0.02387, 0.05395, -0.006967),
         (0.01018, -0.00696, 0.086856))
MU_F = (0.02355, 0.01298, 0.02071)
COV_F = ((1.2507, -0.0350, -0.2042),
         (-0.0350, 0.3156, -0.0023),
         (-0.2042, -0.0023, 0.1930))
GAMMA_SHAPE = 3.3586
GAMMA_SCALE = 0.1876
SIGMA_FLOOR = 0.1950
T_DOF = 6.0

# stream ids for SeedSequence spawn keys
_LOADINGS, _LEVELS, _FACTORS, _NOISE = range(4)
_CHUNK = 1024


def _sym(m) -> tuple:
    a = np.asarray(m, dtype=float)
    a = 0.5 * (a + a.T)
    return tuple(tuple(float(x) for x in row) for row in a)


@dataclass(frozen=True)
class FactorSimConfig:
    p: int = 200
    n: int = 252
    seed: int = 1
    mu_b: tuple = MU_B
    cov_b: tuple = field(default_factory=lambda: _sym(COV_B))
    mu_f: tuple = MU_F
    cov_f: tuple = field(default_factory=lambda: _sym(COV_F))
    gamma_shape: float = GAMMA_SHAPE
    gamma_scale: float = GAMMA_SCALE
    sigma_floor: float = SIGMA_FLOOR
    t_dof: float = T_DOF
    units: str = "fraction"
    periods_per_year: int = 252

    def __post_init__(self):
        if self.p < 1 or self.n < 2:
            raise ValueError(f"need p >= 1 and n >= 2, got p={self.p}, n={self.n}")
        if self.t_dof <= 2:
            raise ValueError("t_dof must exceed 2 for a finite noise variance")
        if self.units not in ("fraction", "percent"):
            raise ValueError(f"units must be 'fraction' or 'percent', got {self.units!r}")
        if self.gamma_shape <= 0 or self.gamma_scale <= 0:
            raise ValueError("gamma parameters must be positive")
        for name in ("cov_b", "cov_f"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            object.__setattr__(self, name, _sym(m))
            if np.linalg.eigvalsh(np.asarray(getattr(self, name)))[0] < -1e-12:
                raise ValueError(f"{name} is not positive semi-definite")
        for name in ("mu_b", "mu_f"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} must have 3 entries")
            object.__setattr__(self, name, v)

    @property
    def scale(self) -> float:
        """Multiplier from the parameters' percent units to output units."""
        return 0.01 if self.units == "fraction" else 1.0

    def replace(self, **changes) -> "FactorSimConfig":
        return dataclasses.replace(self, **changes)

    # plain key = value text format
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and v and isinstance(v[0], tuple):
                v = ";".join(",".join(repr(x) for x in row) for row in v)
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FactorSimConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            try:
                if key in ("cov_b", "cov_f"):
                    values[key] = tuple(tuple(float(x) for x in row.split(","))
                                        for row in val.split(";"))
                elif key in ("mu_b", "mu_f"):
                    values[key] = tuple(float(x) for x in val.split(","))
                elif key in ("p", "n", "seed", "periods_per_year"):
                    values[key] = int(val)
                elif key == "units":
                    values[key] = val
                else:
                    values[key] = float(val)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "FactorSimConfig":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class Universe:
    """Fixed part of a simulated market."""

    loadings: np.ndarray
    idio_levels: np.ndarray
    true_sigma: CovarianceEstimate


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def truncated_gamma(rng: np.random.Generator, size: int, shape: float, scale: float,
                    floor: float) -> np.ndarray:
    """Gamma draws conditioned on ``x >= floor`` by rejection.

    Draws come in fixed-size chunks, so the first ``k`` values do not depend
    on ``size``.
    """
    out = np.empty(0)
    while out.size < size:
        x = rng.gamma(shape, scale, _CHUNK)
        out = np.concatenate([out, x[x >= floor]])
    return out[:size]


def asset_ids(p: int) -> tuple[str, ...]:
    width = len(str(p - 1))
    return tuple(f"S{i:0{width}d}" for i in range(p))


def draw_universe(config: FactorSimConfig) -> Universe:
    """Draw loadings and noise levels; return them with the implied covariance."""
    B = _rng(config.seed, _LOADINGS).multivariate_normal(
        config.mu_b, config.cov_b, size=config.p, method="eigh")
    sig = truncated_gamma(_rng(config.seed, _LEVELS), config.p, config.gamma_shape,
                          config.gamma_scale, config.sigma_floor)
    k = config.scale
    cov = B @ np.asarray(config.cov_f) @ B.T + np.diag(sig**2)
    return Universe(B, sig, CovarianceEstimate(cov * k * k, "exogenous", asset_ids(config.p)))


def draw_factors(config: FactorSimConfig, replicate: int = 0, n: int | None = None) -> np.ndarray:
    """Factor returns of shape (n, 3) in parameter (percent) units."""
    n = config.n if n is None else n
    return _rng(config.seed, _FACTORS, replicate).multivariate_normal(
        config.mu_f, config.cov_f, size=n, method="eigh")


def draw_panel(universe: Universe, config: FactorSimConfig, replicate: int = 0,
               return_factors: bool = False):
    """Simulate ``n`` periods of returns on a fixed universe.

    Noise is Student-t with ``t_dof`` degrees of freedom rescaled so its
    standard deviation is exactly the asset's noise level.
    """
    if config.t_dof <= 2:
        raise ValueError("t_dof must exceed 2")
    f = draw_factors(config, replicate)
    t = _rng(config.seed, _NOISE, replicate).standard_t(
        config.t_dof, size=(config.n, universe.loadings.shape[0]))
    eps = t * (universe.idio_levels / np.sqrt(config.t_dof / (config.t_dof - 2.0)))
    k = config.scale
    r = (f @ universe.loadings.T + eps) * k
    ids = universe.true_sigma.asset_ids
    panel = ReturnPanel(r, ids, config.periods_per_year)
    if return_factors:
        return panel, ReturnPanel(f * k, ("MKT", "SMB", "HML"), config.periods_per_year)
    return panel


def truncated_gamma_mean(shape: float, scale: float, floor: float) -> float:
    """Mean of a Gamma(shape, scale) conditioned on ``x >= floor``."""
    from scipy.stats import gamma

    return float(shape * scale * gamma.sf(floor, shape + 1, scale=scale)
                 / gamma.sf(floor, shape, scale=scale))
