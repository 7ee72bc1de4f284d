"""JSON-backed configuration dataclasses."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InputError
from .model import RegimeParams, random_regime, run_dim


def _from_dict(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise InputError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InputError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return cls(**doc)


@dataclass
class RecipeConfig:
    """Random-parameter recipe for the simulator (see ``random_regime``)."""

    spectral_radius: float = 0.95
    mean_separation: float = 3.0
    stay_prob: float = 0.85
    noise_scale: float = 0.5
    coupling: float = 0.0
    cross_lag: float = 0.0

    def validate(self):
        if not 0 < self.spectral_radius <= 0.95:
            raise InputError("spectral_radius must lie in (0, 0.95]")
        if not 0 <= self.stay_prob <= 1 or not 0 <= self.coupling < 1:
            raise InputError("stay_prob must lie in [0, 1] and coupling in [0, 1)")
        if self.noise_scale <= 0:
            raise InputError("noise_scale must be positive")


@dataclass
class UnitsConfig:
    """Affine map from simulated (standard-scale) values to seconds and passengers."""

    link_mean: float = 120.0
    link_scale: float = 20.0
    occupancy_mean: float = 20.0
    occupancy_scale: float = 5.0
    headway_mean: float = 300.0
    headway_scale: float = 60.0

    def offsets(self, n: int):
        mean = np.concatenate([np.full(n, self.link_mean), np.full(n, self.occupancy_mean), [self.headway_mean]])
        scale = np.concatenate([np.full(n, self.link_scale), np.full(n, self.occupancy_scale), [self.headway_scale]])
        return mean, scale


@dataclass
class SimulateConfig:
    """Synthetic corpus: route size, regimes, days and runs.

    ``params`` optionally gives explicit regime parameters (keys ``pi, A, mu,
    sigma``, nested lists, standard scale); otherwise ``recipe`` generates them
    from the ``recipe_seed`` stream.
    """

    n: int
    K: int
    D: int
    runs_per_day: int
    runs_per_period: int | None = None
    params: dict | None = None
    recipe: RecipeConfig = field(default_factory=RecipeConfig)
    recipe_seed: int = 0
    units: UnitsConfig = field(default_factory=UnitsConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulateConfig":
        doc = dict(doc)
        if "recipe" in doc:
            doc["recipe"] = _from_dict(RecipeConfig, doc["recipe"], "recipe")
        if "units" in doc:
            doc["units"] = _from_dict(UnitsConfig, doc["units"], "units")
        try:
            cfg = _from_dict(cls, doc, "simulate config")
        except TypeError as exc:
            raise InputError(f"simulate config: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "SimulateConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        for name in ("n", "K", "D"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise InputError(f"{name} must be a positive integer")
        if not isinstance(self.runs_per_day, int) or self.runs_per_day < 2:
            raise InputError("runs_per_day must be an integer >= 2")
        if self.runs_per_period is not None and self.runs_per_period < 1:
            raise InputError("runs_per_period must be positive")
        self.recipe.validate()

    def regime(self) -> RegimeParams:
        d = run_dim(self.n)
        if self.params is not None:
            try:
                reg = RegimeParams(**{k: self.params[k] for k in ("pi", "A", "mu", "sigma")})
            except KeyError as exc:
                raise InputError(f"params missing {exc}") from None
            if reg.K != self.K or reg.dim != d:
                raise InputError(f"params have K={reg.K}, dim={reg.dim}; config says K={self.K}, dim={d}")
            reg.validate()
            radius = max(np.max(np.abs(np.linalg.eigvals(A))) for A in reg.A)
            if radius >= 1:
                raise InputError(f"params: coefficient matrices must be stable (spectral radius {radius:.3g} >= 1)")
            return reg
        r = self.recipe
        return random_regime(
            d, self.K, np.random.default_rng(self.recipe_seed),
            spectral_radius=r.spectral_radius, mean_separation=r.mean_separation,
            stay_prob=r.stay_prob, noise_scale=r.noise_scale, coupling=r.coupling, cross_lag=r.cross_lag,
        )


@dataclass
class FitConfig:
    model: str = "msar"
    variant: str = "joint"
    K: int = 4
    n_burn: int = 500
    n_keep: int = 200
    thin: int = 1
    seed: int = 0
    threads: int = 1

    def validate(self):
        if self.model not in ("msar", "bgmm"):
            raise InputError(f"unknown model {self.model!r}")
        if self.variant not in ("joint", "ttime", "occupancy"):
            raise InputError(f"unknown variant {self.variant!r}")
        if self.K < 1 or self.n_keep < 1 or self.n_burn < 0 or self.thin < 1 or self.threads < 1:
            raise InputError("K, samples, thin and threads must be positive; burn-in non-negative")


def variant_dims(variant: str, n: int) -> np.ndarray:
    """Run-vector entries modelled by a joint or separate variant."""
    if variant == "joint":
        return np.arange(2 * n + 1)
    if variant == "ttime":
        return np.concatenate([np.arange(n), [2 * n]])
    if variant == "occupancy":
        return np.arange(n, 2 * n + 1)
    raise InputError(f"unknown variant {variant!r}")
