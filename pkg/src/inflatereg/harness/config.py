"""Experiment configuration: YAML in, validated dataclass out, YAML back."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..sampling import BetaCoefficients, NoiseKind, NoiseModel, make_beta_custom, make_beta_topk
from ..spectrum import (Spectrum, make_block_spectrum, make_isotropic_spectrum,
                        make_power_law_spectrum, make_shrink_adversary_spectrum,
                        make_spiked_spectrum, make_two_regime_spectrum)

SCENARIOS = ("inflation", "ridge_sweep", "data_split", "spiked", "unbiased_divergence",
             "direction_shrink", "theory_check", "moments_check")

SCENARIO_HELP = {
    "inflation": "MC risk quadratic of c * theta_MN, vertex c_hat and theory prediction",
    "ridge_sweep": "per-draw ridge risk over a signed lambda grid, derivative at zero",
    "data_split": "split estimator, plug-in c*, and comparison with inflated theta_MN",
    "spiked": "inflation on I + v v' with beta aligned to the spike",
    "unbiased_divergence": "risk of the diagonal de-biasing rescale as d/n grows",
    "direction_shrink": "risk of shrinking theta_MN toward a fixed unit direction",
    "theory_check": "MC means of random-projection functionals against bound intervals",
    "moments_check": "MC moments of Gaussian quadratic forms against closed forms",
}

# scenarios whose spectrum, beta and n come straight from the config
_NEEDS_MODEL = {"inflation", "ridge_sweep", "data_split", "theory_check"}

SPECTRUM_BUILDERS = {
    "isotropic": make_isotropic_spectrum,
    "block": make_block_spectrum,
    "power_law": make_power_law_spectrum,
    "two_regime": make_two_regime_spectrum,
    "spiked": make_spiked_spectrum,
    "shrink_adversary": make_shrink_adversary_spectrum,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str
    n: int = 0
    replicates: int = 100
    seed: int = 0
    spectrum: dict[str, Any] = field(default_factory=dict)
    beta: dict[str, Any] = field(default_factory=dict)
    noise: dict[str, Any] = field(default_factory=lambda: {"kind": "none", "sigma": 0.0,
                                                           "sigma_max": None})
    c_grid: dict[str, Any] = field(default_factory=lambda: {"policy": "default", "points": 101})
    lambda_grid: dict[str, Any] = field(default_factory=lambda: {"policy": "default",
                                                                 "per_side": 25})
    n_splits: int | str = "auto"
    ridge_margin: float = 0.05
    slack: dict[str, float] = field(default_factory=lambda: {"o1": 0.2, "c1": 4.0})
    params: dict[str, Any] = field(default_factory=dict)
    out_dir: str | None = None

    # -- (de)serialization ----------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "scenario" not in data:
            raise ConfigError("missing required key 'scenario'")
        cfg = cls(**copy.deepcopy(data))
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_yaml(text)

    # -- validation -----------------------------------------------------
    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not isinstance(self.replicates, int) or self.replicates < 2:
            raise ConfigError(f"replicates must be an integer >= 2, got {self.replicates!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if self.n_splits != "auto" and (not isinstance(self.n_splits, int) or self.n_splits < 2):
            raise ConfigError("n_splits must be 'auto' or an integer >= 2")
        if not 0.0 <= self.ridge_margin < 1.0:
            raise ConfigError("ridge_margin must lie in [0, 1)")
        for key in ("o1", "c1"):
            self.slack.setdefault(key, {"o1": 0.2, "c1": 4.0}[key])
        self._validate_grids()
        if self.scenario in _NEEDS_MODEL:
            if not isinstance(self.n, int) or self.n < 1:
                raise ConfigError(f"scenario {self.scenario} needs n >= 1")
            if not self.spectrum:
                raise ConfigError(f"scenario {self.scenario} needs a spectrum section")
            if not self.beta:
                raise ConfigError(f"scenario {self.scenario} needs a beta section")
            self._materialize_model()
        required = {
            "spiked": ("d", "spike", "ratio"),
            "unbiased_divergence": ("q", "dn_ratios"),
            "direction_shrink": ("q", "dn_ratio", "c"),
            "moments_check": ("dim", "draws"),
        }.get(self.scenario, ())
        missing = [k for k in required if k not in self.params]
        if missing:
            raise ConfigError(f"scenario {self.scenario} needs params {missing}")
        if self.scenario in ("spiked", "unbiased_divergence", "direction_shrink") and self.n < 1:
            raise ConfigError(f"scenario {self.scenario} needs n >= 1")
        self._materialize_noise()

    def _validate_grids(self) -> None:
        for name, grid in (("c_grid", self.c_grid), ("lambda_grid", self.lambda_grid)):
            policy = grid.get("policy", "default")
            if policy not in ("default", "explicit"):
                raise ConfigError(f"{name}.policy must be 'default' or 'explicit'")
            if policy == "explicit":
                values = grid.get("values")
                if not values or np.any(np.diff(np.asarray(values, dtype=float)) <= 0):
                    raise ConfigError(f"{name}.values must be a non-empty increasing list")

    def _materialize_model(self) -> None:
        ctor = self.spectrum.get("constructor")
        if ctor not in SPECTRUM_BUILDERS and ctor != "custom":
            raise ConfigError(f"unknown spectrum constructor {ctor!r}")
        params = self.spectrum.setdefault("params", {})
        if ctor in ("block", "power_law", "two_regime", "shrink_adversary"):
            params.setdefault("n", self.n)
        kind = self.beta.get("kind")
        if kind == "topk":
            self.beta.setdefault("k", self.n)
        elif kind == "custom":
            if "raw" not in self.beta:
                raise ConfigError("custom beta needs 'raw'")
            self.beta.setdefault("normalize", True)
        else:
            raise ConfigError(f"beta.kind must be 'topk' or 'custom', got {kind!r}")

    def _materialize_noise(self) -> None:
        try:
            kind = NoiseKind(self.noise.get("kind", "none"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.noise["kind"] = kind.value
        self.noise.setdefault("sigma", 0.0)
        self.noise.setdefault("sigma_max", None)
        try:
            self.noise_model()
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from exc

    # -- builders -------------------------------------------------------
    def build_spectrum(self) -> Spectrum:
        ctor = self.spectrum["constructor"]
        params = dict(self.spectrum.get("params", {}))
        try:
            if ctor == "custom":
                return Spectrum.from_eigenvalues(params["eigenvalues"],
                                                 normalize=params.get("normalize", False))
            return SPECTRUM_BUILDERS[ctor](**params)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"spectrum {ctor}: {exc}") from exc

    def build_beta(self, s: Spectrum) -> BetaCoefficients:
        try:
            if self.beta["kind"] == "topk":
                return make_beta_topk(s, int(self.beta["k"]))
            return make_beta_custom(s, self.beta["raw"], bool(self.beta["normalize"]))
        except ValueError as exc:
            raise ConfigError(f"beta: {exc}") from exc

    def noise_model(self) -> NoiseModel:
        return NoiseModel(NoiseKind(self.noise["kind"]), float(self.noise.get("sigma", 0.0)),
                          self.noise.get("sigma_max"))

    def sigma2(self) -> float | None:
        """Noise variance for homoscedastic kinds, ``None`` otherwise."""
        model = self.noise_model()
        return model.sigma_max2 if model.homoscedastic else None

    def splits(self) -> int | None:
        return None if self.n_splits == "auto" else int(self.n_splits)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj
