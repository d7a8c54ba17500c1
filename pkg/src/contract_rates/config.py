"""Experiment configuration: a single JSON document per run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .monitoring import MonitoringTechnology
from .preferences import CostFunction, ModelError, Regime, UtilitySpec, validate_assumptions

KINDS = ("figure1", "rates", "second_best", "linear", "rank", "limited_liability", "adjustable",
         "oracle_suite")


def _grid(spec) -> list[int]:
    if isinstance(spec, dict):
        return list(range(int(spec["start"]), int(spec["stop"]) + 1, int(spec.get("step", 1))))
    return [int(n) for n in spec]


def _label(raw, actions):
    """Map a JSON object key back onto an action label (keys are always strings in JSON)."""
    for a in actions:
        if str(a) == str(raw):
            return a
    raise ModelError(f"unknown action label {raw!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    technology: dict
    utility: dict
    costs: dict
    regime: str = "baseline"
    n_grid: Any = field(default_factory=lambda: {"start": 5, "stop": 200, "step": 5})
    technology_alt: dict | None = None
    eps: float = 0.05
    fractions: dict = field(default_factory=lambda: {"lenient": 0.31, "strict": 0.6})
    thresholds: dict | None = None
    family: str = "binary_lenient"
    tolerance: float = 0.15
    periods: list = field(default_factory=lambda: [1, 2])
    principal_payoff: dict | None = None
    utility_baseline: dict | None = None
    shape_points: int = 3
    linear_modes: list = field(default_factory=lambda: ["utility_linear"])
    seed: int = 0
    plot: bool = False
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ModelError(f"unknown experiment {self.experiment!r}; choose from {KINDS}")
        Regime(self.regime)

    # -- construction ----------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ModelError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- model objects ---------------------------------------------------
    @staticmethod
    def build_technology(spec: dict) -> MonitoringTechnology:
        return MonitoringTechnology(tuple(spec["actions"]), tuple(spec.get("alphabet", range(len(spec["probs"][0])))),
                                    spec["probs"], spec["target"])

    def mt(self) -> MonitoringTechnology:
        return self.build_technology(self.technology)

    def mt_alt(self) -> MonitoringTechnology:
        if self.technology_alt is None:
            raise ModelError("this experiment needs 'technology_alt'")
        return self.build_technology(self.technology_alt)

    @staticmethod
    def build_prefs(spec: dict) -> UtilitySpec:
        return UtilitySpec(spec["family"], float(spec["wage_floor"]), float(spec.get("param", 1.0)))

    def prefs(self) -> UtilitySpec:
        return self.build_prefs(self.utility)

    def prefs_baseline(self) -> UtilitySpec:
        """Preferences for the baseline comparison run of the limited-liability experiment."""
        if self.utility_baseline is None:
            raise ModelError("this experiment needs 'utility_baseline'")
        return self.build_prefs(self.utility_baseline)

    def cost_fn(self) -> CostFunction:
        mt = self.mt()
        return CostFunction({_label(k, mt.actions): float(v) for k, v in self.costs.items()}, mt.target)

    def grid(self) -> list[int]:
        return _grid(self.n_grid)

    def threshold_map(self) -> dict | None:
        if self.thresholds is None:
            return None
        mt = self.mt()
        return {_label(k, mt.actions): float(v) for k, v in self.thresholds.items()}

    def payoff_map(self) -> dict:
        mt = self.mt()
        if self.principal_payoff is None:
            raise ModelError("this experiment needs 'principal_payoff'")
        return {_label(k, mt.actions): float(v) for k, v in self.principal_payoff.items()}

    def validate(self, regime: Regime | str | None = None):
        """Model assumptions must hold before anything runs."""
        rep = validate_assumptions(self.prefs(), self.cost_fn(), regime or self.regime)
        if not rep.ok:
            raise ModelError("model assumptions violated:\n" + str(rep))
        return rep


FIGURE1 = {
    "technology": {"actions": [0, 1], "alphabet": ["low", "high"],
                   "probs": [[0.7, 0.3], [0.3, 0.7]], "target": 1},
    "utility": {"family": "log", "wage_floor": 0.1},
    "costs": {"0": 0.0, "1": 2.0},
}

EXAMPLE1 = {
    "technology": {"actions": [0, 1], "alphabet": ["low", "high"],
                   "probs": [[0.8, 0.2], [0.01, 0.99]], "target": 1},
    "technology_alt": {"actions": [0, 1], "alphabet": ["low", "high"],
                       "probs": [[0.99, 0.01], [0.2, 0.8]], "target": 1},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    """Ready-made configurations for the standard experiments."""
    base = dict(FIGURE1)
    if name == "figure1":
        base.update(experiment="figure1", n_grid={"start": 5, "stop": 200, "step": 5})
    elif name == "rates":
        base.update(experiment="rates", n_grid={"start": 40, "stop": 400, "step": 40})
    elif name == "second_best":
        base.update(experiment="second_best", n_grid={"start": 5, "stop": 200, "step": 5})
    elif name == "linear":
        base.update(experiment="linear", n_grid={"start": 20, "stop": 400, "step": 20})
    elif name == "rank":
        base.update(EXAMPLE1, experiment="rank", n_grid=[1])
    elif name == "limited_liability":
        base.update(experiment="limited_liability", regime="limited_liability",
                    utility={"family": "log", "wage_floor": 1.0}, utility_baseline=dict(FIGURE1["utility"]),
                    n_grid={"start": 40, "stop": 400, "step": 40}, thresholds={"0": 0.0})
    elif name == "adjustable":
        base.update(experiment="adjustable", n_grid={"start": 40, "stop": 400, "step": 40},
                    principal_payoff={"0": 0.0, "1": 20.0}, periods=[1, 2])
    elif name == "oracle_suite":
        base.update(experiment="oracle_suite", n_grid=[1])
    else:
        raise ModelError(f"no preset named {name!r}")
    base.update(overrides)
    return ExperimentConfig.from_dict(base)
