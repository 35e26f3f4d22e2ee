"""Sequential model-based optimization over integer parameters.

Suggestions are uniform for the first `n_startup` completed trials and then
follow a tree-structured Parzen estimator: completed trials are split at the
score γ-quantile, discretized Gaussian-kernel densities l(x) (good) and g(x)
(bad) are fit on the integer grid, and the suggestion maximizes l(x)/g(x) over
candidates drawn from l. Scores are always maximized.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Any


class SMBOError(Exception):
    """Invalid trial data or parameter ranges."""


@dataclass
class Trial:
    trial_id: int
    params: dict[str, int]
    score: float
    payload: Any = None


@dataclass
class TPEConfig:
    gamma: float = 0.25
    n_startup: int = 5
    n_candidates: int = 24

    @staticmethod
    def bandwidth(low: int, high: int, n_observations: int) -> float:
        # Base width (high-low)/10, floored at one grid step. While a density
        # holds few observations the kernel widens to range/(n+2) so early
        # suggestions stay diverse instead of locking onto the incumbent.
        base = max(1.0, (high - low) / 10.0)
        return max(base, (high - low) / min(100.0, n_observations + 2.0))


@dataclass
class Study:
    trials: list[Trial] = field(default_factory=list)
    best: Trial | None = None
    direction: str = "maximize"

    def __post_init__(self) -> None:
        if self.direction != "maximize":
            raise SMBOError(f"unsupported direction {self.direction!r}")

    def to_json(self) -> str:
        payload = {
            "direction": self.direction,
            "best": self.best.trial_id if self.best else None,
            "trials": [
                {"trial_id": t.trial_id, "params": t.params, "score": t.score,
                 "payload": t.payload if _json_safe(t.payload) else None}
                for t in self.trials
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Study":
        data = json.loads(text)
        study = cls(direction=data.get("direction", "maximize"))
        for raw in data["trials"]:
            record(study, Trial(raw["trial_id"], dict(raw["params"]),
                                float(raw["score"]), raw.get("payload")))
        return study


def _json_safe(value) -> bool:
    try:
        json.dumps(value)
        return True
    except (TypeError, ValueError):
        return False


def record(study: Study, trial: Trial) -> Study:
    """Append a trial; the incumbent changes only on strict score improvement."""
    if not math.isfinite(trial.score):
        raise SMBOError(f"trial {trial.trial_id} has non-finite score {trial.score}")
    if trial.trial_id != len(study.trials):
        raise SMBOError(f"trial_id must be dense: expected {len(study.trials)}, "
                        f"got {trial.trial_id}")
    study.trials.append(trial)
    if study.best is None or trial.score > study.best.score:
        study.best = trial
    return study


def _parzen_pmf(values: list[int], low: int, high: int, bandwidth: float) -> list[float]:
    """Mixture over the integer grid: one truncated Gaussian per observation
    plus a uniform prior, every component weighted 1/(n+1)."""
    size = high - low + 1
    weight = 1.0 / (len(values) + 1)
    pmf = [weight / size] * size
    for v in values:
        kernel = [math.exp(-0.5 * ((low + i - v) / bandwidth) ** 2)
                  for i in range(size)]
        total = sum(kernel)
        for i in range(size):
            pmf[i] += weight * kernel[i] / total
    return pmf


def suggest_int(study: Study, name: str, low: int, high: int,
                rng: random.Random, config: TPEConfig | None = None) -> int:
    """Suggest an integer in [low, high] for the named parameter."""
    if low > high:
        raise SMBOError(f"low must be ≤ high, got [{low}, {high}]")
    if low == high:
        return low
    config = config or TPEConfig()
    observed = [t for t in study.trials if name in t.params]
    if len(observed) < config.n_startup:
        return rng.randint(low, high)

    n_good = max(1, math.ceil(config.gamma * len(observed)))
    # Ties at the quantile resolve toward recency: newer trials go to "good".
    ranked = sorted(observed, key=lambda t: (-t.score, -t.trial_id))
    good = [t.params[name] for t in ranked[:n_good]]
    bad = [t.params[name] for t in ranked[n_good:]]

    l_pmf = _parzen_pmf(good, low, high, config.bandwidth(low, high, len(good)))
    g_pmf = _parzen_pmf(bad, low, high, config.bandwidth(low, high, len(bad)))

    grid = range(low, high + 1)
    candidates = rng.choices(list(grid), weights=l_pmf, k=config.n_candidates)
    return max(candidates, key=lambda x: l_pmf[x - low] / g_pmf[x - low])
