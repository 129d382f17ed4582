"""Loss-curve statistics and the model-completion hardness estimator."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Mapping

from ..runs import TrainingRun


class ZeroCostThreshold(ValueError):
    pass


class NoUsableProcedure(ValueError):
    def __init__(self, msg, procedures=None):
        super().__init__(msg)
        self.procedures = procedures or {}


@dataclass(frozen=True)
class CostRecord:
    threshold: float
    cost: int
    censored: bool = False

    @property
    def value(self) -> float:
        """Cost with censoring mapped to +inf, for ordering."""
        return math.inf if self.censored else float(self.cost)


def best_loss(run: TrainingRun) -> float:
    if not run.points:
        raise ValueError("best_loss of an empty training run")
    return min(run.losses)


def threshold(alpha: float, best: float, initial: float) -> float:
    """Loss level at relative progress ``alpha`` from the untrained loss to the best loss."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if initial < best:
        raise ValueError(f"initial loss {initial} is below the best loss {best}")
    if alpha == 1.0:
        return best
    # alpha*best + (1-alpha)*initial, written so rounding keeps it monotone in alpha
    return max(best, initial - alpha * (initial - best))


def training_cost(run: TrainingRun, level: float) -> CostRecord:
    """First evaluated step whose loss is at or below ``level``; censored at the budget otherwise."""
    if not run.points:
        raise ValueError("training_cost of an empty training run")
    for step, loss in run.points:
        if loss <= level:
            return CostRecord(level, step)
    return CostRecord(level, max(run.budget, run.points[-1][0]), censored=True)


@dataclass
class ProcedureStats:
    ratios: dict[int, float] = field(default_factory=dict)
    censored: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.ratios)

    @property
    def excluded(self) -> bool:
        return not self.ratios

    @property
    def mean(self) -> float:
        return statistics.fmean(self.ratios.values()) if self.ratios else math.nan

    @property
    def std(self) -> float:
        return statistics.stdev(self.ratios.values()) if len(self.ratios) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"ratios": {str(k): v for k, v in self.ratios.items()}, "censored": self.censored,
                "mean": None if self.excluded else self.mean, "std": self.std, "excluded": self.excluded}


@dataclass
class MCHardnessEstimate:
    alpha: float
    procedures: dict[str, ProcedureStats]
    estimate: float
    best_procedure: str
    filtered_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "estimate": self.estimate, "best_procedure": self.best_procedure,
                "filtered_seeds": self.filtered_seeds,
                "procedures": {k: v.to_dict() for k, v in self.procedures.items()}}


def seed_ratio(train: TrainingRun, retrain: TrainingRun, alpha: float) -> float | None:
    """Retrain cost over train cost at the train run's own threshold; None when censored."""
    level = threshold(alpha, best_loss(train), train.initial_loss)
    denom = training_cost(train, level)
    num = training_cost(retrain, level)
    if num.censored:
        return None
    if denom.cost == 0:
        if num.cost == 0:
            return 0.0
        raise ZeroCostThreshold(
            f"zero-cost threshold: untrained loss already meets {level:.6g} at alpha={alpha}, "
            f"but retraining needed {num.cost} steps")
    return num.cost / denom.cost


def mc_hardness(train_runs: Mapping[int, TrainingRun],
                retrain_runs: Mapping[str, Mapping[int, TrainingRun]],
                alpha: float, min_best_loss: float | None = None) -> MCHardnessEstimate:
    """Mean per-seed cost ratio for every procedure, and the smallest mean.

    Each retrain run is paired with the train run of the same seed. Censored
    seeds are left out of a procedure's mean and listed; a procedure with no
    usable seed is excluded. ``min_best_loss`` drops seeds whose trained model
    never got below that loss.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    filtered = sorted(s for s, r in train_runs.items()
                      if min_best_loss is not None and best_loss(r) > min_best_loss)
    stats: dict[str, ProcedureStats] = {}
    for name, runs in retrain_runs.items():
        if not runs:
            raise ValueError(f"procedure {name!r} has no retraining runs")
        ps = ProcedureStats()
        for seed, rr in sorted(runs.items()):
            if seed in filtered:
                continue
            if seed not in train_runs:
                raise KeyError(f"retrain seed {seed} of {name!r} has no matching training run")
            r = seed_ratio(train_runs[seed], rr, alpha)
            if r is None:
                ps.censored.append(seed)
            else:
                ps.ratios[seed] = r
        stats[name] = ps
    usable = {k: v for k, v in stats.items() if not v.excluded}
    if not usable:
        raise NoUsableProcedure(f"every procedure was censored or filtered at alpha={alpha}", stats)
    best = min(usable, key=lambda k: usable[k].mean)
    return MCHardnessEstimate(alpha, stats, usable[best].mean, best, filtered)
