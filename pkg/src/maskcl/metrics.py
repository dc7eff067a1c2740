"""Transfer metrics, negative-transfer margins, the independent single-task
baseline, and an empirical verifier for the error-transfer bounds on finite
discrete task pairs."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import rng


@dataclass(frozen=True)
class AccuracyMatrix:
    """Lower-triangular accuracies: rows[t-1][i-1] is the accuracy on task i
    after learning task t (1-based)."""

    rows: tuple

    def __post_init__(self):
        for t, row in enumerate(self.rows, start=1):
            if len(row) != t:
                raise ValueError(f"row {t} must have {t} entries, got {len(row)}")
            if any(not 0.0 <= a <= 1.0 for a in row):
                raise ValueError(f"accuracies must lie in [0, 1], got {row}")

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def at(self, t: int, i: int) -> float:
        return self.rows[t - 1][i - 1]


@dataclass(frozen=True)
class Metrics:
    acc: float
    fwt: float | None
    bwt: float | None


def compute_metrics(acc: AccuracyMatrix, one_baseline=None) -> Metrics:
    """Average final accuracy, forward transfer against the independent
    per-task baseline, and backward transfer (forgetting rate).

    FWT and BWT are undefined for a single task; FWT additionally needs a
    baseline accuracy for every task from the second onward.
    """
    t_total = acc.num_tasks
    final = acc.rows[-1]
    mean_acc = float(np.mean(final))
    if t_total == 1:
        return Metrics(acc=mean_acc, fwt=None, bwt=None)
    bwt = float(
        sum(acc.at(t_total, i) - acc.at(i, i) for i in range(1, t_total)) / (t_total - 1)
    )
    fwt = None
    if one_baseline is not None:
        baseline = list(one_baseline)
        if len(baseline) != t_total or any(b is None for b in baseline[1:]):
            raise ValueError("need a baseline accuracy for every task from the second on")
        fwt = float(
            sum(acc.at(t, t) - baseline[t - 1] for t in range(2, t_total + 1)) / (t_total - 1)
        )
    return Metrics(acc=mean_acc, fwt=fwt, bwt=bwt)


def transfer_margins(err_with: float, err_without: float,
                     err_before: float, err_after: float) -> tuple:
    """Forward and backward negative-transfer margins; positive values mean
    the transfer hurt."""
    for v in (err_with, err_without, err_before, err_after):
        if not 0.0 <= v <= 1.0:
            raise ValueError("errors must lie in [0, 1]")
    return err_with - err_without, err_after - err_before


@dataclass(frozen=True)
class DiscreteTaskPair:
    """Two labeled tasks over one finite input space.

    Densities are probability vectors; labelers and the hypothesis map each
    point into [0, 1].
    """

    density_i: np.ndarray
    density_t: np.ndarray
    labeler_i: np.ndarray
    labeler_t: np.ndarray
    hypothesis: np.ndarray

    def __post_init__(self):
        arrays = {
            "density_i": np.asarray(self.density_i, dtype=np.float64),
            "density_t": np.asarray(self.density_t, dtype=np.float64),
            "labeler_i": np.asarray(self.labeler_i, dtype=np.float64),
            "labeler_t": np.asarray(self.labeler_t, dtype=np.float64),
            "hypothesis": np.asarray(self.hypothesis, dtype=np.float64),
        }
        n = arrays["density_i"].shape[0]
        for name, a in arrays.items():
            if a.shape != (n,):
                raise ValueError(f"{name} must be a vector of length {n}")
            object.__setattr__(self, name, a)
        for name in ("density_i", "density_t"):
            d = arrays[name]
            if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")
        for name in ("labeler_i", "labeler_t", "hypothesis"):
            v = arrays[name]
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} values must lie in [0, 1]")


@dataclass(frozen=True)
class BoundResult:
    lhs: float
    rhs: float
    base_error: float
    density_gap: float
    label_gap: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _expected_err(density, hypothesis, labeler) -> float:
    return float(np.sum(density * np.abs(hypothesis - labeler)))


def transfer_bound(pair: DiscreteTaskPair, direction: str) -> BoundResult:
    """Exact bound terms on a discrete pair.

    forward:  err_t(h) <= err_i(h) + L1(density_i, density_t) + min-label-gap
    backward: err_i(h) <= err_t(h) + the same two slack terms

    where the label gap is min over the two densities of E[|l_i - l_t|].
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    density_gap = float(np.sum(np.abs(pair.density_i - pair.density_t)))
    label_diff = np.abs(pair.labeler_i - pair.labeler_t)
    label_gap = min(
        float(np.sum(pair.density_i * label_diff)),
        float(np.sum(pair.density_t * label_diff)),
    )
    err_i = _expected_err(pair.density_i, pair.hypothesis, pair.labeler_i)
    err_t = _expected_err(pair.density_t, pair.hypothesis, pair.labeler_t)
    if direction == "forward":
        lhs, base = err_t, err_i
    else:
        lhs, base = err_i, err_t
    return BoundResult(
        lhs=lhs,
        rhs=base + density_gap + label_gap,
        base_error=base,
        density_gap=density_gap,
        label_gap=label_gap,
    )


BOUND_TOL = 1e-12


def verify_transfer_bounds(trials: int, seed: int = 0) -> dict:
    """Sample random discrete task pairs and check both bound directions.

    The inequality is exact on shared discrete measures, so any violation
    beyond float tolerance indicates an implementation bug. The report logs
    the loosest and tightest cases.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    violations = []
    max_slack = None
    min_slack = None
    for trial in range(trials):
        g = rng.stream(seed, "bound-trial", trial)
        n = int(g.integers(2, 17))
        pair = DiscreteTaskPair(
            density_i=_random_density(g, n),
            density_t=_random_density(g, n),
            labeler_i=g.integers(0, 2, n).astype(np.float64),
            labeler_t=g.integers(0, 2, n).astype(np.float64),
            hypothesis=g.random(n),
        )
        for direction in ("forward", "backward"):
            res = transfer_bound(pair, direction)
            case = {
                "trial": trial,
                "direction": direction,
                "lhs": res.lhs,
                "rhs": res.rhs,
                "slack": res.slack,
            }
            if res.lhs > res.rhs + BOUND_TOL:
                violations.append(case)
            if max_slack is None or res.slack > max_slack["slack"]:
                max_slack = case
            if min_slack is None or res.slack < min_slack["slack"]:
                min_slack = case
    return {
        "trials": trials,
        "seed": seed,
        "directions": ["forward", "backward"],
        "violations": violations,
        "violation_count": len(violations),
        "max_slack": max_slack,
        "tightest": min_slack,
        "tolerance": BOUND_TOL,
    }


def _random_density(g: np.random.Generator, n: int) -> np.ndarray:
    u = g.random(n) + 1e-9
    d = u / u.sum()
    # force an exact sum of 1 so the probability-vector invariant holds
    d[-1] = 1.0 - float(d[:-1].sum())
    return d


def single_task_baseline(dataset, cfg) -> float:
    """Test accuracy of a fresh, independently trained network on one task.

    Uses the same architecture, budget, and seed streams as the main run, so
    the baseline for the first task coincides with the sequence's own first
    task exactly.
    """
    from .learner import run_sequence  # local import to avoid a module cycle

    solo_cfg = dataclasses.replace(
        cfg, enable_detection=False, enable_alignment=False, enable_bkt=False
    )
    result = run_sequence([dataset], solo_cfg)
    return result.accuracy_rows[0][0]
