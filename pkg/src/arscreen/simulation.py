"""Synthetic panel generation and error accounting for operating-characteristic studies.

Panels are generated with stationary initialization (the first value is
drawn from the marginal distribution, no burn-in) and per-unit random
streams derived from the run seed, so a unit's data do not depend on how
many units precede it. A study can reuse one fixed set of noise streams
across signal configurations by passing the same ``noise_seed``, which
isolates the effect of the signal from Monte Carlo noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from .ar_core import ArParams, ObservedSeries, SeriesPanel, stationary_variance
from .errors import DomainError, InvalidInputError
from .mcmc import stream


def simulate_ar1(params: ArParams, length: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate a stationary AR(1) path of the given length.

    y_0 ~ N(0, v / (1 - phi^2)) and y_t = phi y_{t-1} + sqrt(v) e_t, so no
    burn-in is needed; marginals are exactly stationary.
    """
    if length < 1:
        raise DomainError(f"path length must be positive, got {length}")
    z = rng.standard_normal(length)
    y0 = np.sqrt(stationary_variance(params)) * z[0]
    if length == 1:
        return np.array([y0])
    innov = np.sqrt(params.v) * z[1:]
    rest = lfilter([1.0], [1.0, -params.phi], innov, zi=np.array([params.phi * y0]))[0]
    return np.concatenate(([y0], rest))


@dataclass(frozen=True)
class MixtureScenario:
    """Panel design: units drawn from a finite mixture of AR(1) components.

    ``components`` pairs each ArParams with its mixing probability (summing
    to one). When ``shift_prob`` is positive, each unit independently gets a
    mean trajectory with that probability; ``shift_source(rng, times)``
    returns the trajectory values (default: a constant level drawn
    N(0, shift_var)).
    """

    components: tuple[tuple[ArParams, float], ...]
    n_units: int
    length: int
    shift_prob: float = 0.0
    shift_var: float = 1.0
    shift_source: Callable[[np.random.Generator, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        probs = np.array([p for _, p in self.components], dtype=float)
        if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"component probabilities must be nonnegative and sum to 1, got {probs}")
        if self.n_units < 1 or self.length < 1:
            raise InvalidInputError("scenario needs at least one unit and one time point")
        if not (0.0 <= self.shift_prob <= 1.0):
            raise DomainError(f"shift probability must lie in [0, 1], got {self.shift_prob}")


@dataclass(frozen=True)
class TruthLabels:
    """Ground truth for a generated panel, aligned with panel order."""

    unit_ids: tuple[str, ...]
    nonnull: np.ndarray          # bool: unit has a mean trajectory
    component: np.ndarray        # int: residual mixture component index

    def __post_init__(self):
        if len(self.unit_ids) != self.nonnull.size or self.nonnull.size != self.component.size:
            raise InvalidInputError("truth labels misaligned with unit ids")


def _unit_id(i: int, n: int) -> str:
    return f"u{i:0{len(str(n - 1))}d}"


def generate_mixture_panel(scenario: MixtureScenario, seed: int) -> tuple[SeriesPanel, TruthLabels]:
    """Generate a panel from a finite AR(1) mixture, optionally with mean shifts.

    Each unit consumes only its own named substream of ``seed``, so results
    are independent of generation order and of the number of other units.
    """
    probs = np.array([p for _, p in scenario.components], dtype=float)
    times = np.arange(scenario.length, dtype=np.int64)
    series = []
    nonnull = np.zeros(scenario.n_units, dtype=bool)
    comp = np.zeros(scenario.n_units, dtype=np.int64)
    for i in range(scenario.n_units):
        rng = stream(seed, "mixture-unit", i)
        c = int(rng.choice(probs.size, p=probs))
        comp[i] = c
        y = simulate_ar1(scenario.components[c][0], scenario.length, rng)
        if scenario.shift_prob > 0.0 and rng.uniform() < scenario.shift_prob:
            nonnull[i] = True
            if scenario.shift_source is None:
                y = y + rng.normal(0.0, np.sqrt(scenario.shift_var))
            else:
                y = y + np.asarray(scenario.shift_source(rng, times), dtype=float)
        series.append(ObservedSeries(_unit_id(i, scenario.n_units), times, y))
    panel = SeriesPanel(tuple(series))
    return panel, TruthLabels(panel.unit_ids, nonnull, comp)


def generate_prior_study(n_units: int, grid: np.ndarray, signal_prob: float,
                         residual_mixture, trajectory_sampler, seed: int,
                         noise_seed: int | None = None) -> tuple[SeriesPanel, TruthLabels]:
    """Generate a panel whose residuals come from a discrete AR(1) mixing measure.

    ``residual_mixture`` exposes arrays ``weights``, ``phi`` and ``v`` (a
    stick-breaking state qualifies); each unit's residual component and
    innovations come from a noise stream keyed by ``noise_seed`` (default:
    derived from ``seed``), while the signal labels and trajectories come
    from ``seed``. Holding ``noise_seed`` fixed while varying ``seed`` or
    ``signal_prob`` reuses the identical noise paths across study arms.

    ``trajectory_sampler(rng, grid)`` returns the mean trajectory for a
    signal unit.
    """
    if not (0.0 <= signal_prob <= 1.0):
        raise DomainError(f"signal probability must lie in [0, 1], got {signal_prob}")
    grid = np.asarray(grid, dtype=np.int64)
    weights = np.asarray(residual_mixture.weights, dtype=float)
    phis = np.asarray(residual_mixture.phi, dtype=float)
    vs = np.asarray(residual_mixture.v, dtype=float)
    if noise_seed is None:
        noise_seed = seed
    series = []
    nonnull = np.zeros(n_units, dtype=bool)
    comp = np.zeros(n_units, dtype=np.int64)
    for i in range(n_units):
        noise_rng = stream(noise_seed, "study-noise", i)
        c = int(noise_rng.choice(weights.size, p=weights))
        comp[i] = c
        y = simulate_ar1(ArParams(float(phis[c]), float(vs[c])), grid.size, noise_rng)
        label_rng = stream(seed, "study-signal", i)
        if label_rng.uniform() < signal_prob:
            nonnull[i] = True
            y = y + np.asarray(trajectory_sampler(label_rng, grid), dtype=float)
        series.append(ObservedSeries(_unit_id(i, n_units), grid, y))
    panel = SeriesPanel(tuple(series))
    return panel, TruthLabels(panel.unit_ids, nonnull, comp)


@dataclass(frozen=True)
class ErrorReport:
    """Confusion counts and false discovery rate for one flagging rule."""

    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int

    @property
    def discoveries(self) -> int:
        return self.true_positives + self.false_positives

    @property
    def fdr(self) -> float:
        """False discoveries over discoveries; zero when nothing is flagged."""
        d = self.discoveries
        return self.false_positives / d if d > 0 else 0.0


def error_report(flagged, truth: TruthLabels) -> ErrorReport:
    """Confusion counts for a set of flagged unit ids against ground truth."""
    flagged = set(flagged)
    unknown = flagged - set(truth.unit_ids)
    if unknown:
        raise InvalidInputError(f"flagged ids not present in truth labels: {sorted(unknown)[:5]}")
    tp = fp = tn = fn = 0
    for uid, is_signal in zip(truth.unit_ids, truth.nonnull):
        hit = uid in flagged
        if hit and is_signal:
            tp += 1
        elif hit:
            fp += 1
        elif is_signal:
            fn += 1
        else:
            tn += 1
    return ErrorReport(tp, fp, tn, fn)
