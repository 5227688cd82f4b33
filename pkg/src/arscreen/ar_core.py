"""Core types and exact Gaussian numerics for panels of stationary AR(1) series.

A unit's observations on integer times t_1 < ... < t_T are modeled as a
zero-mean stationary AR(1) with autoregressive coefficient phi (|phi| < 1)
and innovation variance v, so the covariance between observations at t_i
and t_j is v / (1 - phi^2) * phi^(|t_i - t_j|). For consecutive times the
log-likelihood is evaluated in O(T) through the prediction-error
decomposition; for gapped times a dense Cholesky factorization is used.

A constant mean shift with prior N(0, shift_var) can be integrated out in
closed form, which yields the conditional Bayes factor used by both the
parametric and nonparametric screens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import DomainError, InvalidInputError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ArParams:
    """Stationary AR(1) parameters: coefficient ``phi`` and innovation variance ``v``."""

    phi: float
    v: float

    def __post_init__(self):
        if not (-1.0 < self.phi < 1.0):
            raise DomainError(f"AR coefficient must lie in (-1, 1), got {self.phi}")
        if not (self.v > 0.0 and np.isfinite(self.v)):
            raise DomainError(f"innovation variance must be positive and finite, got {self.v}")


def stationary_variance(params: ArParams) -> float:
    """Marginal variance v / (1 - phi^2) of the stationary process."""
    return params.v / (1.0 - params.phi * params.phi)


@dataclass(frozen=True)
class ObservedSeries:
    """One unit's observations: strictly increasing integer times and finite values."""

    unit_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or values.ndim != 1 or times.size != values.size:
            raise InvalidInputError(f"unit {self.unit_id!r}: times and values must be 1-d and equal length")
        if times.size == 0:
            raise InvalidInputError(f"unit {self.unit_id!r}: series is empty")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise InvalidInputError(f"unit {self.unit_id!r}: times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError(f"unit {self.unit_id!r}: values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def contiguous(self) -> bool:
        """True when the times are consecutive integers."""
        return len(self) == 1 or bool(np.all(np.diff(self.times) == 1))


@dataclass(frozen=True)
class SeriesPanel:
    """A panel of series with unique unit ids, each at least ``min_length`` long."""

    series: tuple[ObservedSeries, ...]
    min_length: int = 1

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        ids = [s.unit_id for s in self.series]
        if len(set(ids)) != len(ids):
            dupes = sorted({u for u in ids if ids.count(u) > 1})
            raise InvalidInputError(f"duplicate unit ids in panel: {dupes[:5]}")
        for s in self.series:
            if len(s) < self.min_length:
                raise InvalidInputError(
                    f"unit {s.unit_id!r} has {len(s)} observations, fewer than min_length={self.min_length}"
                )

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, i: int) -> ObservedSeries:
        return self.series[i]

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(s.unit_id for s in self.series)


def build_ar1_covariance(params: ArParams, times: np.ndarray) -> np.ndarray:
    """Dense stationary AR(1) covariance matrix over the given integer times."""
    times = np.asarray(times, dtype=np.int64)
    lags = np.abs(times[:, None] - times[None, :])
    return stationary_variance(params) * np.power(params.phi, lags)


def _whiten(values: np.ndarray, times: np.ndarray, contiguous: bool,
            params: ArParams) -> tuple[np.ndarray, float]:
    """Whiten rows of ``values`` (shape (n, T)) under the AR(1) covariance.

    Returns (E, logdet) with E @ E.T summing to the quadratic forms:
    each row e satisfies e.e = y' Sigma^{-1} y, and logdet = log|Sigma|.
    O(T) per row for consecutive times, dense Cholesky otherwise.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    T = values.shape[1]
    if contiguous:
        s = stationary_variance(params)
        E = np.empty_like(values)
        E[:, 0] = values[:, 0] / np.sqrt(s)
        if T > 1:
            E[:, 1:] = (values[:, 1:] - params.phi * values[:, :-1]) / np.sqrt(params.v)
        logdet = float(np.log(s) + (T - 1) * np.log(params.v))
        return E, logdet
    cov = build_ar1_covariance(params, times)
    try:
        L = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"AR(1) covariance factorization failed for {params!r}: {exc}") from exc
    E = solve_triangular(L, values.T, lower=True).T
    logdet = float(2.0 * np.sum(np.log(np.diag(L))))
    return E, logdet


def gaussian_parts(values: np.ndarray, times: np.ndarray, contiguous: bool,
                   params: ArParams) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Per-row quadratic forms needed by the mean-shift marginal likelihood.

    For rows y of ``values`` returns (q_yy, q_y1, s11, logdet) where
    q_yy = y' Sigma^{-1} y, q_y1 = y' Sigma^{-1} 1 and s11 = 1' Sigma^{-1} 1.
    """
    times = np.asarray(times, dtype=np.int64)
    stacked = np.vstack([np.atleast_2d(values), np.ones((1, times.size))])
    E, logdet = _whiten(stacked, times, contiguous, params)
    Ey, e1 = E[:-1], E[-1]
    q_yy = np.einsum("ij,ij->i", Ey, Ey)
    q_y1 = Ey @ e1
    s11 = float(e1 @ e1)
    return q_yy, q_y1, s11, logdet


def ar1_loglik(series: ObservedSeries, params: ArParams, method: str = "auto") -> float:
    """Log-likelihood of a series under the stationary AR(1) null.

    ``method`` selects the evaluation path: "auto" uses the O(T) recursion
    for consecutive times and dense Cholesky otherwise; "fast" and "dense"
    force a path (``fast`` requires consecutive times).
    """
    if method not in ("auto", "fast", "dense"):
        raise DomainError(f"unknown likelihood method {method!r}")
    if method == "fast" and not series.contiguous:
        raise DomainError(f"unit {series.unit_id!r}: fast path requires consecutive times")
    contiguous = series.contiguous if method == "auto" else (method == "fast")
    E, logdet = _whiten(series.values, series.times, contiguous, params)
    q_yy = float(E[0] @ E[0])
    return -0.5 * (len(series) * LOG_2PI + logdet + q_yy)


def mean_shift_loglik(series: ObservedSeries, params: ArParams, shift_var: float,
                      method: str = "auto") -> float:
    """Marginal log-likelihood with a constant mean shift integrated out.

    The shift has prior N(0, shift_var), so the marginal covariance is
    Sigma + shift_var * 11'; the rank-one update is evaluated via the
    Sherman-Morrison identity and the matrix determinant lemma.
    """
    if shift_var < 0.0:
        raise DomainError(f"shift variance must be nonnegative, got {shift_var}")
    if method not in ("auto", "fast", "dense"):
        raise DomainError(f"unknown likelihood method {method!r}")
    if method == "fast" and not series.contiguous:
        raise DomainError(f"unit {series.unit_id!r}: fast path requires consecutive times")
    contiguous = series.contiguous if method == "auto" else (method == "fast")
    q_yy, q_y1, s11, logdet = gaussian_parts(series.values, series.times, contiguous, params)
    null = -0.5 * (len(series) * LOG_2PI + logdet + float(q_yy[0]))
    denom = 1.0 + shift_var * s11
    return null - 0.5 * np.log(denom) + 0.5 * shift_var * float(q_y1[0]) ** 2 / denom


def log_conditional_bayes_factor(series: ObservedSeries, params: ArParams, shift_var: float) -> float:
    """Log Bayes factor of the mean-shift alternative against the AR(1) null."""
    q_yy, q_y1, s11, _ = gaussian_parts(series.values, series.times, series.contiguous, params)
    denom = 1.0 + shift_var * s11
    return -0.5 * np.log(denom) + 0.5 * shift_var * float(q_y1[0]) ** 2 / denom


def conditional_bayes_factor(series: ObservedSeries, params: ArParams, shift_var: float) -> float:
    """Bayes factor of the mean-shift alternative against the AR(1) null.

    Equal to exp(mean_shift_loglik - ar1_loglik); may overflow to inf for
    extreme evidence, so downstream odds calculations work on the log scale.
    """
    return float(np.exp(log_conditional_bayes_factor(series, params, shift_var)))


def cdf_standardize(panel: SeriesPanel) -> SeriesPanel:
    """Pooled rank-based transform of all panel values to standard normal scores.

    All observations are pooled, ranked with average ranks for ties, mapped
    to (rank - 0.5) / n, and passed through the standard normal quantile
    function. The transform is rank-preserving and invariant under strictly
    increasing transformations of the raw values, and never produces
    infinities since (rank - 0.5) / n stays inside (0, 1).
    """
    if len(panel) == 0:
        return panel
    pooled = np.concatenate([s.values for s in panel])
    ranks = rankdata(pooled, method="average")
    scores = ndtri((ranks - 0.5) / pooled.size)
    out = []
    pos = 0
    for s in panel:
        n = len(s)
        out.append(ObservedSeries(s.unit_id, s.times, scores[pos:pos + n]))
        pos += n
    return SeriesPanel(tuple(out), min_length=panel.min_length)


# --- grouped panel representation for vectorized likelihood work ---


@dataclass
class TimesGroup:
    """Units sharing one observation-time vector, stacked for vectorized whitening."""

    indices: np.ndarray      # positions in panel order
    times: np.ndarray        # shared times, shape (T,)
    values: np.ndarray       # stacked observations, shape (n, T)
    contiguous: bool
    grid_pos: np.ndarray | None = None   # positions of times within a global grid
    unit_ids: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return int(self.indices.size)

    @property
    def length(self) -> int:
        return int(self.times.size)


def panel_groups(panel: SeriesPanel, grid: np.ndarray | None = None) -> list[TimesGroup]:
    """Group panel units by their observation-time vectors.

    When ``grid`` is given, each group's times must be a subset of it and
    the positions are cached for restricting grid-valued trajectories.
    """
    buckets: dict[tuple[int, ...], list[int]] = {}
    for i, s in enumerate(panel):
        buckets.setdefault(tuple(int(t) for t in s.times), []).append(i)
    groups = []
    for key, idx in buckets.items():
        times = np.asarray(key, dtype=np.int64)
        values = np.vstack([panel[i].values for i in idx])
        contiguous = times.size == 1 or bool(np.all(np.diff(times) == 1))
        pos = None
        if grid is not None:
            pos = np.searchsorted(grid, times)
            if np.any(pos >= grid.size) or np.any(grid[np.minimum(pos, grid.size - 1)] != times):
                bad = panel[idx[0]].unit_id
                raise InvalidInputError(f"unit {bad!r} has times outside the trajectory grid")
        ids = tuple(panel[i].unit_id for i in idx)
        groups.append(TimesGroup(np.asarray(idx, dtype=np.int64), times, values, contiguous, pos, ids))
    return groups


def group_gaussian_parts(group: TimesGroup, params: ArParams,
                         values: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, float, float]:
    """``gaussian_parts`` for a whole group at once (optionally overriding values)."""
    v = group.values if values is None else values
    return gaussian_parts(v, group.times, group.contiguous, params)


def group_whiten(group: TimesGroup, params: ArParams,
                 values: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Whitened rows and covariance log-determinant for a group."""
    v = group.values if values is None else values
    return _whiten(v, group.times, group.contiguous, params)


def ar1_precision(params: ArParams, times: np.ndarray) -> np.ndarray:
    """Inverse of the stationary AR(1) covariance over the given times.

    Closed-form tridiagonal matrix for consecutive times, dense inverse
    otherwise.
    """
    times = np.asarray(times, dtype=np.int64)
    T = times.size
    contiguous = T == 1 or bool(np.all(np.diff(times) == 1))
    if contiguous:
        Q = np.zeros((T, T))
        if T == 1:
            Q[0, 0] = 1.0 / stationary_variance(params)
            return Q
        phi, v = params.phi, params.v
        d = np.full(T, (1.0 + phi * phi) / v)
        d[0] = d[-1] = 1.0 / v
        Q[np.arange(T), np.arange(T)] = d
        off = np.full(T - 1, -phi / v)
        Q[np.arange(T - 1), np.arange(1, T)] = off
        Q[np.arange(1, T), np.arange(T - 1)] = off
        return Q
    cov = build_ar1_covariance(params, times)
    try:
        L = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"AR(1) covariance factorization failed for {params!r}: {exc}") from exc
    inv = solve_triangular(L, np.eye(T), lower=True)
    return inv.T @ inv
