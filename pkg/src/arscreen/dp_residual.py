"""Dirichlet process mixture over AR(1) residual laws, truncated for blocked Gibbs.

The mixing distribution over (phi, v) gets a stick-breaking prior truncated
to a fixed number of atoms: weights w_l = s_l * prod_{j<l}(1 - s_j) with
s_l ~ Beta(1, concentration) and the last weight taking the remainder.
One Gibbs sweep resamples unit assignments from their exact conditionals,
stick fractions from their Beta conditionals, and atom parameters by
random-walk Metropolis on (atanh phi, log v) targeting the base prior times
the likelihood of the currently assigned units. Proposal scales adapt
toward 25% acceptance only while ``adapt`` is set (burn-in), so the
post-burn-in chain has a fixed kernel.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .ar_core import ArParams, SeriesPanel, TimesGroup, group_whiten, panel_groups, LOG_2PI
from .errors import DomainError, NumericalError
from .mcmc import (
    adapt_scale,
    gumbel_argmax,
    rw_metropolis_step,
    sample_inverse_gamma,
    sample_sticks,
    stick_weights,
    stream,
    truncated_normal,
)
from .parametric import ParametricPrior

DEFAULT_TRUNCATION = 60


def expected_clusters(concentration: float, n_units: int) -> float:
    """Prior expected number of occupied clusters among n units.

    Equals sum_{i=0}^{n-1} concentration / (concentration + i).
    """
    if concentration <= 0.0:
        raise DomainError(f"concentration must be positive, got {concentration}")
    if n_units < 1:
        raise DomainError(f"need at least one unit, got {n_units}")
    i = np.arange(n_units, dtype=float)
    return float(np.sum(concentration / (concentration + i)))


def elicit_concentration(target_clusters: float, n_units: int, tol: float = 1e-10) -> float:
    """Concentration whose prior expected cluster count equals the target.

    The expected count is strictly increasing in the concentration with
    range (1, n); solved by bisection on the log scale to ``tol`` in the
    cluster count.
    """
    if n_units < 2:
        raise DomainError("cluster-count elicitation needs at least two units")
    if not (1.0 < target_clusters < n_units):
        raise DomainError(
            f"target cluster count must lie strictly between 1 and {n_units}, got {target_clusters}"
        )
    lo, hi = -30.0, 30.0
    while expected_clusters(np.exp(lo), n_units) > target_clusters:
        lo -= 10.0
    while expected_clusters(np.exp(hi), n_units) < target_clusters:
        hi += 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_clusters(np.exp(mid), n_units) < target_clusters:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    alpha = np.exp(0.5 * (lo + hi))
    if abs(expected_clusters(alpha, n_units) - target_clusters) > max(tol, 1e-8):
        raise NumericalError(f"concentration elicitation did not converge for target {target_clusters}")
    return float(alpha)


@dataclass
class StickState:
    """Truncated stick-breaking state: fractions, weights, and AR(1) atoms."""

    sticks: np.ndarray    # shape (L-1,)
    weights: np.ndarray   # shape (L,), sums to 1
    phi: np.ndarray       # shape (L,)
    v: np.ndarray         # shape (L,)

    @property
    def truncation(self) -> int:
        return int(self.weights.size)

    def atom(self, l: int) -> ArParams:
        return ArParams(float(self.phi[l]), float(self.v[l]))


@dataclass
class DpResidualState:
    """Full sampler state for the residual mixture."""

    stick: StickState
    assignments: np.ndarray      # shape (N,), atom index per unit
    concentration: float
    base: ParametricPrior
    prop_scale: np.ndarray       # shape (L, 2), RW proposal scales per atom
    adapt_steps: np.ndarray      # shape (L,), adaptation step counters

    @property
    def truncation(self) -> int:
        return self.stick.truncation

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.truncation)

    def clone(self) -> "DpResidualState":
        return copy.deepcopy(self)


def _draw_base_atoms(base: ParametricPrior, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    phi = np.array([truncated_normal(base.phi_mean, np.sqrt(base.phi_var), -1.0, 1.0, rng)
                    for _ in range(size)])
    v = np.array([sample_inverse_gamma(base.var_shape, base.var_scale, rng) for _ in range(size)])
    return phi, v


def init_residual_state(n_units: int, concentration: float, base: ParametricPrior,
                        truncation: int = DEFAULT_TRUNCATION, seed: int = 0,
                        rng: np.random.Generator | None = None) -> DpResidualState:
    """Draw an initial state from the prior.

    Sticks come from Beta(1, concentration), atoms from the base measure,
    and assignments from the prior weights, so the state is an exact prior
    draw and prior-invariance tests can start a chain here.
    """
    if concentration <= 0.0:
        raise DomainError(f"concentration must be positive, got {concentration}")
    if truncation < 2:
        raise DomainError(f"truncation must be at least 2, got {truncation}")
    if rng is None:
        rng = stream(seed, "residual-init")
    sticks = rng.beta(1.0, concentration, size=truncation - 1)
    weights = stick_weights(sticks)
    phi, v = _draw_base_atoms(base, truncation, rng)
    assignments = rng.choice(truncation, size=n_units, p=weights)
    return DpResidualState(
        stick=StickState(sticks, weights, phi, v),
        assignments=assignments.astype(np.int64),
        concentration=float(concentration),
        base=base,
        prop_scale=np.full((truncation, 2), 0.25),
        adapt_steps=np.zeros(truncation, dtype=np.int64),
    )


def _loglik_matrix(groups: list[TimesGroup], stick: StickState, n_units: int,
                   values: list[np.ndarray] | None) -> np.ndarray:
    """Null AR(1) log-likelihood of every unit under every atom."""
    L = stick.truncation
    out = np.empty((n_units, L))
    for gi, g in enumerate(groups):
        vals = g.values if values is None else values[gi]
        for l in range(L):
            E, logdet = group_whiten(g, stick.atom(l), values=vals)
            q = np.einsum("ij,ij->i", E, E)
            out[g.indices, l] = -0.5 * (g.length * LOG_2PI + logdet + q)
    return out


def _check_finite(ll: np.ndarray, groups: list[TimesGroup]) -> None:
    if np.all(np.isfinite(ll)):
        return
    unit, atom = np.argwhere(~np.isfinite(ll))[0]
    name = str(unit)
    for g in groups:
        hit = np.flatnonzero(g.indices == unit)
        if hit.size and g.unit_ids is not None:
            name = g.unit_ids[int(hit[0])]
    raise NumericalError(f"non-finite residual log-likelihood for unit {name!r} under atom {int(atom)}")


def _atom_logpost_factory(state: DpResidualState, member_blocks, likelihood_off: bool):
    """Log conditional for one atom in x = (atanh phi, log v) coordinates."""
    base = state.base

    def logpost(x: np.ndarray) -> float:
        phi = float(np.tanh(x[0]))
        v = float(np.exp(x[1]))
        if not (-1.0 < phi < 1.0) or not (0.0 < v < np.inf):
            return -np.inf
        log_jac = float(np.log1p(-phi * phi) + np.log(v))
        lp = base.log_density_phi_v(phi, v) + log_jac
        if not np.isfinite(lp):
            return -np.inf
        if likelihood_off:
            return lp
        params = ArParams(phi, v)
        total = lp
        for g, rows, vals in member_blocks:
            sub = (g.values if vals is None else vals)[rows]
            E, logdet = group_whiten(g, params, values=sub)
            q = float(np.einsum("ij,ij->", E, E))
            total += -0.5 * (rows.size * (g.length * LOG_2PI + logdet) + q)
        return total

    return logpost


def _sweep_residual(state: DpResidualState, groups: list[TimesGroup], n_units: int,
                    rng: np.random.Generator, adapt: bool, likelihood_off: bool,
                    values: list[np.ndarray] | None = None) -> np.ndarray:
    """One blocked Gibbs sweep over assignments, sticks, and atoms.

    ``values`` optionally overrides each group's observation matrix (the
    joint trajectory sampler passes current residuals). Returns the per-unit
    log-likelihood row sums under the new assignments for reuse by callers.
    Mutates ``state`` in place.
    """
    L = state.truncation
    log_w = np.full(L, -np.inf)
    pos = state.stick.weights > 0
    log_w[pos] = np.log(state.stick.weights[pos])

    if likelihood_off:
        ll = np.zeros((n_units, L))
    else:
        ll = _loglik_matrix(groups, state.stick, n_units, values)
        _check_finite(ll, groups)
    state.assignments = gumbel_argmax(ll + log_w[None, :], rng).astype(np.int64)

    counts = state.counts()
    sticks, weights = sample_sticks(counts, state.concentration, rng)
    state.stick.sticks = sticks
    state.stick.weights = weights

    members_by_atom: dict[int, list[tuple[TimesGroup, np.ndarray, np.ndarray | None]]] = {}
    for gi, g in enumerate(groups):
        a = state.assignments[g.indices]
        for l in np.unique(a):
            rows = np.flatnonzero(a == l)
            members_by_atom.setdefault(int(l), []).append(
                (g, rows, None if values is None else values[gi])
            )

    for l in range(L):
        if counts[l] == 0:
            phi, v = _draw_base_atoms(state.base, 1, rng)
            state.stick.phi[l] = phi[0]
            state.stick.v[l] = v[0]
            continue
        logpost = _atom_logpost_factory(state, members_by_atom.get(l, []), likelihood_off)
        x = np.array([np.arctanh(state.stick.phi[l]), np.log(state.stick.v[l])])
        x_new, _, accepted = rw_metropolis_step(x, logpost, state.prop_scale[l], rng)
        state.stick.phi[l] = np.tanh(x_new[0])
        state.stick.v[l] = np.exp(x_new[1])
        if adapt:
            factor = adapt_scale(1.0, accepted, int(state.adapt_steps[l]))
            state.prop_scale[l] *= factor
            state.adapt_steps[l] += 1

    return ll[np.arange(n_units), state.assignments]


def gibbs_sweep_residual(state: DpResidualState, panel, rng: np.random.Generator,
                         adapt: bool = False, likelihood_off: bool = False) -> DpResidualState:
    """One full Gibbs sweep for a standalone residual mixture fit.

    ``panel`` may be a SeriesPanel or a prebuilt group list. With
    ``likelihood_off`` the likelihood is held constant (every unit scores
    zero under every atom), which turns the sweep into a prior-preserving
    kernel for invariance testing. The state is updated in place and
    returned.
    """
    groups = panel if isinstance(panel, list) else panel_groups(panel)
    n_units = int(sum(g.n for g in groups))
    _sweep_residual(state, groups, n_units, rng, adapt, likelihood_off)
    return state


def run_residual_chain(panel: SeriesPanel, concentration: float, base: ParametricPrior,
                       truncation: int = DEFAULT_TRUNCATION, n_burn: int = 200,
                       n_keep: int = 300, seed: int = 0) -> tuple[DpResidualState, list[dict]]:
    """Burn-in plus retained sweeps for a standalone residual mixture fit.

    Returns the final state and one record per retained sweep with the
    stick weights, atoms, and assignment histogram.
    """
    groups = panel_groups(panel)
    n_units = len(panel)
    state = init_residual_state(n_units, concentration, base, truncation,
                                rng=stream(seed, "residual-chain", "init"))
    rng = stream(seed, "residual-chain", "sweeps")
    for _ in range(n_burn):
        _sweep_residual(state, groups, n_units, rng, adapt=True, likelihood_off=False)
    records = []
    for _ in range(n_keep):
        _sweep_residual(state, groups, n_units, rng, adapt=False, likelihood_off=False)
        records.append({
            "weights": state.stick.weights.copy(),
            "phi": state.stick.phi.copy(),
            "v": state.stick.v.copy(),
            "counts": state.counts(),
        })
    return state, records
