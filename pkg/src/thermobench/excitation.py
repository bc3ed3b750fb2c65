"""Targeted self-excitation: decide which zones to excite and when.

The generator ranks excitation targets from the current estimate: either
from the eigen-structure of the parameter covariance (which zones touch
the most uncertain parameter directions), from temperature sensitivities,
or from Monte Carlo energy sensitivities. The selector turns a ranked
candidate into a concrete short-horizon set-point modification when the
predicted information gain justifies it: a simple heat-to-the-bound rule
while the building is still under thermostat control, and a budgeted
convex program once the predictive controller is running.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .mpc import MpcConfig, MpcSolution, prediction_matrices
from .network import (
    DiscreteDynamics,
    ParameterVector,
    ThermalNetwork,
    assemble_continuous,
    discretize,
)
from .simulator import OccupancySchedule, WeatherModel
from .solver import ConicProgram, find_strictly_feasible, solve


@dataclass(frozen=True)
class ExcitationCandidate:
    """One uncertain parameter direction mapped back onto physical nodes."""

    eigenvalue: float
    node_weights: np.ndarray
    source: str


@dataclass(frozen=True)
class Experiment:
    """A short-horizon set-point modification.

    ``e`` holds modified per-step lower bounds, one row per step over the
    short horizon, one column per zone; NaN leaves a bound untouched.
    """

    target: tuple[int, ...]
    e: np.ndarray
    start_time: float
    h_s: int

    def active(self, t: float, dt: float) -> bool:
        return self.start_time <= t < self.start_time + self.h_s * dt

    def bounds_row(self, t: float, dt: float) -> Optional[np.ndarray]:
        if not self.active(t, dt):
            return None
        k = int(round((t - self.start_time) / dt))
        return self.e[min(k, self.e.shape[0] - 1)]


@dataclass(frozen=True)
class SelectorState:
    """Trigger threshold with slow decay toward eventual excitation."""

    threshold: float = 1.0
    decay: float = 0.995
    initial: float = 1.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValidationError("threshold must be positive")

    def decayed(self) -> "SelectorState":
        return replace(self, threshold=self.threshold * self.decay)

    def reset(self) -> "SelectorState":
        return replace(self, threshold=self.initial)


def generate_eigen(
    P_RC: np.ndarray,
    params: ParameterVector,
    topology: ThermalNetwork,
) -> list[ExcitationCandidate]:
    """Rank node pairs to excite from the RC-parameter covariance.

    Each covariance eigenvector is written back into the rate-matrix
    pattern (eigenvector entry at the directed-edge slot of its parameter),
    diagonals carry the signed row/column sums, and external columns fold
    into their own diagonal since those nodes have no parameters of their
    own. The diagonal is the per-node uncertainty weight vector.
    """
    P_RC = np.asarray(P_RC, dtype=float)
    n_p = len(params.p)
    if P_RC.shape != (n_p, n_p):
        raise ValidationError("covariance block has wrong dimension")
    if np.max(np.abs(P_RC - P_RC.T)) > 1e-8 * (1.0 + np.max(np.abs(P_RC))):
        raise ValidationError("covariance block is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (P_RC + P_RC.T))
    if np.min(eigvals) < -1e-8 * max(1.0, float(np.max(np.abs(eigvals)))):
        raise ValidationError("covariance block is not positive semidefinite")
    order = sorted(range(n_p), key=lambda m: (-abs(eigvals[m]), m))
    candidates = []
    for m in order:
        # weights carry the direction's standard deviation so that a
        # well-known direction produces no urge to excite anything
        scale = np.sqrt(max(float(eigvals[m]), 0.0))
        weights = _node_weights_for_vector(scale * eigvecs[:, m], params, topology)
        candidates.append(ExcitationCandidate(float(eigvals[m]), weights, "eigen"))
    return candidates


def generate_variational(
    params: ParameterVector,
    topology: ThermalNetwork,
    T_operating: np.ndarray,
) -> np.ndarray:
    """Temperature-rate sensitivity to each RC product at an operating point.

    Entry (i, k) is the derivative of node i's temperature rate with
    respect to parameter k: -(T_j - T_i) / p_k^2 at the parameter's edge,
    zero elsewhere. Vanishes wherever temperatures are uniform.
    """
    T = np.asarray(T_operating, dtype=float)
    idx = {nid: k for k, nid in enumerate(topology.node_ids)}
    S = np.zeros((len(topology.nodes), len(params.p)))
    for k, (i, j) in enumerate(params.edge_map):
        S[idx[i], k] = -(T[idx[j]] - T[idx[i]]) / params.p[k] ** 2
    return S


def variational_candidates(
    params: ParameterVector,
    topology: ThermalNetwork,
    T_operating: np.ndarray,
) -> list[ExcitationCandidate]:
    """Rank parameters by sensitivity column norm, mapped to node weights."""
    S = generate_variational(params, topology, T_operating)
    norms = np.linalg.norm(S, axis=0)
    order = sorted(range(len(params.p)), key=lambda k: (-norms[k], k))
    out = []
    for k in order:
        basis = np.zeros(len(params.p))
        basis[k] = 1.0
        weights = _node_weights_for_vector(basis, params, topology)
        out.append(ExcitationCandidate(float(norms[k]), weights, "variational"))
    return out


def montecarlo_candidates(sensitivity: "EnergySensitivity", params, topology):
    """Rank parameters by the energy-regression t-statistic, as node weights."""
    order = sorted(range(len(params.p)), key=lambda k: (-sensitivity.tstats[k], k))
    out = []
    for k in order:
        basis = np.zeros(len(params.p))
        basis[k] = 1.0
        weights = _node_weights_for_vector(basis, params, topology)
        out.append(ExcitationCandidate(float(sensitivity.tstats[k]), weights, "montecarlo"))
    return out


def _node_weights_for_vector(v, params, topology):
    idx = {nid: k for k, nid in enumerate(topology.node_ids)}
    external = [node.is_external for node in topology.nodes]
    n = len(topology.nodes)
    A = np.zeros((n, n))
    for k, (i, j) in enumerate(params.edge_map):
        A[idx[i], idx[j]] = v[k]
    off = A - np.diag(np.diag(A))
    w = np.empty(n)
    for r in range(n):
        if external[r]:
            w[r] = off[:, r].sum()
        else:
            w[r] = off[r, :].sum() - off[:, r].sum()
    return w


@dataclass
class EnergySensitivity:
    """Per-parameter regression of closed-loop energy on parameter value."""

    slopes: np.ndarray
    stderrs: np.ndarray
    tstats: np.ndarray
    n_samples: int
    n_resampled: int
    zero_information: bool


def generate_montecarlo(
    params: ParameterVector,
    covariance: np.ndarray,
    topology: ThermalNetwork,
    mpc_config: MpcConfig,
    sched: OccupancySchedule,
    weather: WeatherModel,
    T0: np.ndarray,
    duration_steps: int,
    n_samples: int,
    seed: int,
) -> EnergySensitivity:
    """Energy sensitivity to parameters via sampled closed-loop runs.

    Each sample draws a plant parameterization from the estimate
    distribution (resampling any non-positive draw), runs the predictive
    controller built on the mean estimate against that plant, and records
    total control effort. Slopes come from per-parameter least squares.
    """
    if n_samples < 2:
        raise ValidationError("need at least two samples")
    n_p = len(params.p)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (n_p, n_p):
        raise ValidationError("covariance must cover the RC parameters")
    if np.allclose(cov, 0.0):
        return EnergySensitivity(
            np.zeros(n_p), np.full(n_p, np.inf), np.zeros(n_p),
            n_samples, 0, True,
        )
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov + 1e-12 * np.trace(cov) / n_p * np.eye(n_p))
    mean_model = discretize(assemble_continuous(params, topology), mpc_config.dt)
    samples = np.empty((n_samples, n_p))
    energies = np.empty(n_samples)
    resampled = 0
    for s in range(n_samples):
        for _ in range(200):
            draw = params.p + chol @ rng.standard_normal(n_p)
            if np.all(draw > 0):
                break
            resampled += 1
        else:
            raise ValidationError("could not draw positive parameters")
        samples[s] = draw
        plant_pv = params.with_values(draw, params.q)
        energies[s] = _closed_loop_energy(
            plant_pv, topology, mean_model, mpc_config, sched, weather,
            T0, duration_steps,
        )
    slopes = np.empty(n_p)
    stderrs = np.empty(n_p)
    for k in range(n_p):
        x = samples[:, k] - samples[:, k].mean()
        y = energies - energies.mean()
        sxx = float(x @ x)
        if sxx <= 0:
            slopes[k], stderrs[k] = 0.0, np.inf
            continue
        slopes[k] = float(x @ y) / sxx
        resid = y - slopes[k] * x
        dof = max(1, n_samples - 2)
        stderrs[k] = np.sqrt(float(resid @ resid) / dof / sxx)
    tstats = np.abs(slopes) / np.maximum(stderrs, 1e-300)
    return EnergySensitivity(slopes, stderrs, tstats, n_samples, resampled, False)


def _closed_loop_energy(plant_pv, topology, controller_model, cfg, sched,
                        weather, T0, duration_steps):
    from .simulator import PlantModel
    from .mpc import mpc_step

    plant = PlantModel.from_parameters(plant_pv, topology)
    state = plant.initial_state(
        {nid: T0[i] for i, nid in enumerate(topology.internal_ids)}, weather
    )
    energy = 0.0
    int_pos = plant._int_pos
    for k in range(duration_steps):
        t = k * cfg.dt
        u, sol = mpc_step(
            controller_model, state.true_temps[int_pos], t, sched, weather, cfg
        )
        energy += float(np.sum(u))
        state = plant.step(state, u, weather, cfg.dt)
    return energy


def _choose_targets(
    candidate: ExcitationCandidate,
    topology: ThermalNetwork,
    pair_ratio: float = 0.75,
) -> Optional[tuple[str, tuple[int, ...]]]:
    """Case split on the two largest weights.

    Within ``pair_ratio`` of each other they form a pair, otherwise the top
    node is excited against everything else. External nodes cannot be
    excited: a pair against the ambient collapses to the single-node case,
    and an external top node defers to its strongest internal neighbor.
    """
    weights = np.abs(candidate.node_weights)
    node_ids = list(topology.node_ids)
    order = np.argsort(-weights, kind="stable")
    if weights[order[0]] <= 0:
        return None
    i_id = node_ids[order[0]]
    j_id = node_ids[order[1]]
    if topology.node(i_id).is_external:
        neighbors = [nid for nid, _ in topology.neighbors(i_id)
                     if not topology.node(nid).is_external]
        if not neighbors:
            return None
        i_id = max(neighbors, key=lambda nid: weights[topology.index_of(nid)])
        if i_id == j_id and len(order) > 2:
            j_id = node_ids[order[2]]
    if weights[order[1]] >= pair_ratio * weights[order[0]] and i_id != j_id:
        if topology.node(j_id).is_external:
            return ("single", (i_id,))
        return ("pair", (i_id, j_id))
    return ("single", (i_id,))


def _heat_target(case, topology) -> Optional[int]:
    """The zone whose heater runs: the first heated node among the targets."""
    kind, nodes = case
    heated = set(topology.heated_ids)
    for nid in nodes:
        if nid in heated:
            return nid
    return None


def _step_separation(case, T_int, t_ext, zones):
    """Separation value of one temperature snapshot for the chosen case."""
    kind, nodes = case
    if kind == "pair":
        return abs(T_int[zones.index(nodes[0])] - T_int[zones.index(nodes[1])])
    zi = zones.index(nodes[0])
    total = sum(abs(T_int[zi] - T_int[z]) for z in range(len(zones)) if z != zi)
    total += sum(abs(T_int[zi] - te) for te in np.atleast_1d(t_ext))
    return float(total)


def select_heuristic(
    candidate: ExcitationCandidate,
    temps: np.ndarray,
    model: DiscreteDynamics,
    forecast: np.ndarray,
    r_min_now: np.ndarray,
    r_max_now: np.ndarray,
    topology: ThermalNetwork,
    t: float,
    dt: float = 15.0,
    h_s: int = 4,
    min_gain: float = 0.5,
    bound_margin: float = 2.0,
) -> Optional[Experiment]:
    """Thermostat-era selection: heat one zone toward its upper bound briefly.

    Predicts (through the current model estimate) the mean extra separation
    from running the target heater flat out over the short horizon; below
    ``min_gain`` degrees of predicted gain, or without headroom under the
    upper bound, nothing is emitted.
    """
    case = _choose_targets(candidate, topology)
    if case is None:
        return None
    target = _heat_target(case, topology)
    if target is None:
        return None
    zones = list(model.internal_ids)
    z_idx = zones.index(target)
    if temps[topology.index_of(target)] >= r_max_now[z_idx] - bound_margin:
        return None

    forecast = np.atleast_2d(np.asarray(forecast, float).reshape(len(forecast), -1))
    T0 = np.array([temps[topology.index_of(z)] for z in zones])
    m = model.Gamma_ctrl.shape[1]
    u_on = np.zeros(m)
    u_on[list(model.heated_ids).index(target)] = 1.0

    def mean_separation(u):
        T = T0.copy()
        total = 0.0
        for k in range(h_s):
            T = model.Phi @ T + model.Gamma_ext @ forecast[k] + model.Gamma_ctrl @ u
            total += _step_separation(case, T, forecast[k], zones)
        return total / h_s

    gain = mean_separation(u_on) - mean_separation(np.zeros(m))
    if gain < min_gain:
        return None
    e = np.full((h_s, len(zones)), np.nan)
    e[:, z_idx] = r_max_now[z_idx] - bound_margin
    return Experiment(tuple(case[1]), e, t, h_s)


def select_optimal(
    candidates: Sequence[ExcitationCandidate],
    baseline: MpcSolution,
    model: DiscreteDynamics,
    T0: np.ndarray,
    forecast: np.ndarray,
    r_min: np.ndarray,
    r_max: np.ndarray,
    selector: SelectorState,
    topology: ThermalNetwork,
    t: float,
    h_s: int = 8,
    budget_mult: float = 1.1,
    bound_margin: float = 2.0,
) -> tuple[Optional[Experiment], SelectorState, dict]:
    """Predictive-era selection: budgeted separation maximization.

    For each candidate in order, maximizes the horizon-summed separation of
    the target nodes over the hard-bounded dynamics with a control budget
    tied to the unexcited baseline. The absolute-value objective splits
    into two sign-fixed linear programs, one per direction, and the better
    one counts. The first candidate whose mean separation gain beats the
    threshold becomes an experiment and resets the threshold; if none
    does, the threshold decays.
    """
    h = baseline.u.shape[0]
    n = model.n_internal
    if h < 4 * h_s:
        raise ValidationError("short horizon must be well inside the control horizon")
    diagnostics: dict = {"evaluated": 0, "gains": [], "infeasible": 0}
    zones = list(model.internal_ids)
    u_budget = budget_mult * float(np.sum(baseline.u))
    forecast = np.atleast_2d(np.asarray(forecast, float).reshape(h, -1))
    for candidate in candidates:
        case = _choose_targets(candidate, topology)
        if case is None or _heat_target(case, topology) is None:
            continue
        diagnostics["evaluated"] += 1
        best = None
        for direction in (1.0, -1.0):
            res = _separation_lp(
                case, direction, model, T0, forecast, r_min, r_max,
                u_budget, h, h_s, bound_margin, zones,
            )
            if res is not None and (best is None or res[0] > best[0]):
                best = res
        if best is None:
            diagnostics["infeasible"] += 1
            continue
        J_exc, e_opt, u_opt = best
        J_base = _trajectory_separation(case, baseline.T_pred, forecast, zones)
        gain = (J_exc - J_base) / h
        diagnostics["gains"].append(gain)
        if gain > selector.threshold:
            return Experiment(tuple(case[1]), e_opt, t, h_s), selector.reset(), diagnostics
    return None, selector.decayed(), diagnostics


def _trajectory_separation(case, T_traj, forecast, zones):
    """Horizon-summed separation of a temperature trajectory, scaled by 1/n."""
    total = 0.0
    for k, T in enumerate(T_traj):
        total += _step_separation(case, T, forecast[k], zones)
    return total / len(zones)


def _separation_lp(case, direction, model, T0, forecast, r_min, r_max,
                   u_budget, h, h_s, bound_margin, zones):
    """One sign-fixed linear program over (controls, modified bounds)."""
    n = model.n_internal
    m = model.Gamma_ctrl.shape[1]
    G, d = prediction_matrices(model, T0, forecast, h)
    nu = h * m
    ne = h_s * n
    nvar = nu + ne

    n_rows = 2 * nu + 2 * h * n + 1 + 2 * ne + ne
    A = np.zeros((n_rows, nvar))
    b = np.empty(n_rows)
    r = 0
    A[r:r + nu, :nu] = -np.eye(nu)
    b[r:r + nu] = 0.0
    r += nu
    A[r:r + nu, :nu] = np.eye(nu)
    b[r:r + nu] = 1.0
    r += nu
    A[r:r + h * n, :nu] = -G
    b[r:r + h * n] = d - r_min.reshape(-1)
    r += h * n
    A[r:r + h * n, :nu] = G
    b[r:r + h * n] = r_max.reshape(-1) - d
    r += h * n
    A[r, :nu] = 1.0
    b[r] = u_budget
    r += 1
    A[r:r + ne, nu:] = -np.eye(ne)
    b[r:r + ne] = -r_min[:h_s].reshape(-1)
    r += ne
    A[r:r + ne, nu:] = np.eye(ne)
    b[r:r + ne] = r_max[:h_s].reshape(-1) - bound_margin
    r += ne
    A[r:r + ne, :nu] = -G[:ne, :]
    A[r:r + ne, nu:] = np.eye(ne)
    b[r:r + ne] = d[:ne]

    kind, nodes = case
    n_ext = len(model.external_ids)
    c = np.zeros(nvar)
    if kind == "pair":
        zi, zj = zones.index(nodes[0]), zones.index(nodes[1])
        for k in range(h):
            c[:nu] -= direction * (G[k * n + zi] - G[k * n + zj])
    else:
        # the ambient terms |T_i - T_ext| contribute their T_i gradient with
        # one count per external node; the ambient itself is not a decision
        zi = zones.index(nodes[0])
        for k in range(h):
            c[:nu] -= direction * (n - 1 + n_ext) * G[k * n + zi]
            for z in range(n):
                if z != zi:
                    c[:nu] += direction * G[k * n + z]

    x0 = find_strictly_feasible(A, b)
    if x0 is None:
        return None
    sol = solve(ConicProgram(c=c, A=A, b=b), x0)
    if not sol.optimal:
        return None
    u_opt = np.clip(sol.x[:nu], 0.0, 1.0)
    T = (G @ u_opt + d).reshape(h, n)
    J = sum(
        _step_separation(case, T[k], forecast[k], zones) for k in range(h)
    ) / n
    e_opt = np.clip(
        sol.x[nu:].reshape(h_s, n), r_min[:h_s], r_max[:h_s] - bound_margin
    )
    return J, e_opt, u_opt.reshape(h, m)
