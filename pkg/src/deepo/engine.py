"""Online adaptive LQR engine.

Wires the pieces together into the per-sample loop: control with probing
noise, fold the new sample into the data covariances, re-parameterize the
current gain under the updated data, take projected gradient steps with
feasibility backtracking, and read off the next gain.  The engine sees the
plant only through ``step(u) -> y``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientHistory, NonFinite, Unstable
from .lqr_core import (
    FEASIBILITY_MARGIN,
    DataCovariances,
    LqrWeights,
    adaptive_stepsize,
    cov_init,
    cov_update,
    data_cost,
    gradient,
    identity_weights,
    initial_policy,
    nullspace_projection,
    parameterize,
    rank_one_reparameterize,
    recover_gain,
)
from .realization import (
    IoHistory,
    ReductionMap,
    build_xi_matrix,
    reduce_state,
    reduce_svd,
    stack_window,
)
from .numerics import spectral_radius

_BACKTRACK_LIMIT = 10

# Re-solve the parameterization outright when the constraint residual of the
# rank-one recursion drifts past this.
_CONSTRAINT_REFRESH = 1e-7


@dataclass
class DeepoConfig:
    """Tuning knobs for the online engine.

    Attributes:
        lag: window length (past samples per channel).
        eta0: base stepsize before excitation scaling.
        probe_std: std of the Gaussian probing noise added to the control.
        excitation_amp: amplitude of the uniform pre-activation excitation.
        r_override: fix the reduced dimension instead of the gap rule.
        gap_ratio: singular-value ratio that counts as a clear gap.
        q_scale / r_scale: scalar multipliers on the penalty matrices.
        q_mode: "identity" penalizes the normalized reduced state; "window"
            penalizes the raw window energy instead (Q = diag of the kept
            squared singular values), which keeps strongly excited signal
            directions from being down-weighted by the normalization.
        weights: explicit penalty pair; overrides scales and mode when given.
        gradient_steps_per_sample: projected gradient steps per new sample.
    """

    lag: int
    eta0: float = 1e-4
    probe_std: float = 0.01
    excitation_amp: float = 0.05
    r_override: int | None = None
    gap_ratio: float = 1.8
    q_scale: float = 1.0
    r_scale: float = 1.0
    q_mode: str = "identity"
    weights: LqrWeights | None = None
    gradient_steps_per_sample: int = 1

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("lag must be at least 1")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.probe_std < 0 or self.excitation_amp <= 0:
            raise ValueError("noise amplitudes must be nonnegative")
        if self.gap_ratio <= 1.0:
            raise ValueError("gap_ratio must exceed 1")
        if self.q_mode not in ("identity", "window"):
            raise ValueError("q_mode must be 'identity' or 'window'")
        if self.gradient_steps_per_sample < 1:
            raise ValueError("gradient_steps_per_sample must be at least 1")


@dataclass
class StepRecord:
    """Everything logged about one sample period."""

    t: int
    mode: str  # idle | excite | deepo
    u: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    cost: float | None = None
    eta: float | None = None
    grad_norm: float | None = None
    elapsed_us: float = 0.0


@dataclass
class DeepoState:
    """Mutable engine state: data covariances, reduction map, current policy.

    Created pending via :meth:`fresh` (before any data) or ready via
    :func:`offline_init`.  ``t`` is the global sample index and always equals
    ``len(history)``.
    """

    config: DeepoConfig
    m: int
    history: IoHistory = field(default_factory=IoHistory)
    map: ReductionMap | None = None
    cov: DataCovariances | None = None
    weights: LqrWeights | None = None
    gain: np.ndarray | None = None
    initial_gain: np.ndarray | None = None
    v_prime: np.ndarray | None = None
    t: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    warnings: list[str] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    # Sample count the parameterization was last synced against; the rank-one
    # recursion is only valid when this matches the pre-update covariances.
    v_synced_count: int = -1

    @classmethod
    def fresh(cls, config: DeepoConfig, m: int, rng_seed=0) -> "DeepoState":
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        return cls(config=config, m=m, rng=rng)

    @property
    def initialized(self) -> bool:
        return self.cov is not None

    def warn(self, message: str):
        self.warnings.append(message)

    def to_json(self) -> str:
        """Snapshot of the persistent fields (records excluded)."""
        if not self.initialized:
            raise ValueError("cannot serialize an uninitialized state")
        payload = {
            "config": {
                "lag": self.config.lag,
                "eta0": self.config.eta0,
                "probe_std": self.config.probe_std,
                "excitation_amp": self.config.excitation_amp,
                "r_override": self.config.r_override,
                "gap_ratio": self.config.gap_ratio,
                "q_scale": self.config.q_scale,
                "r_scale": self.config.r_scale,
                "q_mode": self.config.q_mode,
                "gradient_steps_per_sample": self.config.gradient_steps_per_sample,
            },
            "m": self.m,
            "t": self.t,
            "map": None if self.map is None else json.loads(self.map.to_json()),
            "cov": {
                "phi": self.cov.phi.tolist(),
                "phi_inv": self.cov.phi_inv.tolist(),
                "z1_bar": self.cov.z1_bar.tolist(),
                "count": self.cov.count,
                "ill_conditioned": self.cov.ill_conditioned,
            },
            "weights": {"q": self.weights.q.tolist(), "r": self.weights.r.tolist()},
            "gain": self.gain.tolist(),
            "initial_gain": None if self.initial_gain is None else self.initial_gain.tolist(),
            "v_prime": self.v_prime.tolist(),
            "v_synced_count": self.v_synced_count,
            "inputs": [u.tolist() for u in self.history.inputs],
            "outputs": [y.tolist() for y in self.history.outputs],
            "warnings": list(self.warnings),
            "rng_state": self.rng.bit_generator.state,
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "DeepoState":
        payload = json.loads(text)
        config = DeepoConfig(**payload["config"])
        phi = np.array(payload["cov"]["phi"], dtype=float)
        m = int(payload["m"])
        cov = DataCovariances(
            phi=phi,
            phi_inv=np.array(payload["cov"]["phi_inv"], dtype=float),
            u_bar=phi[:m, :],
            z0_bar=phi[m:, :],
            z1_bar=np.array(payload["cov"]["z1_bar"], dtype=float),
            count=int(payload["cov"]["count"]),
            ill_conditioned=bool(payload["cov"]["ill_conditioned"]),
        )
        state = cls(
            config=config,
            m=m,
            history=IoHistory(payload["inputs"], payload["outputs"]),
            map=None if payload["map"] is None else ReductionMap.from_json(json.dumps(payload["map"])),
            cov=cov,
            weights=LqrWeights(
                q=np.array(payload["weights"]["q"], dtype=float),
                r=np.array(payload["weights"]["r"], dtype=float),
            ),
            gain=np.array(payload["gain"], dtype=float),
            initial_gain=(
                None
                if payload.get("initial_gain") is None
                else np.array(payload["initial_gain"], dtype=float)
            ),
            v_prime=np.array(payload["v_prime"], dtype=float),
            t=int(payload["t"]),
            warnings=list(payload["warnings"]),
            v_synced_count=int(payload["v_synced_count"]),
        )
        state.rng = np.random.default_rng()
        state.rng.bit_generator.state = payload["rng_state"]
        return state


def offline_init(history: IoHistory, config: DeepoConfig, rng_seed=0) -> DeepoState:
    """Initialize the engine from a batch of excitation data.

    Builds the window matrix, fits the reduction map, forms the data
    covariances, and sets the certainty-equivalence initial gain with its
    parameterization.  The history must provide at least
    ``2 (m + p) lag`` windows.
    """
    lag = config.lag
    m, p = history.m, history.p
    t0 = len(history) - lag
    min_windows = 2 * (m + p) * lag
    if t0 < min_windows:
        raise InsufficientHistory(
            f"need at least {min_windows + lag} samples to initialize, "
            f"got {len(history)}"
        )
    xi = build_xi_matrix(history, t0, lag)
    rmap = reduce_svd(
        xi,
        input_rows=m * lag,
        r_override=config.r_override,
        gap_ratio=config.gap_ratio,
    )
    z = rmap.t_matrix @ xi
    u_cols = history.input_array()[lag : lag + t0].T
    cov = cov_init(u_cols[:, :-1], z[:, :-1], z[:, 1:])
    if config.weights is not None:
        weights = config.weights
    elif config.q_mode == "window":
        # Window-energy penalty: z = diag(s)^-1 U' xi, so Q = diag(s)^2 prices
        # the raw window norm.  Both penalties are normalized by s_1^2, which
        # leaves the optimal gain unchanged but keeps gradients O(1).
        lam = rmap.singular_values[: rmap.reduced_dim]
        weights = LqrWeights(
            config.q_scale * np.diag((lam / lam[0]) ** 2),
            config.r_scale * np.eye(m) / lam[0] ** 2,
        )
    else:
        weights = identity_weights(rmap.reduced_dim, m, config.q_scale, config.r_scale)
    gain = initial_policy(cov, weights)
    v0 = parameterize(cov, gain).v
    state = DeepoState.fresh(config, m, rng_seed)
    state.history = history.slice(0, len(history))
    state.map = rmap
    state.cov = cov
    state.weights = weights
    state.gain = gain
    state.initial_gain = gain.copy()
    state.v_prime = v0
    state.v_synced_count = cov.count
    state.t = len(history)
    if rmap.gap_warning:
        state.warn("no clear singular-value gap; reduced dimension from largest ratio")
    return state


def offline_init_direct(u_data, z_data, z_next, config: DeepoConfig, rng_seed=0) -> DeepoState:
    """Initialize from directly measured reduced-state data (no windowing).

    Convenience for plants whose state is available as-is; the reduction map
    is skipped and ``ingest_and_update`` is driven by the caller.
    """
    if config.q_mode == "window" and config.weights is None:
        raise ValueError("q_mode='window' needs the windowed pipeline (no singular values here)")
    cov = cov_init(u_data, z_data, z_next)
    weights = config.weights or identity_weights(
        cov.r, cov.m, config.q_scale, config.r_scale
    )
    gain = initial_policy(cov, weights)
    state = DeepoState.fresh(config, cov.m, rng_seed)
    state.cov = cov
    state.weights = weights
    state.gain = gain
    state.initial_gain = gain.copy()
    state.v_prime = parameterize(cov, gain).v
    state.v_synced_count = cov.count
    state.t = cov.count
    return state


def control_step(state: DeepoState, xi) -> np.ndarray:
    """Control for the current window: u = K z + probing noise."""
    if not state.initialized:
        raise ValueError("engine is not initialized")
    z = reduce_state(state.map, xi) if state.map is not None else np.asarray(xi, dtype=float)
    e = state.rng.standard_normal(state.m) * state.config.probe_std
    u = state.gain @ z + e
    if not np.all(np.isfinite(u)):
        raise NonFinite("control input diverged", records=state.records)
    return u


def _reparameterize(state: DeepoState, prev_cov: DataCovariances, u_t, z_t) -> np.ndarray:
    """Decision matrix reproducing the held gain under the updated data.

    Uses the rank-one recursion from the previous projected decision matrix
    when it is in sync; falls back to a full solve otherwise or when the
    constraint residual has drifted.
    """
    cov = state.cov
    if state.v_prime is not None and state.v_synced_count == prev_cov.count:
        v = rank_one_reparameterize(prev_cov, state.v_prime, u_t, z_t)
        drift = np.linalg.norm(cov.z0_bar @ v - np.eye(cov.r))
        if drift <= _CONSTRAINT_REFRESH * np.sqrt(cov.r):
            return v
        state.warn(f"constraint drift {drift:.3g} at t={state.t}; re-solving")
    return parameterize(cov, state.gain).v


def ingest_and_update(state: DeepoState, u_t, z_t, z_next) -> StepRecord:
    """Fold one sample into the engine and advance the policy.

    Updates the covariances, re-parameterizes the current gain under the new
    data, takes the configured number of projected gradient steps (halving
    the stepsize up to ten times if a step leaves the feasible set; the gain
    is held with a warning when even that fails), and reads off the next
    gain.  Appends and returns the step record.
    """
    if not state.initialized:
        raise ValueError("engine is not initialized")
    cfg = state.config
    prev_cov = state.cov
    state.cov = cov_update(state.cov, u_t, z_t, z_next)
    if state.cov.ill_conditioned:
        state.warn(f"data covariance poorly conditioned at t={state.t}")
    v = _reparameterize(state, prev_cov, u_t, z_t)
    cov = state.cov
    eta_base, capped = adaptive_stepsize(cov, cfg.eta0)
    if capped:
        state.warn(f"excitation level vanished at t={state.t}; stepsize capped")
    pi = nullspace_projection(cov)
    eta_used = None
    grad_norm = None
    for _ in range(cfg.gradient_steps_per_sample):
        try:
            g = gradient(cov, v, state.weights)
        except Unstable:
            state.warn(f"infeasible parameterization at t={state.t}; gain held")
            break
        pg = pi @ g
        if grad_norm is None:
            grad_norm = float(np.linalg.norm(pg))
        eta = eta_base
        for _ in range(_BACKTRACK_LIMIT + 1):
            v_try = v - eta * pg
            if spectral_radius(cov.z1_bar @ v_try) < 1.0 - FEASIBILITY_MARGIN:
                v = v_try
                if eta_used is None:
                    eta_used = eta
                break
            eta *= 0.5
        else:
            state.warn(f"gradient step infeasible after backtracking at t={state.t}")
            break
    state.v_prime = v
    state.v_synced_count = cov.count
    state.gain = recover_gain(cov, v)
    record = StepRecord(
        t=state.t,
        mode="deepo",
        u=np.asarray(u_t, dtype=float).reshape(-1),
        z=np.asarray(z_t, dtype=float).reshape(-1),
        cost=data_cost(cov, v, state.weights),
        eta=eta_used,
        grad_norm=grad_norm,
    )
    state.records.append(record)
    state.t += 1
    return record


def _resolve_step(plant):
    if hasattr(plant, "step"):
        return plant.step
    if callable(plant):
        return plant
    raise TypeError("plant must expose step(u) or be callable")


def _activate(state: DeepoState, excitation_start: int, activation_step: int):
    window = state.history.slice(excitation_start, activation_step)
    init = offline_init(window, state.config, rng_seed=state.rng)
    state.map = init.map
    state.cov = init.cov
    state.weights = init.weights
    state.gain = init.gain
    state.initial_gain = init.initial_gain
    state.v_prime = init.v_prime
    state.v_synced_count = init.v_synced_count
    state.warnings.extend(init.warnings)


def run_online(
    state: DeepoState,
    plant,
    steps: int,
    activation_step: int,
    *,
    excitation_start: int = 0,
    policy_updates: bool = True,
    update_start: int | None = None,
) -> list[StepRecord]:
    """Drive the plant for ``steps`` samples and return their records.

    Before ``excitation_start`` the input is zero; from there to
    ``activation_step`` it is uniform white-noise excitation.  At the
    activation step the engine initializes itself from the excitation
    window, then runs closed loop.  ``policy_updates=False`` freezes the
    gain at its initial value (data is still ingested); ``update_start``
    delays gain updates to that step.  The plant is anything exposing
    ``step(u) -> y``.  A non-finite signal aborts with the records so far
    attached to the exception.
    """
    step_fn = _resolve_step(plant)
    cfg = state.config
    first = len(state.records)
    for _ in range(steps):
        t = state.t
        tic = time.perf_counter()
        if not state.initialized and t == activation_step:
            _activate(state, excitation_start, activation_step)
        if state.initialized:
            xi = stack_window(state.history, t, cfg.lag)
            z_t = reduce_state(state.map, xi)
            u = control_step(state, xi)
            try:
                y = step_fn(u)
                state.history.append(u, y)
            except NonFinite as exc:
                raise NonFinite(f"step {t}: {exc}", records=state.records) from exc
            z_next = reduce_state(state.map, stack_window(state.history, t + 1, cfg.lag))
            if policy_updates and (update_start is None or t >= update_start):
                record = ingest_and_update(state, u, z_t, z_next)
            else:
                state.cov = cov_update(state.cov, u, z_t, z_next)
                held_v = parameterize(state.cov, state.gain).v
                record = StepRecord(
                    t=t,
                    mode="deepo",
                    u=u,
                    z=z_t,
                    cost=data_cost(state.cov, held_v, state.weights),
                )
                state.records.append(record)
                state.t += 1
            record.y = y
        else:
            if t < excitation_start:
                u = np.zeros(state.m)
                mode = "idle"
            else:
                u = state.rng.uniform(-cfg.excitation_amp, cfg.excitation_amp, state.m)
                mode = "excite"
            try:
                y = step_fn(u)
                state.history.append(u, y)
            except NonFinite as exc:
                raise NonFinite(f"step {t}: {exc}", records=state.records) from exc
            record = StepRecord(t=t, mode=mode, u=u, y=y)
            state.records.append(record)
            state.t += 1
        record.elapsed_us = (time.perf_counter() - tic) * 1e6
    return state.records[first:]


def reinitialize(state: DeepoState, start: int, stop: int) -> DeepoState:
    """Re-run the offline initialization on a window of the state's history.

    Explicit recovery hook after a known plant change: returns a new state
    whose reduction map and covariances come from ``history[start:stop]``.
    The original state is untouched.
    """
    window = state.history.slice(start, stop)
    fresh = offline_init(window, state.config, rng_seed=state.rng)
    fresh.history = state.history.slice(0, len(state.history))
    fresh.t = state.t
    fresh.records = state.records
    return fresh
