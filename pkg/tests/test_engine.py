"""Online engine: initialization, the per-sample loop, and persistence."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import direct_data, random_minimal, random_pair
from deepo.engine import (
    DeepoConfig,
    DeepoState,
    control_step,
    ingest_and_update,
    offline_init,
    offline_init_direct,
    reinitialize,
    run_online,
)
from deepo.errors import InsufficientHistory, NonFinite
from deepo.lqr_core import parameterize
from deepo.plant import (
    PlantModel,
    fit_linear_dynamics,
    lqr_cost,
    model_lqr_gain,
    make_surrogate_converter,
    SwitchingPlant,
)
from deepo.realization import IoHistory


def test_config_validation():
    with pytest.raises(ValueError):
        DeepoConfig(lag=0)
    with pytest.raises(ValueError):
        DeepoConfig(lag=1, eta0=0.0)
    with pytest.raises(ValueError):
        DeepoConfig(lag=1, gap_ratio=1.0)
    with pytest.raises(ValueError):
        DeepoConfig(lag=1, q_mode="other")
    with pytest.raises(ValueError):
        DeepoConfig(lag=1, gradient_steps_per_sample=0)
    with pytest.raises(ValueError):
        DeepoConfig(lag=1, excitation_amp=0.0)


def test_offline_init_requires_enough_history(rng):
    model = random_minimal(rng, 2, 1, 1)
    cfg = DeepoConfig(lag=2)
    h = IoHistory()
    for _ in range(5):
        u = rng.uniform(-1, 1, 1)
        h.append(u, model.step(u))
    with pytest.raises(InsufficientHistory):
        offline_init(h, cfg)


def test_offline_init_direct_rejects_window_weighting(rng):
    a, b = random_pair(rng, 2, 1)
    u, z, z_next = direct_data(rng, a, b, steps=40)
    with pytest.raises(ValueError):
        offline_init_direct(u, z, z_next, DeepoConfig(lag=1, q_mode="window"))


def test_initial_gain_is_certainty_equivalent(rng):
    # Noise-free init: the starting gain equals the model LQR gain computed
    # through an independent fit of the same data.
    a, b = random_pair(rng, 3, 2)
    u, z, z_next = direct_data(rng, a, b, steps=100)
    state = offline_init_direct(u, z, z_next, DeepoConfig(lag=1))
    a_fit, b_fit = fit_linear_dynamics(u, z, z_next)
    expected = model_lqr_gain(a_fit, b_fit, state.weights.q, state.weights.r)
    npt.assert_allclose(state.gain, expected, atol=1e-8)
    npt.assert_allclose(state.initial_gain, state.gain)


def test_already_optimal_gain_is_a_fixed_point(rng):
    # Zero probing, frozen noiseless plant, optimal gain: updates are no-ops.
    a, b = random_pair(rng, 3, 1)
    u, z, z_next = direct_data(rng, a, b, steps=40)
    state = offline_init_direct(u, z, z_next, DeepoConfig(lag=1, probe_std=0.0))
    k_star = model_lqr_gain(a, b, state.weights.q, state.weights.r)
    state.gain = k_star.copy()
    state.v_prime = parameterize(state.cov, k_star).v
    state.v_synced_count = state.cov.count
    zc = z_next[:, -1].copy()
    for _ in range(100):
        uc = state.gain @ zc
        zn = a @ zc + b @ uc
        ingest_and_update(state, uc, zc, zn)
        zc = zn
    assert np.linalg.norm(state.gain - k_star) <= 1e-6


def test_online_cost_approaches_model_optimum(rng):
    # Full closed loop on a hidden plant: after enough adaptation the data
    # cost sits within a few percent of the model-based optimum.
    a, b = random_pair(rng, 3, 2)
    u0, z0, z0_next = direct_data(rng, a, b, steps=80, noise_std=1e-3)
    cfg = DeepoConfig(lag=1, eta0=1e-4, probe_std=1e-2)
    state = offline_init_direct(u0, z0, z0_next, cfg, rng_seed=4)
    zc = z0_next[:, -1].copy()
    plant_rng = np.random.default_rng(40)
    for _ in range(1500):
        uc = state.gain @ zc + state.rng.standard_normal(2) * cfg.probe_std
        zn = a @ zc + b @ uc + plant_rng.standard_normal(3) * 1e-3
        ingest_and_update(state, uc, zc, zn)
        zc = zn
    k_star = model_lqr_gain(a, b, state.weights.q, state.weights.r)
    j_star = lqr_cost(a, b, k_star, state.weights.q, state.weights.r)
    j_final = lqr_cost(a, b, state.gain, state.weights.q, state.weights.r)
    assert j_final <= 1.05 * j_star
    assert not state.warnings


def test_constraint_holds_every_step(rng):
    a, b = random_pair(rng, 2, 1)
    u0, z0, z0_next = direct_data(rng, a, b, steps=50, noise_std=1e-3)
    state = offline_init_direct(u0, z0, z0_next, DeepoConfig(lag=1), rng_seed=1)
    zc = z0_next[:, -1].copy()
    for _ in range(200):
        uc = state.gain @ zc + state.rng.standard_normal(1) * 0.01
        zn = a @ zc + b @ uc
        ingest_and_update(state, uc, zc, zn)
        residual = np.linalg.norm(state.cov.z0_bar @ state.v_prime - np.eye(state.cov.r))
        assert residual <= 1e-6
        zc = zn


def surrogate_run(seed, steps=700, policy_updates=True, update_start=None):
    plant, schedule = make_surrogate_converter(rng_seed=seed, switch_step=100)
    splant = SwitchingPlant(plant, schedule, kicks=[(100, [1.0, 0.0, 0.0, 0.0])])
    cfg = DeepoConfig(lag=2, eta0=1e-4, probe_std=0.01, r_override=8)
    state = DeepoState.fresh(cfg, splant.plant.m, rng_seed=seed + 1)
    records = run_online(
        state,
        splant,
        steps=steps,
        activation_step=500,
        excitation_start=200,
        policy_updates=policy_updates,
        update_start=update_start,
    )
    return state, records


def test_run_online_timeline_and_determinism():
    state1, records1 = surrogate_run(seed=5)
    state2, records2 = surrogate_run(seed=5)
    assert [r.mode for r in records1[:200]] == ["idle"] * 200
    assert all(r.mode == "excite" for r in records1[200:500])
    assert all(r.mode == "deepo" for r in records1[500:])
    assert len(records1) == len(records2)
    for r1, r2 in zip(records1, records2):
        npt.assert_array_equal(r1.u, r2.u)
        npt.assert_array_equal(r1.y, r2.y)
    npt.assert_array_equal(state1.gain, state2.gain)


def test_run_online_accepts_plain_callable(rng):
    # The engine sees only u -> y; the model stays on the caller's side.
    model = random_minimal(rng, 2, 1, 1)
    cfg = DeepoConfig(lag=2, r_override=4)
    state = DeepoState.fresh(cfg, 1, rng_seed=2)
    records = run_online(
        state, lambda u: model.step(u), steps=120, activation_step=60,
        excitation_start=0,
    )
    assert state.initialized
    assert len(records) == 120
    assert records[-1].mode == "deepo"


def test_frozen_gain_never_moves():
    state, _ = surrogate_run(seed=6, policy_updates=False)
    npt.assert_array_equal(state.gain, state.initial_gain)


def test_update_start_delays_adaptation():
    state, _ = surrogate_run(seed=6, update_start=600)
    frozen_part, _ = surrogate_run(seed=6, policy_updates=False, steps=600)
    # Identical to the frozen run up to the update start, then it moves.
    npt.assert_allclose(state.records[599].u, frozen_part.records[599].u)
    assert np.linalg.norm(state.gain - state.initial_gain) > 0


def test_frozen_then_resume_rebuilds_parameterization():
    # After a frozen stretch the stored decision matrix is stale; resuming
    # must fall back to a full solve without constraint-drift warnings.
    state, _ = surrogate_run(seed=7, update_start=620, steps=700)
    assert not [w for w in state.warnings if "constraint drift" in w]
    assert np.linalg.norm(state.gain - state.initial_gain) > 0


def test_nonfinite_output_aborts_with_records(rng):
    model = random_minimal(rng, 2, 1, 1)
    calls = {"n": 0}

    def flaky(u):
        calls["n"] += 1
        y = model.step(u)
        return y if calls["n"] < 30 else y * np.nan

    state = DeepoState.fresh(DeepoConfig(lag=2, r_override=4), 1, rng_seed=3)
    with pytest.raises(NonFinite) as excinfo:
        run_online(state, flaky, steps=120, activation_step=60, excitation_start=0)
    assert len(excinfo.value.records) >= 29


def test_state_json_roundtrip():
    state, _ = surrogate_run(seed=8, steps=620)
    clone = DeepoState.from_json(state.to_json())
    npt.assert_allclose(clone.gain, state.gain)
    npt.assert_allclose(clone.cov.phi, state.cov.phi)
    npt.assert_allclose(clone.v_prime, state.v_prime)
    npt.assert_allclose(clone.map.t_matrix, state.map.t_matrix)
    assert clone.t == state.t
    assert clone.v_synced_count == state.v_synced_count
    # The restored rng continues the same stream.
    npt.assert_array_equal(clone.rng.standard_normal(4), state.rng.standard_normal(4))


def test_control_step_uses_gain_and_probe():
    state, _ = surrogate_run(seed=9, steps=620)
    xi = np.zeros(state.map.t_matrix.shape[1])
    state.config.probe_std = 0.0
    u = control_step(state, xi)
    npt.assert_allclose(u, np.zeros(state.m), atol=1e-12)


def test_reinitialize_rebuilds_from_window():
    state, _ = surrogate_run(seed=10, steps=700)
    fresh = reinitialize(state, 400, 700)
    assert fresh.t == state.t
    assert len(fresh.history) == len(state.history)
    assert fresh.map is not state.map
    assert fresh.cov.count < state.cov.count
    # Original untouched.
    assert state.initialized and fresh.initialized
