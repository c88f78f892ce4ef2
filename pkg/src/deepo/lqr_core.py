"""Covariance-parameterized data-driven LQR.

Sample covariances of (input, reduced state, shifted reduced state) data
parameterize the set of feedback gains directly: any decision matrix V with
Zbar0 V = I yields the gain K = Ubar V and closed-loop matrix Zbar1 V.  The
routines here maintain those covariances recursively, evaluate the LQR cost
and its exact gradient in V, and take projected gradient steps that stay on
the constraint set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, RankDeficient, Unstable
from .numerics import riccati_gain, solve_dlyap, spectral_radius
from .errors import Unstabilizable, NoConvergence

# Closed-loop spectral radii at or above this are treated as infeasible.
FEASIBILITY_MARGIN = 1e-9

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class LqrWeights:
    """Positive-definite penalty pair (Q on the reduced state, R on inputs)."""

    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name, mat in (("q", self.q), ("r", self.r)):
            mat = np.asarray(mat, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.linalg.norm(mat - mat.T) > 1e-10 * max(np.linalg.norm(mat), 1e-300):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
            object.__setattr__(self, name, 0.5 * (mat + mat.T))


def identity_weights(r_dim: int, m: int, q_scale: float = 1.0, r_scale: float = 1.0) -> LqrWeights:
    """Scaled identity penalties, the default weighting."""
    return LqrWeights(q=q_scale * np.eye(r_dim), r=r_scale * np.eye(m))


@dataclass(frozen=True)
class DataCovariances:
    """Sample covariances of the data seen so far.

    ``phi`` is the covariance of the stacked sample (u; z); ``u_bar``,
    ``z0_bar`` are its top and bottom block rows, and ``z1_bar`` is the
    cross-covariance of the shifted state z+ with (u; z).  ``count`` is the
    number of samples averaged.  Values are immutable; updates return a new
    instance.
    """

    phi: np.ndarray
    phi_inv: np.ndarray
    u_bar: np.ndarray
    z0_bar: np.ndarray
    z1_bar: np.ndarray
    count: int
    ill_conditioned: bool = False

    @property
    def m(self) -> int:
        return self.u_bar.shape[0]

    @property
    def r(self) -> int:
        return self.z0_bar.shape[0]


def cov_init(u_data, z_data, z_next) -> DataCovariances:
    """Build covariances from batch data (columns are samples).

    Requires at least m + r samples; raises RankDeficient when the sample
    covariance of (u; z) is singular or has condition number above 1e12.
    """
    u_data = np.atleast_2d(np.asarray(u_data, dtype=float))
    z_data = np.atleast_2d(np.asarray(z_data, dtype=float))
    z_next = np.atleast_2d(np.asarray(z_next, dtype=float))
    if not u_data.shape[1] == z_data.shape[1] == z_next.shape[1]:
        raise DimensionMismatch("u, z, and z+ must have the same sample count")
    if z_next.shape[0] != z_data.shape[0]:
        raise DimensionMismatch("z and z+ must have the same dimension")
    m, r = u_data.shape[0], z_data.shape[0]
    t = u_data.shape[1]
    if t < m + r:
        raise RankDeficient(f"need at least {m + r} samples, got {t}")
    d0 = np.vstack([u_data, z_data])
    phi = (d0 @ d0.T) / t
    phi = 0.5 * (phi + phi.T)
    cond = np.linalg.cond(phi)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise RankDeficient(
            f"sample covariance condition number {cond:.3g} exceeds {_COND_LIMIT:.0e}"
        )
    phi_inv = np.linalg.inv(phi)
    phi_inv = 0.5 * (phi_inv + phi_inv.T)
    return DataCovariances(
        phi=phi,
        phi_inv=phi_inv,
        u_bar=phi[:m, :],
        z0_bar=phi[m:, :],
        z1_bar=(z_next @ d0.T) / t,
        count=t,
    )


def cov_update(cov: DataCovariances, u_t, z_t, z_next) -> DataCovariances:
    """Fold one new sample into the covariances in O((m + r)^2).

    The running means are reweighted by t / (t + 1) and the inverse is kept
    current through a rank-one (Sherman-Morrison) correction.
    """
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    z_t = np.asarray(z_t, dtype=float).reshape(-1)
    z_next = np.asarray(z_next, dtype=float).reshape(-1)
    if u_t.shape[0] != cov.m or z_t.shape[0] != cov.r or z_next.shape[0] != cov.r:
        raise DimensionMismatch("sample dimensions do not match the covariances")
    t = cov.count
    phi_vec = np.concatenate([u_t, z_t])
    scale = t / (t + 1.0)
    phi = scale * cov.phi + np.outer(phi_vec, phi_vec) / (t + 1.0)
    phi = 0.5 * (phi + phi.T)
    z1_bar = scale * cov.z1_bar + np.outer(z_next, phi_vec) / (t + 1.0)
    # Sherman-Morrison on (t Phi + phi phi') / (t + 1).
    w = cov.phi_inv @ phi_vec
    denom = t + phi_vec @ w
    phi_inv = ((t + 1.0) / t) * (cov.phi_inv - np.outer(w, w) / denom)
    phi_inv = 0.5 * (phi_inv + phi_inv.T)
    # Frobenius-norm product is a cheap upper proxy for the condition number.
    cond_proxy = np.linalg.norm(phi) * np.linalg.norm(phi_inv)
    m = cov.m
    return DataCovariances(
        phi=phi,
        phi_inv=phi_inv,
        u_bar=phi[:m, :],
        z0_bar=phi[m:, :],
        z1_bar=z1_bar,
        count=t + 1,
        ill_conditioned=bool(cond_proxy > _COND_LIMIT),
    )


@dataclass(frozen=True)
class Parameterization:
    """Decision matrix V satisfying Zbar0 V = I for the attached covariances."""

    v: np.ndarray


def rank_one_reparameterize(prev_cov: DataCovariances, v_prime, u_t, z_t) -> np.ndarray:
    """Carry a decision matrix across one covariance update in O((m+r)^2 r).

    Given ``v_prime`` satisfying ``prev_cov.phi @ v_prime = [K; I]`` for the
    current gain, returns the decision matrix encoding the same gain under
    the covariances updated with the sample (u_t, z_t).  Algebraically equal
    to re-solving ``Phi_new V = [K; I]`` but needs only the rank-one
    correction.
    """
    v_prime = np.asarray(v_prime, dtype=float)
    phi_vec = np.concatenate(
        [np.asarray(u_t, dtype=float).reshape(-1), np.asarray(z_t, dtype=float).reshape(-1)]
    )
    if phi_vec.shape[0] != cov_dim(prev_cov):
        raise DimensionMismatch("sample does not match the covariance dimensions")
    t = prev_cov.count
    w = prev_cov.phi_inv @ phi_vec
    denom = t + phi_vec @ w
    return ((t + 1.0) / t) * (v_prime - np.outer(w, phi_vec @ v_prime) / denom)


def cov_dim(cov: DataCovariances) -> int:
    """Stacked sample dimension m + r."""
    return cov.m + cov.r


def parameterize(cov: DataCovariances, k) -> Parameterization:
    """Decision matrix reproducing the gain ``k``: solves Phi V = [K; I].

    The result satisfies Zbar0 V = I and Ubar V = K up to solver accuracy.
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (cov.m, cov.r):
        raise DimensionMismatch(f"gain must have shape ({cov.m}, {cov.r})")
    rhs = np.vstack([k, np.eye(cov.r)])
    try:
        v = np.linalg.solve(cov.phi, rhs)
    except np.linalg.LinAlgError:
        raise RankDeficient("sample covariance is singular") from None
    return Parameterization(v=v)


def recover_gain(cov: DataCovariances, v) -> np.ndarray:
    """Gain encoded by a decision matrix: K = Ubar V."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cov.m + cov.r, cov.r):
        raise DimensionMismatch(f"v must have shape ({cov.m + cov.r}, {cov.r})")
    return cov.u_bar @ v


def closed_loop(cov: DataCovariances, v) -> np.ndarray:
    """Data-driven closed-loop matrix Zbar1 V."""
    return cov.z1_bar @ np.asarray(v, dtype=float)


def data_cost(cov: DataCovariances, v, weights: LqrWeights) -> float:
    """LQR cost of a decision matrix under the data-driven dynamics.

    Returns ``trace((Q + K' R K) Sigma)`` with Sigma the closed-loop state
    covariance for unit process noise, or ``inf`` when the closed loop
    Zbar1 V is not Schur stable (infeasible policies are a value, not a
    crash, so line searches can compare them).
    """
    v = np.asarray(v, dtype=float)
    a_cl = cov.z1_bar @ v
    if spectral_radius(a_cl) >= 1.0 - FEASIBILITY_MARGIN:
        return float("inf")
    sigma = solve_dlyap(a_cl, np.eye(cov.r))
    k = cov.u_bar @ v
    return float(np.trace((weights.q + k.T @ weights.r @ k) @ sigma))


def gradient(cov: DataCovariances, v, weights: LqrWeights) -> np.ndarray:
    """Exact gradient of the data-driven cost with respect to V.

    Solves the two closed-loop Lyapunov equations (state covariance Sigma
    and cost-to-go P) and returns ``2 (Ubar' R Ubar + Zbar1' P Zbar1) V Sigma``.

    Raises Unstable when Zbar1 V is not Schur stable.
    """
    v = np.asarray(v, dtype=float)
    a_cl = cov.z1_bar @ v
    if spectral_radius(a_cl) >= 1.0 - FEASIBILITY_MARGIN:
        raise Unstable("closed loop of the current policy is not Schur stable")
    sigma = solve_dlyap(a_cl, np.eye(cov.r))
    k = cov.u_bar @ v
    p = solve_dlyap(a_cl.T, weights.q + k.T @ weights.r @ k)
    ru = weights.r @ cov.u_bar
    return 2.0 * (cov.u_bar.T @ ru + cov.z1_bar.T @ p @ cov.z1_bar) @ v @ sigma


def nullspace_projection(cov: DataCovariances) -> np.ndarray:
    """Orthogonal projector onto the nullspace of Zbar0.

    Gradient steps multiplied by this projector preserve the constraint
    Zbar0 V = I.  The projector has trace m.
    """
    z0 = cov.z0_bar
    pi = np.eye(z0.shape[1]) - np.linalg.pinv(z0) @ z0
    return 0.5 * (pi + pi.T)


def adaptive_stepsize(cov: DataCovariances, eta0: float):
    """Stepsize scaled by the excitation level of the data.

    Returns ``(eta0 / ||Ubar Pi Ubar'||, capped)`` where the norm is
    spectral.  The denominator measures the input energy not explained by
    the state — effectively the probing power — so steps grow when probing
    is faint.  A denominator below 1e-12 is capped (``capped = True``).
    """
    pi = nullspace_projection(cov)
    denom = np.linalg.norm(cov.u_bar @ pi @ cov.u_bar.T, ord=2)
    if denom < 1e-12:
        return eta0 / 1e-12, True
    return eta0 / denom, False


def initial_policy(cov: DataCovariances, weights: LqrWeights) -> np.ndarray:
    """Certainty-equivalence initial gain from the data covariances.

    Reads the least-squares dynamics estimate ``[B A] = Zbar1 Phi^{-1}`` off
    the covariances and solves the corresponding Riccati problem.  With
    noise-free data the estimate is exact, so the gain matches the true
    optimum.

    Raises Unstabilizable when the Riccati iteration cannot converge for
    the estimated pair.
    """
    ba = np.linalg.solve(cov.phi, cov.z1_bar.T).T
    b_hat = ba[:, : cov.m]
    a_hat = ba[:, cov.m :]
    try:
        return riccati_gain(a_hat, b_hat, weights.q, weights.r)
    except NoConvergence as exc:
        raise Unstabilizable(
            "no stabilizing gain found for the estimated dynamics"
        ) from exc
