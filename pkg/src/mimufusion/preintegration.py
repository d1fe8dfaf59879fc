"""On-manifold preintegration of virtual-IMU measurements with
first-order covariance propagation.

Between two keyframes the bias-corrected samples are folded into
relative motion increments

    dR = prod Exp((w - b_g) dt),   dv = sum dR_k a_k dt,
    dp = sum (dv_k dt + 1/2 dR_k a_k dt^2)

independent of the start state. The 9x9 covariance over the error state
(phi, v, p) propagates per step as A S A^T + B S_eta B^T, where B routes
the virtual gyro noise into orientation through the right Jacobian and
into position through the fused accelerometer's lever-arm sensitivity
(the psi stack); the noise-dependent blocks of B are evaluated at the
zero-noise expectation.

Error-state conventions (matching A/B): dR_meas = dR Exp(e_phi),
e_v = dv_meas - dv, e_p = dp_meas - dp.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import exp_so3, exp_so3_many, right_jacobian, right_jacobian_many, skew
from .vimu import (
    FusionMatrices,
    VimuConfig,
    VimuNoise,
    VirtualSeries,
    _effective_sigmas,
    _lever_batch,
)


@dataclass
class VimuState:
    """World-frame navigation state of the virtual sensor."""

    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "VimuState":
        return cls(rotation=np.eye(3), position=np.zeros(3), velocity=np.zeros(3))


@dataclass
class PreintDelta:
    """Accumulated relative-motion increments and their covariance.

    covariance is 9x9 over (phi, v, p) error blocks in that order.
    """

    rotation: np.ndarray
    velocity: np.ndarray
    position: np.ndarray
    covariance: np.ndarray
    duration: float
    count: int

    @classmethod
    def identity(cls) -> "PreintDelta":
        return cls(rotation=np.eye(3), velocity=np.zeros(3), position=np.zeros(3),
                   covariance=np.zeros((9, 9)), duration=0.0, count=0)


@dataclass
class StepMatrices:
    """One-step error-state transition (9x9) and noise input (9x6)."""

    a: np.ndarray
    b: np.ndarray


def bias_correct(series: VirtualSeries, state: VimuState, cfg: VimuConfig,
                 fm: FusionMatrices) -> tuple:
    """Remove the virtual biases from fused samples.

    The accelerometer additionally gets back the lever-arm prediction
    error that fusion introduced by subtracting lever terms computed
    from biased rates: corr = T (S(w_meas) - S(w_meas - b_g)), evaluated
    with the measured angular acceleration (whose central difference is
    insensitive to a constant gyro bias). With zero gyro bias the
    correction vanishes.

    Returns (w_hat, a_hat) arrays of shape (k, 3).
    """
    w_hat = series.gyro - state.bias_gyro
    a_hat = series.accel - state.bias_accel
    if np.any(state.bias_gyro != 0.0):
        sigmas = _effective_sigmas([ns.sigma_a for ns in cfg.noises])
        stack_meas = _lever_batch(cfg, sigmas, series.gyro, series.gyro_rate)
        stack_hat = _lever_batch(cfg, sigmas, w_hat, series.gyro_rate)
        a_hat = a_hat + (stack_meas - stack_hat) @ fm.accel_solve.T
    return w_hat, a_hat


def psi_matrix(cfg: VimuConfig, w_hat) -> np.ndarray:
    """Jacobian of the whitened lever-arm stack with respect to the
    angular rate, at rate w_hat: blocks R_i (-[w]x [p_i]x - [[w]x p_i]x)
    / sigma_a_i, stacked to (3n, 3)."""
    w_hat = np.asarray(w_hat, dtype=float)
    sigmas = _effective_sigmas([ns.sigma_a for ns in cfg.noises])
    sw = skew(w_hat)
    blocks = []
    for r, p, s in zip(cfg.rotations, cfg.positions, sigmas):
        blocks.append(r @ (-sw @ skew(p) - skew(sw @ p)) / s)
    return np.vstack(blocks)


def _noise_input_covariance(noise: VimuNoise, freq: float) -> np.ndarray:
    """Discrete per-sample covariance of the stacked (gyro, accel) noise."""
    out = np.zeros((6, 6))
    out[:3, :3] = noise.gyro * freq
    out[3:, 3:] = noise.accel * freq
    return out


def step_matrices(accum_rotation, step_rotation, w_hat, a_hat,
                  cfg: VimuConfig, fm: FusionMatrices, dt: float) -> StepMatrices:
    """Error-state transition and noise-input matrices for one sample.

    ``accum_rotation`` is the delta rotation accumulated before this
    sample; ``step_rotation`` is Exp(w_hat dt) for this sample.
    """
    sa = skew(a_hat)
    A = np.zeros((9, 9))
    A[0:3, 0:3] = step_rotation.T
    A[3:6, 0:3] = -accum_rotation @ sa * dt
    A[3:6, 3:6] = np.eye(3)
    A[6:9, 0:3] = -0.5 * accum_rotation @ sa * dt**2
    A[6:9, 3:6] = dt * np.eye(3)
    A[6:9, 6:9] = np.eye(3)

    B = np.zeros((9, 6))
    B[0:3, 0:3] = right_jacobian(np.asarray(w_hat) * dt) * dt
    # Gyro noise leaks into position through the fused accelerometer's
    # lever-arm sensitivity; the corresponding velocity block carries a
    # noise-dependent factor and vanishes at the expectation.
    t_psi = fm.accel_solve @ psi_matrix(cfg, w_hat)
    B[6:9, 0:3] = -0.5 * accum_rotation @ t_psi * dt**2
    B[3:6, 3:6] = accum_rotation * dt
    B[6:9, 3:6] = 0.5 * accum_rotation * dt**2
    return StepMatrices(a=A, b=B)


def propagate_step(prev: PreintDelta, w_hat, a_hat, cfg: VimuConfig,
                   fm: FusionMatrices, noise: VimuNoise, freq: float) -> PreintDelta:
    """Fold one bias-corrected sample into the running delta."""
    dt = 1.0 / freq
    w_hat = np.asarray(w_hat, dtype=float)
    a_hat = np.asarray(a_hat, dtype=float)
    step_rot = exp_so3(w_hat * dt)
    sm = step_matrices(prev.rotation, step_rot, w_hat, a_hat, cfg, fm, dt)
    s_eta = _noise_input_covariance(noise, freq)
    cov = sm.a @ prev.covariance @ sm.a.T + sm.b @ s_eta @ sm.b.T
    cov = 0.5 * (cov + cov.T)
    accel_world = prev.rotation @ a_hat
    return PreintDelta(
        rotation=prev.rotation @ step_rot,
        velocity=prev.velocity + accel_world * dt,
        position=prev.position + prev.velocity * dt + 0.5 * accel_world * dt**2,
        covariance=cov,
        duration=prev.duration + dt,
        count=prev.count + 1,
    )


def preintegrate(series: VirtualSeries, state: VimuState, cfg: VimuConfig,
                 fm: FusionMatrices, noise: VimuNoise | None = None,
                 with_covariance: bool = True) -> PreintDelta:
    """Integrate a whole virtual series into one PreintDelta.

    Equivalent to folding the samples through propagate_step one by one;
    the loop is unrolled here with batched rotation/Jacobian evaluation.
    ``with_covariance=False`` skips the covariance recursion (useful in
    Monte-Carlo loops that only need the increments) and then ``noise``
    may be omitted.
    """
    k = len(series)
    if with_covariance and noise is None:
        raise ValueError("covariance propagation needs the virtual noise model")
    if k == 0:
        return PreintDelta.identity()
    dt = 1.0 / series.freq
    w_hat, a_hat = bias_correct(series, state, cfg, fm)
    steps = exp_so3_many(w_hat * dt)

    if with_covariance:
        jr_dt = right_jacobian_many(w_hat * dt) * dt
        s_eta = _noise_input_covariance(noise, series.freq)
        t_psi = np.einsum("ij,tjk->tik",
                          fm.accel_solve, _psi_batch(cfg, w_hat))

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    for t in range(k):
        if with_covariance:
            sa = skew(a_hat[t])
            A = np.zeros((9, 9))
            A[0:3, 0:3] = steps[t].T
            A[3:6, 0:3] = -dR @ sa * dt
            A[3:6, 3:6] = np.eye(3)
            A[6:9, 0:3] = -0.5 * dR @ sa * dt**2
            A[6:9, 3:6] = dt * np.eye(3)
            A[6:9, 6:9] = np.eye(3)
            B = np.zeros((9, 6))
            B[0:3, 0:3] = jr_dt[t]
            B[6:9, 0:3] = -0.5 * dR @ t_psi[t] * dt**2
            B[3:6, 3:6] = dR * dt
            B[6:9, 3:6] = 0.5 * dR * dt**2
            cov = A @ cov @ A.T + B @ s_eta @ B.T
            cov = 0.5 * (cov + cov.T)
        accel_world = dR @ a_hat[t]
        dp = dp + dv * dt + 0.5 * accel_world * dt**2
        dv = dv + accel_world * dt
        dR = dR @ steps[t]
    return PreintDelta(rotation=dR, velocity=dv, position=dp, covariance=cov,
                       duration=k * dt, count=k)


def _psi_batch(cfg: VimuConfig, w_hat: np.ndarray) -> np.ndarray:
    """psi_matrix over (k, 3) rates, returns (k, 3n, 3)."""
    from .geometry import skew_many

    sigmas = _effective_sigmas([ns.sigma_a for ns in cfg.noises])
    sw = skew_many(w_hat)
    blocks = []
    for r, p, s in zip(cfg.rotations, cfg.positions, sigmas):
        swp = skew_many(np.cross(w_hat, np.broadcast_to(p, w_hat.shape)))
        blocks.append(np.einsum("ij,tjk->tik", r, -sw @ skew(p) - swp) / s)
    return np.concatenate(blocks, axis=1)


def predict_state(start: VimuState, delta: PreintDelta, gravity) -> VimuState:
    """Apply a PreintDelta to a start state under constant gravity."""
    g = np.asarray(gravity, dtype=float)
    T = delta.duration
    return VimuState(
        rotation=start.rotation @ delta.rotation,
        velocity=start.velocity + g * T + start.rotation @ delta.velocity,
        position=(start.position + start.velocity * T + 0.5 * g * T**2
                  + start.rotation @ delta.position),
        bias_gyro=start.bias_gyro.copy(),
        bias_accel=start.bias_accel.copy(),
    )
