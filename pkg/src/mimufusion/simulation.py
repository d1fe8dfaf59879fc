"""Closed-form rigid-body trajectory simulation and ideal/noisy IMU
measurement synthesis.

The trajectory family is per-axis sinusoids: position ``A sin(2 pi f t
+ phi0)`` on each world axis, orientation from per-axis Euler sinusoids
(yaw-pitch-roll, ZYX) with body rates and angular accelerations obtained
by analytic differentiation of the Euler-rate kinematics. Everything is
exact in closed form, so simulated data can serve as a ground-truth
oracle for the estimators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_from_rotvec, quat_multiply
from .types import Extrinsic, ImuSeries, NoiseSpec


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class TrajectoryParams:
    """Sinusoid parameters, one entry per axis.

    Position axes are world x/y/z in meters; Euler axes are roll (x),
    pitch (y), yaw (z) in radians. Frequencies in Hz, phases in rad.
    """

    pos_amplitude: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.6, 0.4]))
    pos_frequency: np.ndarray = field(default_factory=lambda: np.array([0.30, 0.40, 0.50]))
    pos_phase: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 2.0]))
    euler_amplitude: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.4, 0.6]))
    euler_frequency: np.ndarray = field(default_factory=lambda: np.array([0.50, 0.35, 0.45]))
    euler_phase: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.7, 1.4]))

    def __post_init__(self):
        for name in ("pos_amplitude", "pos_frequency", "pos_phase",
                     "euler_amplitude", "euler_frequency", "euler_phase"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if np.any(np.abs(self.euler_amplitude[1]) >= np.pi / 2):
            raise ValueError("pitch amplitude must stay below pi/2")

    def to_dict(self) -> dict:
        return {
            "position_amplitude_m": self.pos_amplitude.tolist(),
            "position_frequency_hz": self.pos_frequency.tolist(),
            "position_phase_rad": self.pos_phase.tolist(),
            "euler_amplitude_rad": self.euler_amplitude.tolist(),
            "euler_frequency_hz": self.euler_frequency.tolist(),
            "euler_phase_rad": self.euler_phase.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryParams":
        mapping = {
            "position_amplitude_m": "pos_amplitude",
            "position_frequency_hz": "pos_frequency",
            "position_phase_rad": "pos_phase",
            "euler_amplitude_rad": "euler_amplitude",
            "euler_frequency_hz": "euler_frequency",
            "euler_phase_rad": "euler_phase",
        }
        unknown = set(d) - set(mapping)
        if unknown:
            raise ValueError(f"unknown trajectory keys: {sorted(unknown)}")
        return cls(**{mapping[k]: v for k, v in d.items()})

    @classmethod
    def still(cls) -> "TrajectoryParams":
        """Motionless trajectory (all amplitudes zero)."""
        return cls(pos_amplitude=np.zeros(3), euler_amplitude=np.zeros(3))


@dataclass(frozen=True)
class SimConfig:
    """Simulation setup: sample rate, span, gravity, and trajectory."""

    freq: float = 200.0
    duration: float = 60.0
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    seed: int = 0
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)

    def __post_init__(self):
        if self.freq <= 0 or self.duration <= 0:
            raise ValueError("freq and duration must be positive")
        object.__setattr__(self, "gravity", _vec3(self.gravity))

    @property
    def sample_count(self) -> int:
        return int(round(self.freq * self.duration))

    def times(self) -> np.ndarray:
        return np.arange(self.sample_count) / self.freq


@dataclass(frozen=True)
class TrajectorySample:
    """Ground-truth state at one instant.

    ``rotation`` is world-from-body; position/velocity/acceleration are
    world-frame; ``omega`` and ``omega_dot`` are body-frame angular rate
    and angular acceleration.
    """

    t: float
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray


def _sinusoids(amp, freq, phase, ts):
    """Per-axis A sin(2 pi f t + phi) and its first two derivatives.

    Returns three (n, 3) arrays.
    """
    w = 2.0 * np.pi * np.asarray(freq)
    arg = np.outer(ts, w) + np.asarray(phase)
    val = amp * np.sin(arg)
    d1 = amp * w * np.cos(arg)
    d2 = -amp * w**2 * np.sin(arg)
    return val, d1, d2


def _rotations_zyx(angles: np.ndarray) -> np.ndarray:
    """World-from-body matrices for (roll, pitch, yaw) columns, (n, 3, 3)."""
    sr, cr = np.sin(angles[:, 0]), np.cos(angles[:, 0])
    sp, cp = np.sin(angles[:, 1]), np.cos(angles[:, 1])
    sy, cy = np.sin(angles[:, 2]), np.cos(angles[:, 2])
    R = np.empty((angles.shape[0], 3, 3))
    R[:, 0, 0] = cy * cp
    R[:, 0, 1] = cy * sp * sr - sy * cr
    R[:, 0, 2] = cy * sp * cr + sy * sr
    R[:, 1, 0] = sy * cp
    R[:, 1, 1] = sy * sp * sr + cy * cr
    R[:, 1, 2] = sy * sp * cr - cy * sr
    R[:, 2, 0] = -sp
    R[:, 2, 1] = cp * sr
    R[:, 2, 2] = cp * cr
    return R


def _body_rates(angles, d1, d2):
    """Body angular rate and acceleration from ZYX Euler angle histories.

    For R = Rz(yaw) Ry(pitch) Rx(roll):
        wx = roll' - yaw' sin(pitch)
        wy = pitch' cos(roll) + yaw' cos(pitch) sin(roll)
        wz = -pitch' sin(roll) + yaw' cos(pitch) cos(roll)
    and omega_dot is the direct time derivative of those expressions.
    """
    r, p = angles[:, 0], angles[:, 1]
    rd, pd, yd = d1[:, 0], d1[:, 1], d1[:, 2]
    rdd, pdd, ydd = d2[:, 0], d2[:, 1], d2[:, 2]
    sr, cr = np.sin(r), np.cos(r)
    sp, cp = np.sin(p), np.cos(p)

    w = np.empty((angles.shape[0], 3))
    w[:, 0] = rd - yd * sp
    w[:, 1] = pd * cr + yd * cp * sr
    w[:, 2] = -pd * sr + yd * cp * cr

    wd = np.empty_like(w)
    wd[:, 0] = rdd - ydd * sp - yd * pd * cp
    wd[:, 1] = (pdd * cr - pd * rd * sr + ydd * cp * sr
                + yd * (-pd * sp * sr + rd * cp * cr))
    wd[:, 2] = (-pdd * sr - pd * rd * cr + ydd * cp * cr
                + yd * (-pd * sp * cr - rd * cp * sr))
    return w, wd


def _trajectory_arrays(cfg: SimConfig, ts: np.ndarray):
    """Batch trajectory evaluation; returns (R, p, v, a, w, wd) arrays."""
    tp = cfg.trajectory
    pos, vel, acc = _sinusoids(tp.pos_amplitude, tp.pos_frequency, tp.pos_phase, ts)
    ang, ang_d1, ang_d2 = _sinusoids(
        tp.euler_amplitude, tp.euler_frequency, tp.euler_phase, ts)
    R = _rotations_zyx(ang)
    w, wd = _body_rates(ang, ang_d1, ang_d2)
    return R, pos, vel, acc, w, wd


def sample_trajectory(cfg: SimConfig, t: float) -> TrajectorySample:
    """Ground-truth state at time t in [0, duration]."""
    t = float(t)
    if not 0.0 <= t <= cfg.duration:
        raise ValueError(f"t={t} outside [0, {cfg.duration}]")
    ts = np.array([t])
    R, p, v, a, w, wd = _trajectory_arrays(cfg, ts)
    return TrajectorySample(t=t, rotation=R[0], position=p[0], velocity=v[0],
                            acceleration=a[0], omega=w[0], omega_dot=wd[0])


def trajectory_samples(cfg: SimConfig, ts) -> list[TrajectorySample]:
    """Batch version of sample_trajectory for an array of times."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0.0) or np.any(ts > cfg.duration):
        raise ValueError("times outside [0, duration]")
    R, p, v, a, w, wd = _trajectory_arrays(cfg, ts)
    return [
        TrajectorySample(t=float(ts[i]), rotation=R[i], position=p[i],
                         velocity=v[i], acceleration=a[i], omega=w[i],
                         omega_dot=wd[i])
        for i in range(len(ts))
    ]


def ideal_body_measurements(sample: TrajectorySample, gravity) -> tuple:
    """Noise-free gyro and specific-force measurement at the body origin.

    Specific force is R_wb^T (a_world - g): a stationary, level body reads
    (0, 0, +9.81) with gravity (0, 0, -9.81).
    """
    g = _vec3(gravity)
    f = sample.rotation.T @ (sample.acceleration - g)
    return sample.omega.copy(), f


def transfer_measurement(omega, omega_dot, accel, ext: Extrinsic) -> tuple:
    """Rigid-body transfer of gyro/specific-force readings between frames.

    Inputs are source-frame (A) quantities; ``ext`` carries the target
    frame's pose (rotation B-from-A, lever arm: B origin in A coords):

        w_B = R_BA w_A
        a_B = R_BA (a_A + [w_A]x^2 p + [wdot_A]x p)

    Accepts (3,) vectors or (n, 3) batches.
    """
    R = ext.rotation()
    omega = np.asarray(omega, dtype=float)
    omega_dot = np.asarray(omega_dot, dtype=float)
    accel = np.asarray(accel, dtype=float)
    lever = np.cross(omega, np.cross(omega, ext.p)) + np.cross(omega_dot, ext.p)
    return omega @ R.T, (accel + lever) @ R.T


def ideal_imu_series(cfg: SimConfig, mount: Extrinsic) -> tuple:
    """Noise-free gyro/accel arrays for an IMU rigidly mounted on the body.

    ``mount`` follows the Extrinsic convention with the body as source:
    q rotates body coords into the sensor frame, p is the sensor origin
    in body coordinates.
    """
    ts = cfg.times()
    R, pos, vel, acc, w, wd = _trajectory_arrays(cfg, ts)
    # specific force at the body origin, in body coords
    f = np.einsum("nij,nj->ni", R.transpose(0, 2, 1), acc - cfg.gravity)
    return transfer_measurement(w, wd, f, mount)


def apply_measurement_noise(gyro, accel, noise: NoiseSpec, freq: float, rng):
    """Add white noise plus a bias random walk to ideal measurements.

    Discrete white noise has std sigma * sqrt(freq) per axis; the bias
    walk steps by sigma_b / sqrt(freq) per sample starting from the
    spec's initial bias (the step after sample k perturbs sample k+1).
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    n = gyro.shape[0]
    sqf = np.sqrt(freq)
    eta_g = rng.standard_normal((n, 3)) * (noise.sigma_g * sqf)
    eta_a = rng.standard_normal((n, 3)) * (noise.sigma_a * sqf)
    steps_g = rng.standard_normal((n, 3)) * (noise.sigma_bg / sqf)
    steps_a = rng.standard_normal((n, 3)) * (noise.sigma_ba / sqf)
    walk_g = noise.initial_bias_g + np.vstack(
        [np.zeros(3), np.cumsum(steps_g[:-1], axis=0)])
    walk_a = noise.initial_bias_a + np.vstack(
        [np.zeros(3), np.cumsum(steps_a[:-1], axis=0)])
    return gyro + walk_g + eta_g, accel + walk_a + eta_a


def simulate_imu(cfg: SimConfig, mount: Extrinsic, noise: NoiseSpec,
                 seed=None) -> ImuSeries:
    """Simulate one mounted IMU; identical seeds give bit-identical output."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    w, a = ideal_imu_series(cfg, mount)
    w, a = apply_measurement_noise(w, a, noise, cfg.freq, rng)
    return ImuSeries(freq=cfg.freq, start_ns=0, gyro=w, accel=a)


def perturb_extrinsics(ext: Extrinsic, sigma_rot: float, sigma_trans: float,
                       seed=None) -> Extrinsic:
    """Draw a perturbed extrinsic: rotation right-multiplied by the
    exponential of a N(0, sigma_rot^2 I) tangent, translation shifted by
    N(0, sigma_trans^2 I)."""
    if sigma_rot < 0 or sigma_trans < 0:
        raise ValueError("perturbation sigmas must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    delta_rot = rng.standard_normal(3) * sigma_rot
    delta_p = rng.standard_normal(3) * sigma_trans
    return Extrinsic(q=quat_multiply(ext.q, quat_from_rotvec(delta_rot)),
                     p=ext.p + delta_p)


def grid_mounts(rows: int = 3, cols: int = 3, pitch: float = 0.05) -> list[Extrinsic]:
    """Planar IMU array on the body: rows x cols grid, identity
    orientations, centered on the body origin, row-major order."""
    mounts = []
    for r in range(rows):
        for c in range(cols):
            p = np.array([
                (c - (cols - 1) / 2.0) * pitch,
                (r - (rows - 1) / 2.0) * pitch,
                0.0,
            ])
            mounts.append(Extrinsic(p=p))
    return mounts
