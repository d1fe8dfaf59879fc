"""Virtual-IMU construction: fuse n rigidly mounted IMUs into a single
equivalent sensor at a chosen virtual frame.

Gyros combine through a whitened stacked least-squares solve; the
accelerometers additionally have their rigid-body lever-arm terms
subtracted before solving, using the fused angular rate and a central
-difference angular acceleration. The same design matrices give the
virtual noise and bias random-walk covariances in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, RateMismatch, SingularFusion
from .geometry import is_rotation, rotation_from_quat
from .types import Extrinsic, ImuSeries, NoiseSpec


@dataclass(frozen=True)
class VimuConfig:
    """Geometry and noise of an n-sensor array around a virtual frame.

    rotations[i] maps virtual-frame coordinates into sensor i's frame;
    positions[i] is sensor i's origin in virtual-frame coordinates (m).
    """

    rotations: tuple
    positions: tuple
    noises: tuple

    def __post_init__(self):
        rotations = tuple(np.asarray(r, dtype=float) for r in self.rotations)
        positions = tuple(np.asarray(p, dtype=float) for p in self.positions)
        noises = tuple(self.noises)
        if not (len(rotations) == len(positions) == len(noises)) or not rotations:
            raise ValueError("need matching, non-empty geometry and noise lists")
        for r in rotations:
            if not is_rotation(r, tol=1e-8):
                raise ValueError("rotations must be valid rotation matrices")
        for p in positions:
            if p.shape != (3,):
                raise ValueError("positions must be 3-vectors")
        object.__setattr__(self, "rotations", rotations)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "noises", noises)

    @property
    def n(self) -> int:
        return len(self.rotations)

    def to_dict(self) -> dict:
        return {
            "rotations": [r.tolist() for r in self.rotations],
            "positions_m": [p.tolist() for p in self.positions],
            "noises": [ns.to_dict() for ns in self.noises],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VimuConfig":
        return cls(
            rotations=tuple(np.asarray(r, dtype=float) for r in d["rotations"]),
            positions=tuple(np.asarray(p, dtype=float) for p in d["positions_m"]),
            noises=tuple(NoiseSpec.from_dict(ns) for ns in d["noises"]),
        )


def midpoint_frame(ext: Extrinsic, noise_a: NoiseSpec,
                   noise_b: NoiseSpec) -> VimuConfig:
    """Two-sensor virtual frame at the midpoint of the lever arm, axes
    aligned with sensor A.

    The symmetric placement cancels the lever-arm sensitivity of the
    fused accelerometer to angular-rate errors to first order.
    """
    R_ba = ext.rotation()
    return VimuConfig(
        rotations=(np.eye(3), R_ba),
        positions=(-0.5 * ext.p, 0.5 * ext.p),
        noises=(noise_a, noise_b),
    )


def single_frame(noise: NoiseSpec, rotation=None, position=None) -> VimuConfig:
    """Degenerate one-sensor array (passthrough with optional re-framing)."""
    return VimuConfig(
        rotations=(np.eye(3) if rotation is None else rotation,),
        positions=(np.zeros(3) if position is None else position,),
        noises=(noise,),
    )


def _effective_sigmas(values) -> np.ndarray:
    """Whitening scales: the true sigmas, or all-ones when every sigma in
    the category is zero (exact data). Mixing zero and positive sigma has
    no finite whitening and is rejected."""
    v = np.asarray(values, dtype=float)
    if np.all(v > 0.0):
        return v
    if np.all(v == 0.0):
        return np.ones_like(v)
    raise SingularFusion(
        "cannot fuse exact (sigma=0) and noisy sensors in one stack")


@dataclass(frozen=True)
class FusionMatrices:
    """Whitened stacked design matrices and their left inverses.

    gyro_design (3n, 3) stacks rotations[i]/sigma_g_i; gyro_solve (3, 3n)
    is its pseudo-inverse; likewise accel_design/accel_solve with the
    accelerometer sigmas. The sigma arrays record the whitening actually
    applied (see _effective_sigmas).
    """

    gyro_design: np.ndarray
    gyro_solve: np.ndarray
    accel_design: np.ndarray
    accel_solve: np.ndarray
    gyro_sigmas: np.ndarray
    accel_sigmas: np.ndarray


def _design_and_solve(rotations, sigmas):
    design = np.vstack([r / s for r, s in zip(rotations, sigmas)])
    gram = design.T @ design
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularFusion(f"fusion gram matrix ill-conditioned (cond {cond:.3e})")
    solve = np.linalg.solve(gram, design.T)
    return design, solve


def build_fusion(cfg: VimuConfig) -> FusionMatrices:
    """Assemble the fusion matrices; raises SingularFusion when the
    geometry/noise combination admits no stable solve."""
    gyro_sigmas = _effective_sigmas([ns.sigma_g for ns in cfg.noises])
    accel_sigmas = _effective_sigmas([ns.sigma_a for ns in cfg.noises])
    gyro_design, gyro_solve = _design_and_solve(cfg.rotations, gyro_sigmas)
    accel_design, accel_solve = _design_and_solve(cfg.rotations, accel_sigmas)
    return FusionMatrices(
        gyro_design=gyro_design,
        gyro_solve=gyro_solve,
        accel_design=accel_design,
        accel_solve=accel_solve,
        gyro_sigmas=gyro_sigmas,
        accel_sigmas=accel_sigmas,
    )


def fuse_gyro(fm: FusionMatrices, omegas) -> np.ndarray:
    """Fused angular rate at the virtual frame from per-sensor readings
    (n, 3)."""
    omegas = np.asarray(omegas, dtype=float)
    stacked = (omegas / fm.gyro_sigmas[:, None]).reshape(-1)
    return fm.gyro_solve @ stacked


def lever_arm_stack(cfg: VimuConfig, omega, omega_dot) -> np.ndarray:
    """Whitened stack of predicted lever-arm accelerations, one 3-block
    per sensor: R_i ([w]x^2 p_i + [wdot]x p_i) / sigma_a_i."""
    sigmas = _effective_sigmas([ns.sigma_a for ns in cfg.noises])
    omega = np.asarray(omega, dtype=float)
    omega_dot = np.asarray(omega_dot, dtype=float)
    blocks = []
    for r, p, s in zip(cfg.rotations, cfg.positions, sigmas):
        lever = np.cross(omega, np.cross(omega, p)) + np.cross(omega_dot, p)
        blocks.append((r @ lever) / s)
    return np.concatenate(blocks)


def fuse_accel(fm: FusionMatrices, cfg: VimuConfig, accels, omega,
               omega_dot) -> np.ndarray:
    """Fused specific force at the virtual frame: whiten, subtract the
    lever-arm predictions, and solve."""
    accels = np.asarray(accels, dtype=float)
    stacked = (accels / fm.accel_sigmas[:, None]).reshape(-1)
    return fm.accel_solve @ (stacked - lever_arm_stack(cfg, omega, omega_dot))


@dataclass(frozen=True)
class VimuNoise:
    """Virtual-sensor white-noise and bias random-walk covariance
    densities (continuous time, 3x3 each)."""

    gyro: np.ndarray
    gyro_bias: np.ndarray
    accel: np.ndarray
    accel_bias: np.ndarray

    def to_dict(self) -> dict:
        return {
            "Q_gV": self.gyro.tolist(),
            "Q_bgV": self.gyro_bias.tolist(),
            "Q_aV": self.accel.tolist(),
            "Q_baV": self.accel_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VimuNoise":
        return cls(
            gyro=np.asarray(d["Q_gV"], dtype=float),
            gyro_bias=np.asarray(d["Q_bgV"], dtype=float),
            accel=np.asarray(d["Q_aV"], dtype=float),
            accel_bias=np.asarray(d["Q_baV"], dtype=float),
        )


def _propagated(solve, true_sigmas, eff_sigmas) -> np.ndarray:
    # solve acts on stacks whitened by eff_sigmas; the actual per-block
    # noise has std true_sigma/eff_sigma after that whitening.
    ratios = np.repeat((true_sigmas / eff_sigmas) ** 2, 3)
    return (solve * ratios[None, :]) @ solve.T


def virtual_covariances(cfg: VimuConfig) -> VimuNoise:
    """Closed-form virtual noise model.

    With all sigmas positive the whitened measurement noise is unit, so
    the white-noise covariances reduce to the design Gram inverses; the
    bias covariances propagate each sensor's walk density through the
    same solve.
    """
    fm = build_fusion(cfg)
    g_true = np.array([ns.sigma_g for ns in cfg.noises])
    a_true = np.array([ns.sigma_a for ns in cfg.noises])
    bg = np.array([ns.sigma_bg for ns in cfg.noises])
    ba = np.array([ns.sigma_ba for ns in cfg.noises])
    return VimuNoise(
        gyro=_propagated(fm.gyro_solve, g_true, fm.gyro_sigmas),
        gyro_bias=_propagated(fm.gyro_solve, bg, fm.gyro_sigmas),
        accel=_propagated(fm.accel_solve, a_true, fm.accel_sigmas),
        accel_bias=_propagated(fm.accel_solve, ba, fm.accel_sigmas),
    )


def virtual_bias(fm: FusionMatrices, gyro_biases, accel_biases) -> tuple:
    """Virtual-frame biases equivalent to the given per-sensor biases."""
    bg = np.asarray(gyro_biases, dtype=float)
    ba = np.asarray(accel_biases, dtype=float)
    return (
        fm.gyro_solve @ (bg / fm.gyro_sigmas[:, None]).reshape(-1),
        fm.accel_solve @ (ba / fm.accel_sigmas[:, None]).reshape(-1),
    )


@dataclass
class VirtualSeries:
    """Fused fixed-rate virtual-IMU samples.

    gyro/accel are the fused measurements; gyro_rate is the central
    -difference angular acceleration used during fusion. The series
    covers the interior samples of its sources (endpoints dropped by the
    differencing), so start_ns is shifted by one period.
    """

    freq: float
    start_ns: int
    gyro: np.ndarray
    accel: np.ndarray
    gyro_rate: np.ndarray

    def __len__(self) -> int:
        return self.gyro.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.freq


def _lever_batch(cfg: VimuConfig, sigmas, omega: np.ndarray,
                 omega_dot: np.ndarray) -> np.ndarray:
    """lever_arm_stack over (k, 3) inputs, returns (k, 3n)."""
    blocks = []
    for r, p, s in zip(cfg.rotations, cfg.positions, sigmas):
        lever = np.cross(omega, np.cross(omega, np.broadcast_to(p, omega.shape))) \
            + np.cross(omega_dot, np.broadcast_to(p, omega.shape))
        blocks.append((lever @ r.T) / s)
    return np.hstack(blocks)


def fuse_series(cfg: VimuConfig, series: list, fm: FusionMatrices | None = None
                ) -> VirtualSeries:
    """Fuse synchronized per-sensor series into one virtual series.

    All inputs must share rate, start time, and length. The fused gyro is
    computed first; its central difference provides the angular
    acceleration for the accelerometer lever-arm subtraction, which costs
    the first and last samples.
    """
    if len(series) != cfg.n:
        raise LengthMismatch(f"expected {cfg.n} series, got {len(series)}")
    base = series[0]
    for s in series[1:]:
        if abs(s.freq - base.freq) > 1e-9 * base.freq:
            raise RateMismatch(f"rates differ: {s.freq} vs {base.freq}")
        if s.start_ns != base.start_ns or len(s) != len(base):
            raise LengthMismatch("series must share start time and length")
    if len(base) < 3:
        raise LengthMismatch("need at least 3 samples to fuse")
    if fm is None:
        fm = build_fusion(cfg)

    gyro_stack = np.hstack([s.gyro / sg for s, sg in zip(series, fm.gyro_sigmas)])
    fused_w = gyro_stack @ fm.gyro_solve.T
    wdot = 0.5 * base.freq * (fused_w[2:] - fused_w[:-2])
    fused_w = fused_w[1:-1]

    accel_stack = np.hstack(
        [s.accel[1:-1] / sa for s, sa in zip(series, fm.accel_sigmas)])
    lever = _lever_batch(cfg, fm.accel_sigmas, fused_w, wdot)
    fused_a = (accel_stack - lever) @ fm.accel_solve.T

    return VirtualSeries(
        freq=base.freq,
        start_ns=base.start_ns + int(np.rint(base.period_ns)),
        gyro=fused_w,
        accel=fused_a,
        gyro_rate=wdot,
    )


def array_frame(mounts: list, noises: list) -> tuple:
    """VimuConfig for body-mounted sensors with the virtual frame at the
    centroid of the mount positions, axes aligned with the body.

    Returns (config, frame_rotation, frame_position) where the last two
    place the virtual frame on the body (R body-from-virtual = I, so the
    rotation returned is the identity; the position is the centroid).
    """
    if len(mounts) != len(noises) or not mounts:
        raise ValueError("need matching, non-empty mount and noise lists")
    centroid = np.mean([m.p for m in mounts], axis=0)
    cfg = VimuConfig(
        rotations=tuple(rotation_from_quat(m.q) for m in mounts),
        positions=tuple(m.p - centroid for m in mounts),
        noises=tuple(noises),
    )
    return cfg, np.eye(3), centroid
