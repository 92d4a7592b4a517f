"""Quadrotor rigid-body model with ground-effect thrust correction.

State layout, shape (12,):

    [px, py, pz,  vx, vy, vz,  roll, pitch, yaw,  wx, wy, wz]

Position and velocity are world-frame (m, m/s), attitude is ZYX Euler
angles (rad), angular rates are body-frame (rad/s). Controls are the four
per-motor thrusts [u1, u2, u3, u4] in newtons.

All functions here are pure; batched variants operate on stacked rows and
are used by the optimizer's horizon evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
RATE = slice(9, 12)

# margin kept from the pitch/roll singularity of the Euler-rate map
EULER_SINGULARITY_TOL = 1e-9


class SimulationFault(RuntimeError):
    """The state left the validity envelope of the model (singular attitude
    or non-finite components). Raised instead of silently clamping."""


@dataclass
class QuadrotorParams:
    """Physical parameters of the vehicle.

    J holds the three diagonal inertia entries; the inertia tensor is
    assumed diagonal. eps_ge regularizes the ground-effect denominator and
    k_ge_max bounds the multiplier where the raw formula diverges.
    """

    m: float = 1.5
    l_x: float = 0.12
    l_y: float = 0.12
    k_t: float = 0.016
    J: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.035]))
    r_rotor: float = 0.12
    eps_ge: float = 0.01
    k_ge_max: float = 1.5
    g: float = 9.81
    z_ground: float = 0.0

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        self.validate()

    def validate(self):
        if not (self.m > 0):
            raise ValueError("mass must be positive")
        if self.J.shape != (3,) or not np.all(self.J > 0):
            raise ValueError("J must be three positive diagonal entries")
        if not (self.r_rotor > 0 and self.eps_ge > 0):
            raise ValueError("r_rotor and eps_ge must be positive")
        if not (self.k_ge_max > 1):
            raise ValueError("k_ge_max must exceed 1")

    def mix_matrix(self) -> np.ndarray:
        """Signed torque mixing matrix, rows (roll, pitch, yaw)."""
        lx, ly, kt = self.l_x, self.l_y, self.k_t
        return np.array(
            [
                [-ly, ly, ly, -ly],
                [-lx, lx, -lx, lx],
                [kt, kt, -kt, -kt],
            ]
        )

    def hover_thrust(self) -> float:
        """Per-motor thrust that balances gravity exactly (no ground effect)."""
        return self.m * self.g / 4.0

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "l_x": self.l_x,
            "l_y": self.l_y,
            "k_t": self.k_t,
            "J": list(map(float, self.J)),
            "r_rotor": self.r_rotor,
            "eps_ge": self.eps_ge,
            "k_ge_max": self.k_ge_max,
            "g": self.g,
            "z_ground": self.z_ground,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadrotorParams":
        return cls(**{k: (np.array(v) if k == "J" else v) for k, v in d.items()})


@dataclass
class BodyWrench:
    """Total thrust (N) and body torques (N·m) produced by the motors."""

    f_total: float
    tau: np.ndarray


def make_state(pos=(0.0, 0.0, 0.0), vel=(0.0, 0.0, 0.0), att=(0.0, 0.0, 0.0),
               rate=(0.0, 0.0, 0.0)) -> np.ndarray:
    x = np.zeros(12)
    x[POS] = pos
    x[VEL] = vel
    x[ATT] = att
    x[RATE] = rate
    return x


def hover_state(pos, yaw: float = 0.0) -> np.ndarray:
    return make_state(pos=pos, att=(0.0, 0.0, yaw))


def hover_control(params: QuadrotorParams) -> np.ndarray:
    return np.full(4, params.hover_thrust())


def check_state(x: np.ndarray):
    """Raise SimulationFault for non-finite components or a singular attitude."""
    if not np.all(np.isfinite(x)):
        raise SimulationFault("non-finite state component")
    roll, pitch = x[6], x[7]
    lim = np.pi / 2 - EULER_SINGULARITY_TOL
    if abs(roll) >= lim or abs(pitch) >= lim:
        raise SimulationFault(
            f"attitude outside the nonsingular range: roll={roll:.4f}, pitch={pitch:.4f}"
        )


def mix(u: np.ndarray, params: QuadrotorParams) -> BodyWrench:
    """Map per-motor thrusts to total thrust and body torques (linear)."""
    u = np.asarray(u, dtype=float)
    return BodyWrench(f_total=float(u.sum()), tau=params.mix_matrix() @ u)


def ground_effect_multiplier(z_r, params: QuadrotorParams):
    """Thrust multiplier k_GE >= 1 near a surface.

    k = 1 / (1 - (r / (4 (z_r + eps)))^2), clamped to [1, k_ge_max]. The
    clamp engages where the raw expression exceeds k_ge_max (including the
    region past the pole, where it is negative). Accepts scalars or arrays.
    """
    z = np.maximum(np.asarray(z_r, dtype=float), 0.0)
    s2 = (params.r_rotor / (4.0 * (z + params.eps_ge))) ** 2
    s2_clamp = 1.0 - 1.0 / params.k_ge_max
    with np.errstate(divide="ignore"):
        raw = 1.0 / (1.0 - s2)
    k = np.where(s2 >= s2_clamp, params.k_ge_max, raw)
    if np.ndim(z_r) == 0:
        return float(k)
    return k


def ground_effect_gradient(z_r, params: QuadrotorParams):
    """d k_GE / d z_r. Zero inside the clamped region and below the surface."""
    z = np.asarray(z_r, dtype=float)
    zp = np.maximum(z, 0.0) + params.eps_ge
    s2 = (params.r_rotor / (4.0 * zp)) ** 2
    s2_clamp = 1.0 - 1.0 / params.k_ge_max
    with np.errstate(divide="ignore"):
        k = 1.0 / (1.0 - s2)
    grad = np.where(
        (s2 >= s2_clamp) | (z < 0.0),
        0.0,
        -2.0 * s2 * k * k / zp,
    )
    if np.ndim(z_r) == 0:
        return float(grad)
    return grad


def thrust_direction(att: np.ndarray) -> np.ndarray:
    """World-frame direction of the body-z thrust axis for ZYX Euler angles."""
    roll, pitch, yaw = att
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr])


def derivative(x: np.ndarray, u: np.ndarray, params: QuadrotorParams,
               z_surface: float = 0.0) -> np.ndarray:
    """Continuous-time state derivative.

    Vertical thrust is scaled by the ground-effect multiplier evaluated at
    the height above z_surface (the landing surface directly beneath the
    vehicle). Raises SimulationFault near the Euler singularity.
    """
    x = np.asarray(x, dtype=float)
    check_state(x)
    out = derivative_batch(x[None, :], np.asarray(u, dtype=float)[None, :],
                           params, z_surface)[0]
    return out


def derivative_batch(X: np.ndarray, U: np.ndarray, params: QuadrotorParams,
                     z_surface: float = 0.0) -> np.ndarray:
    """Vectorized derivative for stacked states (n,12) and controls (n,4)."""
    roll, pitch, yaw = X[:, 6], X[:, 7], X[:, 8]
    wx, wy, wz = X[:, 9], X[:, 10], X[:, 11]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    tp = sp / cp

    f_total = U.sum(axis=1)
    tau = U @ params.mix_matrix().T

    z_r = X[:, 2] - z_surface
    k_ge = ground_effect_multiplier(z_r, params)
    k_ge = np.atleast_1d(k_ge)
    thrust = f_total * k_ge / params.m

    dX = np.empty_like(X)
    dX[:, 0:3] = X[:, 3:6]
    dX[:, 3] = thrust * (cy * sp * cr + sy * sr)
    dX[:, 4] = thrust * (sy * sp * cr - cy * sr)
    dX[:, 5] = thrust * (cp * cr) - params.g
    # Euler-rate kinematics [1, sr*tp, cr*tp; 0, cr, -sr; 0, sr/cp, cr/cp] @ w
    dX[:, 6] = wx + sr * tp * wy + cr * tp * wz
    dX[:, 7] = cr * wy - sr * wz
    dX[:, 8] = (sr * wy + cr * wz) / cp
    J1, J2, J3 = params.J
    dX[:, 9] = (tau[:, 0] - (J3 - J2) * wy * wz) / J1
    dX[:, 10] = (tau[:, 1] - (J1 - J3) * wx * wz) / J2
    dX[:, 11] = (tau[:, 2] - (J2 - J1) * wx * wy) / J3
    return dX


def dynamics_jacobians_batch(X: np.ndarray, U: np.ndarray, params: QuadrotorParams,
                             z_surface: float = 0.0):
    """Analytic Jacobians of derivative_batch.

    Returns (A, B) with A (n,12,12) = df/dx and B (n,12,4) = df/du. The
    ground-effect clamp contributes a zero derivative where active.
    """
    return derivative_and_jacobians_batch(X, U, params, z_surface)[1:]


def derivative_and_jacobians_batch(X: np.ndarray, U: np.ndarray,
                                   params: QuadrotorParams,
                                   z_surface: float = 0.0):
    """derivative_batch and dynamics_jacobians_batch in one pass, sharing
    the trigonometry; the solver's gradient assembly calls this every
    iteration, so the duplication is worth avoiding."""
    n = X.shape[0]
    roll, pitch, yaw = X[:, 6], X[:, 7], X[:, 8]
    wx, wy, wz = X[:, 9], X[:, 10], X[:, 11]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    tp = sp / cp
    sec2 = 1.0 / (cp * cp)

    f_total = U.sum(axis=1)
    tau = U @ params.mix_matrix().T
    z_r = X[:, 2] - z_surface
    k_ge = np.atleast_1d(ground_effect_multiplier(z_r, params))
    dk_dz = np.atleast_1d(ground_effect_gradient(z_r, params))
    m = params.m
    J1, J2, J3 = params.J

    ex = cy * sp * cr + sy * sr
    ey = sy * sp * cr - cy * sr
    ez = cp * cr
    thrust = f_total * k_ge / m

    dX = np.empty_like(X)
    dX[:, 0:3] = X[:, 3:6]
    dX[:, 3] = thrust * ex
    dX[:, 4] = thrust * ey
    dX[:, 5] = thrust * ez - params.g
    dX[:, 6] = wx + sr * tp * wy + cr * tp * wz
    dX[:, 7] = cr * wy - sr * wz
    dX[:, 8] = (sr * wy + cr * wz) / cp
    dX[:, 9] = (tau[:, 0] - (J3 - J2) * wy * wz) / J1
    dX[:, 10] = (tau[:, 1] - (J1 - J3) * wx * wz) / J2
    dX[:, 11] = (tau[:, 2] - (J2 - J1) * wx * wy) / J3

    A = np.zeros((n, 12, 12))
    A[:, 0, 3] = A[:, 1, 4] = A[:, 2, 5] = 1.0
    fg = f_total * dk_dz / m
    A[:, 3, 2] = fg * ex
    A[:, 4, 2] = fg * ey
    A[:, 5, 2] = fg * ez
    A[:, 3, 6] = thrust * (-cy * sp * sr + sy * cr)
    A[:, 4, 6] = thrust * (-sy * sp * sr - cy * cr)
    A[:, 5, 6] = thrust * (-cp * sr)
    A[:, 3, 7] = thrust * (cy * cp * cr)
    A[:, 4, 7] = thrust * (sy * cp * cr)
    A[:, 5, 7] = thrust * (-sp * cr)
    A[:, 3, 8] = thrust * (-sy * sp * cr + cy * sr)
    A[:, 4, 8] = thrust * (cy * sp * cr + sy * sr)
    A[:, 6, 6] = cr * tp * wy - sr * tp * wz
    A[:, 6, 7] = (sr * wy + cr * wz) * sec2
    A[:, 6, 9] = 1.0
    A[:, 6, 10] = sr * tp
    A[:, 6, 11] = cr * tp
    A[:, 7, 6] = -sr * wy - cr * wz
    A[:, 7, 10] = cr
    A[:, 7, 11] = -sr
    A[:, 8, 6] = (cr * wy - sr * wz) / cp
    A[:, 8, 7] = (sr * wy + cr * wz) * sp * sec2
    A[:, 8, 10] = sr / cp
    A[:, 8, 11] = cr / cp
    A[:, 9, 10] = -(J3 - J2) * wz / J1
    A[:, 9, 11] = -(J3 - J2) * wy / J1
    A[:, 10, 9] = -(J1 - J3) * wz / J2
    A[:, 10, 11] = -(J1 - J3) * wx / J2
    A[:, 11, 9] = -(J2 - J1) * wy / J3
    A[:, 11, 10] = -(J2 - J1) * wx / J3

    B = np.zeros((n, 12, 4))
    ke_m = k_ge / m
    B[:, 3, :] = (ke_m * ex)[:, None]
    B[:, 4, :] = (ke_m * ey)[:, None]
    B[:, 5, :] = (ke_m * ez)[:, None]
    B[:, 9:12, :] = (params.mix_matrix() / params.J[:, None])[None, :, :]
    return dX, A, B


def euler_step(x: np.ndarray, u: np.ndarray, dt: float, params: QuadrotorParams,
               z_surface: float = 0.0) -> np.ndarray:
    """Single explicit Euler step; the prediction model's discretization."""
    return np.asarray(x, dtype=float) + dt * derivative(x, u, params, z_surface)


def euler_step_batch(X: np.ndarray, U: np.ndarray, dt: float,
                     params: QuadrotorParams, z_surface: float = 0.0) -> np.ndarray:
    return X + dt * derivative_batch(X, U, params, z_surface)


def rk4_step(x: np.ndarray, u: np.ndarray, dt: float, params: QuadrotorParams,
             z_surface: float = 0.0) -> np.ndarray:
    """Classical fourth-order step; used for the simulation plant."""
    x = np.asarray(x, dtype=float)
    k1 = derivative(x, u, params, z_surface)
    k2 = derivative(x + 0.5 * dt * k1, u, params, z_surface)
    k3 = derivative(x + 0.5 * dt * k2, u, params, z_surface)
    k4 = derivative(x + dt * k3, u, params, z_surface)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
