"""Ground-truth simulators and filter models for the two experiments.

Lorenz attractor: Euler-discretized chaotic system observed in white
noise.  Two presets exist: the "paper" preset (sigma=28, rho=10,
kappa=0, T_s=1) which diverges under Euler within a few steps and is
kept for equation-fidelity tests only, and the "classical" preset
(sigma=10, rho=28, kappa=1, T_s=0.01) used for quantitative runs.

Target tracking: planar target with constant-velocity kinematics plus a
turn-rate-dependent term, observed through received-signal-strength and
bearing measurements from a sensor at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteState, SensorCollocated
from .filtercore import StateSpaceModel


@dataclass(frozen=True)
class SimTruth:
    """Step-indexed truth, turn rates (tracking only) and measurements."""

    states: np.ndarray
    measurements: np.ndarray
    seed: int
    omegas: Optional[np.ndarray] = None


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root tolerating exactly singular covariances."""
    cov = np.asarray(cov, dtype=float)
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# Lorenz attractor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LorenzConfig:
    sigma: float
    rho: float
    beta: float
    t_s: float
    damping: float  # 0 keeps the undamped x2 equation, 1 the classical one
    steps: int
    x0: np.ndarray
    meas_noise_cov: np.ndarray

    def __post_init__(self):
        if self.t_s <= 0 or self.steps < 1:
            raise DimensionMismatch("t_s must be positive and steps >= 1")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "meas_noise_cov", np.asarray(self.meas_noise_cov, dtype=float))


def lorenz_paper_config(steps: int = 50) -> LorenzConfig:
    """Verbatim parameterization; diverges under Euler at T_s = 1."""
    return LorenzConfig(
        sigma=28.0, rho=10.0, beta=8.0 / 3.0, t_s=1.0, damping=0.0,
        steps=steps, x0=np.ones(3), meas_noise_cov=0.001 * np.eye(3),
    )


def lorenz_classical_config(steps: int = 4000) -> LorenzConfig:
    """Classical chaotic regime, stable under Euler at T_s = 0.01."""
    return LorenzConfig(
        sigma=10.0, rho=28.0, beta=8.0 / 3.0, t_s=0.01, damping=1.0,
        steps=steps, x0=np.ones(3), meas_noise_cov=0.001 * np.eye(3),
    )


def lorenz_deriv(x: np.ndarray, cfg: LorenzConfig) -> np.ndarray:
    """Time derivative of the Lorenz system; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            cfg.sigma * (x2 - x1),
            x1 * (cfg.rho - x3) - cfg.damping * x2,
            x1 * x2 - cfg.beta * x3,
        ],
        axis=-1,
    )


def lorenz_transition(cfg: LorenzConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Euler step x + T_s f(x) as a batched pure function."""

    def step(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + cfg.t_s * lorenz_deriv(x, cfg)

    return step


def lorenz_simulate(cfg: LorenzConfig, seed: int) -> SimTruth:
    """Deterministic Euler truth plus seeded measurement noise."""
    rng = np.random.default_rng(seed)
    step = lorenz_transition(cfg)
    states = np.empty((cfg.steps, 3))
    x = cfg.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(cfg.steps):
            x = step(x)
            if not np.all(np.isfinite(x)):
                raise NonFiniteState(f"state diverged at step {k}")
            states[k] = x
    noise = rng.standard_normal((cfg.steps, 3)) @ _psd_sqrt(cfg.meas_noise_cov).T
    return SimTruth(states=states, measurements=states + noise, seed=seed)


def lorenz_true_model(cfg: LorenzConfig, q_x: float = 1e-4) -> StateSpaceModel:
    """Filter model with the true dynamics and identity measurement."""
    return StateSpaceModel(
        state_dim=3,
        meas_dim=3,
        transition=lorenz_transition(cfg),
        measurement=lambda x: np.asarray(x, dtype=float),
        Q=q_x * np.eye(3),
        R=cfg.meas_noise_cov,
    )


# ---------------------------------------------------------------------------
# Target tracking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackingConfig:
    t_s: float = 1.0
    steps: int = 500
    # state ordering (x, xdot, y, ydot): a coordinated turn of radius
    # |v|/omega0 = 20 m centered on the sensor, so measurement quality
    # stays constant over the run
    x0: np.ndarray = field(default_factory=lambda: np.array([20.0, 0.0, 0.0, 1.6]))
    omega0: float = 0.08
    psi0_db: float = 30.0
    path_loss_exponent: float = 2.2
    sensor_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    meas_noise_cov: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.1]))
    u_cov: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(2))
    v_var: float = 1e-6
    # white-acceleration noise input: u enters through [T^2/2, T] per axis
    m_matrix: np.ndarray = field(
        default_factory=lambda: 0.01 * np.array(
            [[0.5, 0.0], [1.0, 0.0], [0.0, 0.5], [0.0, 1.0]]
        )
    )

    def __post_init__(self):
        if self.steps < 1:
            raise DimensionMismatch("steps must be >= 1")
        for name in ("x0", "sensor_pos", "meas_noise_cov", "u_cov", "m_matrix"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.m_matrix.shape[0] != 4 or self.u_cov.shape[0] != self.m_matrix.shape[1]:
            raise DimensionMismatch("m_matrix must map the u noise into the 4-dim state")


def cv_transition_matrix(t_s: float) -> np.ndarray:
    """Constant-velocity transition F."""
    f = np.eye(4)
    f[0, 1] = t_s
    f[2, 3] = t_s
    return f


def _turn_trig(omega: float, t_s: float) -> tuple[float, float, float, float]:
    wt = omega * t_s
    s, c = np.sin(wt), np.cos(wt)
    if abs(omega) < 1e-6:
        # Taylor limits of sin(wT)/w and (1-cos(wT))/w
        s_over_w = t_s
        c_over_w = omega * t_s * t_s / 2.0
    else:
        s_over_w = s / omega
        c_over_w = (1.0 - c) / omega
    return s, c, s_over_w, c_over_w


def ct_matrix(omega: float, t_s: float) -> np.ndarray:
    """Additive turn model F + G(omega).

    The G entries follow the published form verbatim, which makes the
    combined matrix non-norm-preserving (velocities double as omega -> 0);
    see :func:`ct_rotation` for the bounded form used by the simulator.
    """
    s, c, s_over_w, c_over_w = _turn_trig(omega, t_s)
    g = np.array(
        [
            [0.0, s / t_s, 0.0, -c_over_w],
            [0.0, c, 0.0, -s],
            [0.0, c_over_w, 0.0, s_over_w],
            [0.0, s, 0.0, c],
        ]
    )
    return cv_transition_matrix(t_s) + g


def ct_rotation(omega: float, t_s: float) -> np.ndarray:
    """Standard coordinated-turn transition (velocity-norm preserving)."""
    s, c, s_over_w, c_over_w = _turn_trig(omega, t_s)
    return np.array(
        [
            [1.0, s_over_w, 0.0, -c_over_w],
            [0.0, c, 0.0, -s],
            [0.0, c_over_w, 1.0, s_over_w],
            [0.0, s, 0.0, c],
        ]
    )


def rss_bearing_measure(p: np.ndarray, cfg: TrackingConfig) -> np.ndarray:
    """RSS (dBm) and bearing (rad) of a position as seen from the sensor."""
    p = np.asarray(p, dtype=float)
    dx = p[0] - cfg.sensor_pos[0]
    dy = p[1] - cfg.sensor_pos[1]
    r = np.hypot(dx, dy)
    if r < 1e-9:
        raise SensorCollocated("target position coincides with the sensor")
    rss = cfg.psi0_db - 10.0 * cfg.path_loss_exponent * np.log10(r)
    return np.array([rss, np.arctan2(dy, dx)])


def tracking_measurement(cfg: TrackingConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Batched measurement function over the 4-dim kinematic state."""
    p0x, p0y = cfg.sensor_pos
    coef = 10.0 * cfg.path_loss_exponent

    def h(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xx = np.atleast_2d(x)
        dx = xx[:, 0] - p0x
        dy = xx[:, 2] - p0y
        r = np.hypot(dx, dy)
        if np.any(r < 1e-9):
            raise SensorCollocated("target position coincides with the sensor")
        out = np.stack([cfg.psi0_db - coef * np.log10(r), np.arctan2(dy, dx)], axis=1)
        return out[0] if single else out

    return h


def tracking_simulate(cfg: TrackingConfig, seed: int) -> SimTruth:
    """Truth trajectory under the coordinated-turn dynamics, with RSS and
    bearing measurements.  Bit-reproducible from (cfg, seed)."""
    rng = np.random.default_rng(seed)
    u_sqrt = _psd_sqrt(cfg.u_cov)
    us = rng.standard_normal((cfg.steps, cfg.u_cov.shape[0])) @ u_sqrt.T
    vs = np.sqrt(cfg.v_var) * rng.standard_normal(cfg.steps)
    meas_noise = rng.standard_normal((cfg.steps, 2)) @ _psd_sqrt(cfg.meas_noise_cov).T
    h = tracking_measurement(cfg)

    states = np.empty((cfg.steps, 4))
    omegas = np.empty(cfg.steps)
    x = cfg.x0
    omega = cfg.omega0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(cfg.steps):
            x = ct_rotation(omega, cfg.t_s) @ x + cfg.m_matrix @ us[k]
            omega = omega + vs[k]
            if not np.all(np.isfinite(x)):
                raise NonFiniteState(f"state diverged at step {k}")
            states[k] = x
            omegas[k] = omega
    measurements = h(states) + meas_noise
    return SimTruth(states=states, measurements=measurements, seed=seed, omegas=omegas)


def cv_model(
    t_s: float,
    Q: np.ndarray,
    R: np.ndarray,
    measurement: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    residual_wrap: Optional[np.ndarray] = None,
) -> StateSpaceModel:
    """Constant-velocity state-space model, x_k = F x_{k-1}.

    Used both as the physics core of the augmented tracker and as the
    standalone baseline filter.  Default measurement observes the full
    state directly; the tracking experiments pass the RSS/bearing one.
    """
    f = cv_transition_matrix(t_s)
    R = np.asarray(R, dtype=float)

    def transition(x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ f.T

    if measurement is None:
        measurement = lambda x: np.asarray(x, dtype=float)  # noqa: E731
    return StateSpaceModel(
        state_dim=4,
        meas_dim=R.shape[0],
        transition=transition,
        measurement=measurement,
        Q=Q,
        R=R,
        residual_wrap=residual_wrap,
    )


def tracking_physics_model(cfg: TrackingConfig, q_x: float = 0.1) -> StateSpaceModel:
    """CV kinematics with the RSS/bearing measurement and bearing wrap."""
    return cv_model(
        cfg.t_s,
        Q=q_x * np.eye(4),
        R=cfg.meas_noise_cov,
        measurement=tracking_measurement(cfg),
        residual_wrap=np.array([False, True]),
    )


def tracking_initial_covariance() -> np.ndarray:
    """Default initial-estimate covariance (positions 0.1, velocities 0.01)."""
    return np.diag([0.1, 0.01, 0.1, 0.01])
