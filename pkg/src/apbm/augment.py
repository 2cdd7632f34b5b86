"""Augmented models: physics transition fused with a neural term.

Builds a state-space model over the stacked state z = [x; theta] where
theta follows a random walk and the physical state evolves through a
combiner g(f(x), x; theta).  A pseudo-measurement of theta with noise
covariance (1/lambda) I anchors the parameters to theta_bar; lambda
controls how strongly the neural term is regularized towards the plain
physics model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import mlp
from .errors import DimensionMismatch, NegativeLambda, NoAnchorExists
from .filtercore import GaussianBelief, StateSpaceModel, batch_apply, predict, update

#: lambda = +inf is clamped to this value instead of a constrained update.
LAMBDA_INF_CLAMP = 1e12


@dataclass(frozen=True)
class Additive:
    """g = f(x) + gamma(x; theta); gamma output covers the full state."""


@dataclass(frozen=True)
class ReplaceComponents:
    """Listed components evolve as x_i + gamma_i(x; theta); the rest
    follow the physics transition."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


Combiner = Union[Additive, ReplaceComponents]


@dataclass(frozen=True)
class ApbmConfig:
    """Combiner choice, regularization strength and theta priors."""

    combiner: Combiner
    lam: float
    theta_bar: np.ndarray
    q_theta: np.ndarray
    theta0_mean: np.ndarray
    theta0_cov: np.ndarray

    def __post_init__(self):
        if self.lam < 0:
            raise NegativeLambda(f"lambda must be nonnegative, got {self.lam}")
        for name in ("theta_bar", "q_theta", "theta0_mean", "theta0_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def param_dim(self) -> int:
        return self.theta_bar.size

    @property
    def effective_lambda(self) -> float:
        return LAMBDA_INF_CLAMP if math.isinf(self.lam) else self.lam


def make_config(
    nn: mlp.MlpSpec,
    combiner: Combiner,
    lam: float,
    q_theta_scale: float = 1e-4,
    theta0_cov_scale: float = 1e-2,
    theta_bar: np.ndarray | None = None,
    theta0_mean: np.ndarray | None = None,
) -> ApbmConfig:
    """ApbmConfig with the default isotropic theta priors."""
    p = mlp.param_count(nn)
    if theta_bar is None:
        theta_bar = np.zeros(p)
    if theta0_mean is None:
        theta0_mean = np.asarray(theta_bar, dtype=float).copy()
    return ApbmConfig(
        combiner=combiner,
        lam=lam,
        theta_bar=theta_bar,
        q_theta=q_theta_scale * np.eye(p),
        theta0_mean=theta0_mean,
        theta0_cov=theta0_cov_scale * np.eye(p),
    )


def anchor_theta_bar(combiner: Combiner, nn: mlp.MlpSpec) -> np.ndarray:
    """Parameter vector at which the augmented model reduces to the physics.

    With ReLU hidden layers and a linear output, zero parameters give
    gamma == 0, so the additive combiner is anchored at theta = 0.  No
    such vector exists when components are replaced outright.
    """
    if isinstance(combiner, ReplaceComponents):
        raise NoAnchorExists("replaced components have no parameter vector recovering the physics")
    return np.zeros(mlp.param_count(nn))


def build_augmented_model(
    physics: StateSpaceModel, nn: mlp.MlpSpec, cfg: ApbmConfig
) -> StateSpaceModel:
    """State-space model over z = [x; theta].

    Transition: [x; theta] -> [g(f(x), x; theta); theta] with process
    noise blockdiag(Q_x, Q_theta).  Measurement: [h(x); theta] observed
    against [y_k; theta_bar] with noise blockdiag(R_y, (1/lambda) I).
    When lambda = 0 the pseudo-measurement rows are omitted entirely
    (the exact infinite-variance limit); lambda = +inf is clamped to
    LAMBDA_INF_CLAMP.
    """
    d = physics.state_dim
    m = physics.meas_dim
    p = mlp.param_count(nn)
    if nn.in_dim != d:
        raise DimensionMismatch(f"network input dim {nn.in_dim} != state dim {d}")
    combiner = cfg.combiner
    if isinstance(combiner, Additive):
        if nn.out_dim != d:
            raise DimensionMismatch(f"additive combiner needs output dim {d}, got {nn.out_dim}")
    elif isinstance(combiner, ReplaceComponents):
        idx = np.asarray(combiner.indices, dtype=int)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= d or len(set(combiner.indices)) != idx.size:
            raise DimensionMismatch(f"invalid replaced indices {combiner.indices} for state dim {d}")
        if nn.out_dim != idx.size:
            raise DimensionMismatch(
                f"combiner replaces {idx.size} components but network outputs {nn.out_dim}"
            )
    else:
        raise DimensionMismatch(f"unknown combiner {combiner!r}")
    if cfg.theta_bar.shape != (p,) or cfg.q_theta.shape != (p, p):
        raise DimensionMismatch("theta configuration does not match the network spec")

    lam = cfg.effective_lambda
    with_pseudo = lam > 0.0

    def transition(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zz = np.atleast_2d(z)
        if zz.shape[1] != d + p:
            raise DimensionMismatch(f"augmented state must have length {d + p}")
        x, th = zz[:, :d], zz[:, d:]
        fx = batch_apply(physics.transition, x, d)
        gamma = mlp.forward_batch(nn, th, x)
        if isinstance(combiner, Additive):
            x_next = fx + gamma
        else:
            x_next = fx.copy()
            x_next[:, combiner.indices] = x[:, combiner.indices] + gamma
        out = np.concatenate([x_next, th], axis=1)
        return out[0] if single else out

    def measurement(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zz = np.atleast_2d(z)
        if zz.shape[1] != d + p:
            raise DimensionMismatch(f"augmented state must have length {d + p}")
        hx = batch_apply(physics.measurement, zz[:, :d], m)
        out = np.concatenate([hx, zz[:, d:]], axis=1) if with_pseudo else hx
        return out[0] if single else out

    q_aug = np.zeros((d + p, d + p))
    q_aug[:d, :d] = physics.Q
    q_aug[d:, d:] = cfg.q_theta

    if with_pseudo:
        r_aug = np.zeros((m + p, m + p))
        r_aug[:m, :m] = physics.R
        r_aug[m:, m:] = (1.0 / lam) * np.eye(p)
        meas_dim = m + p
    else:
        r_aug = physics.R
        meas_dim = m

    wrap = None
    if physics.residual_wrap is not None:
        wrap = np.concatenate([physics.residual_wrap, np.zeros(p, dtype=bool)]) if with_pseudo else physics.residual_wrap

    return StateSpaceModel(
        state_dim=d + p,
        meas_dim=meas_dim,
        transition=transition,
        measurement=measurement,
        Q=q_aug,
        R=r_aug,
        residual_wrap=wrap,
    )


def augmented_observation(cfg: ApbmConfig, y: np.ndarray) -> np.ndarray:
    """Observation vector fed to the augmented filter: [y; theta_bar]."""
    y = np.asarray(y, dtype=float)
    if cfg.effective_lambda > 0.0:
        return np.concatenate([y, cfg.theta_bar])
    return y


def initial_belief(cfg: ApbmConfig, x_mean: np.ndarray, x_cov: np.ndarray) -> GaussianBelief:
    """Stack an initial physical-state belief with the theta prior."""
    x_mean = np.asarray(x_mean, dtype=float)
    x_cov = np.asarray(x_cov, dtype=float)
    d = x_mean.size
    p = cfg.param_dim
    mean = np.concatenate([x_mean, cfg.theta0_mean])
    cov = np.zeros((d + p, d + p))
    cov[:d, :d] = x_cov
    cov[d:, d:] = cfg.theta0_cov
    return GaussianBelief(mean=mean, cov=cov)


def apbm_step(
    belief: GaussianBelief, model: StateSpaceModel, y: np.ndarray, cfg: ApbmConfig
) -> GaussianBelief:
    """One predict/update cycle of the augmented filter on measurement y."""
    return update(predict(belief, model), model, augmented_observation(cfg, y))
