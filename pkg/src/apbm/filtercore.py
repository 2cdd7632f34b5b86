"""Cubature-rule Gaussian filtering primitives.

Implements the third-degree spherical-radial cubature rule (2n points,
uniform weights 1/(2n)) and generic predict/update steps for arbitrary
nonlinear state-space models.  All covariance factorizations go through
:func:`cholesky`, which applies an escalating diagonal jitter before
giving up, and innovation solves use Cholesky back-substitution rather
than explicit inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    NonFinite,
    NonFiniteFunctionValue,
    NotPositiveDefinite,
    NotSquare,
    NotSymmetric,
    SingularInnovation,
)

_JITTER_RETRIES = 10


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a filtered state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1:
            raise NotSquare("mean must be a vector")
        if cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise NotSquare(f"cov shape {cov.shape} does not match state dim {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
        if np.max(np.abs(cov - cov.T)) > 1e-8 * scale:
            raise NotSymmetric("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", _as_readonly(mean))
        object.__setattr__(self, "cov", _as_readonly(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class StateSpaceModel:
    """Transition/measurement pair with associated noise covariances.

    ``transition`` and ``measurement`` must be deterministic pure
    functions; noise is added by the filter or the simulator, never
    inside them.  Functions may either map a single state vector to a
    single output vector, or map a ``(k, n)`` batch of states to a
    ``(k, m)`` batch of outputs (the batched form is detected and used
    when available, which is much faster under the cubature rule).

    ``residual_wrap`` optionally flags measurement rows whose residuals
    are angles and must be wrapped into (-pi, pi] before use.
    """

    state_dim: int
    meas_dim: int
    transition: Callable[[np.ndarray], np.ndarray]
    measurement: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    residual_wrap: Optional[np.ndarray] = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        _check_sym_psd(Q, self.state_dim, "Q")
        _check_sym_psd(R, self.meas_dim, "R")
        object.__setattr__(self, "Q", _as_readonly(Q))
        object.__setattr__(self, "R", _as_readonly(R))
        if self.residual_wrap is not None:
            wrap = np.asarray(self.residual_wrap, dtype=bool)
            if wrap.shape != (self.meas_dim,):
                raise NotSquare("residual_wrap must have one flag per measurement row")
            object.__setattr__(self, "residual_wrap", wrap)


@dataclass(frozen=True)
class CubaturePointSet:
    """Deterministic points with uniform weight 1/len(points).

    For a full-rank covariance this is the standard 2n-point set; for a
    belief whose covariance carries exactly-zero rows the points span
    only the support subspace (2*rank points), which keeps the rule
    consistent with the lower-dimensional filter it degenerates to.
    """

    points: np.ndarray  # (2k, n), k <= n
    weight: float = field(default=0.0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[0] % 2 or pts.shape[0] > 2 * pts.shape[1]:
            raise NotSquare("point set must have shape (2k, n) with 1 <= k <= n")
        object.__setattr__(self, "points", _as_readonly(pts))
        object.__setattr__(self, "weight", 1.0 / pts.shape[0])


def _check_sym_psd(a: np.ndarray, n: int, name: str) -> None:
    if a.shape != (n, n):
        raise NotSquare(f"{name} must be {n}x{n}, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T)) > 1e-8 * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    if a.size and np.min(np.linalg.eigvalsh(0.5 * (a + a.T))) < -1e-8 * scale:
        raise NotPositiveDefinite(f"{name} is not positive semidefinite")


def cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular S with S S^T = sigma, retrying with jitter.

    On factorization failure a diagonal jitter eps*I is added, with eps
    starting at 1e-12*trace(sigma)/n and growing tenfold per retry, at
    most 10 retries.  Raises NotPositiveDefinite once jitter is
    exhausted.
    """
    a = np.asarray(sigma, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T)) > 1e-8 * scale:
        raise NotSymmetric("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    base = float(np.trace(a)) / n
    if not base > 0.0:
        base = 1.0  # degenerate (e.g. zero) matrix: fall back to absolute jitter
    eye = np.eye(n)
    eps = 1e-12 * base
    for _ in range(_JITTER_RETRIES):
        try:
            return np.linalg.cholesky(a + eps * eye)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NotPositiveDefinite(
        f"Cholesky failed after {_JITTER_RETRIES} jitter retries (last eps={eps:.3e})"
    )


def cubature_points(belief: GaussianBelief) -> CubaturePointSet:
    """Third-degree cubature points mu +/- sqrt(n_eff) * (columns of S).

    Coordinates whose covariance rows are exactly zero carry no
    uncertainty, so the rule is applied on the support subspace
    (n_eff = number of live coordinates) and the degenerate coordinates
    stay pinned at the mean.  A fully zero covariance falls back to the
    jittered full-dimensional factorization.
    """
    n = belief.dim
    diag = np.diag(belief.cov)
    live = diag != 0.0
    n_eff = int(live.sum())
    if n_eff == n or n_eff == 0 or np.any(belief.cov[~live][:, live] != 0.0):
        s = cholesky(belief.cov)
        spread = np.sqrt(n) * s.T  # row i is sqrt(n) * column i of S
    else:
        s_live = cholesky(belief.cov[np.ix_(live, live)])
        spread = np.zeros((n_eff, n))
        spread[:, live] = np.sqrt(n_eff) * s_live.T
    pts = np.concatenate([belief.mean + spread, belief.mean - spread], axis=0)
    return CubaturePointSet(points=pts)


def batch_apply(func: Callable, points: np.ndarray, out_dim: Optional[int] = None) -> np.ndarray:
    """Evaluate ``func`` on every row of ``points``, batched when possible.

    Tries a single vectorized call first; falls back to a per-row loop
    when the function rejects 2-D input or returns the wrong shape.
    """
    k = points.shape[0]
    try:
        out = np.asarray(func(points), dtype=float)
        if out.ndim == 2 and out.shape[0] == k and (out_dim is None or out.shape[1] == out_dim):
            return out
    except Exception:
        pass
    rows = [np.atleast_1d(np.asarray(func(points[i]), dtype=float)) for i in range(k)]
    return np.asarray(rows, dtype=float)


def propagate(
    func: Callable,
    belief: GaussianBelief,
    out_dim: Optional[int] = None,
    wrap: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian moment propagation of ``func`` through the cubature rule.

    Returns (mean, cov, crosscov) where crosscov is the input-output
    cross-covariance E[(x-mu)(f(x)-mean)^T].  Output coordinates marked
    in ``wrap`` are angles: their point values are recentered around one
    reference point before averaging, so a cluster straddling the +/-pi
    cut does not produce a spurious mean on the far side of the circle.
    """
    pts = cubature_points(belief)
    ys = batch_apply(func, pts.points, out_dim)
    if not np.all(np.isfinite(ys)):
        raise NonFiniteFunctionValue("function returned non-finite values on cubature points")
    if wrap is not None and wrap.any():
        if not ys.flags.writeable:
            ys = ys.copy()
        ref = ys[0, wrap]
        ys[:, wrap] = ref + wrap_angle(ys[:, wrap] - ref)
    w = pts.weight
    mean = ys.mean(axis=0)
    dy = ys - mean
    dx = pts.points - belief.mean
    cov = w * (dy.T @ dy)
    cov = 0.5 * (cov + cov.T)
    crosscov = w * (dx.T @ dy)
    return mean, cov, crosscov


def predict(belief: GaussianBelief, model: StateSpaceModel) -> GaussianBelief:
    """Time update: propagate the belief through the transition, add Q."""
    mean, cov, _ = propagate(model.transition, belief, model.state_dim)
    return GaussianBelief(mean=mean, cov=cov + model.Q)


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    wrapped = np.atleast_1d(-((-np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi))
    return wrapped if np.ndim(a) else float(wrapped[0])


def update(belief: GaussianBelief, model: StateSpaceModel, y: np.ndarray) -> GaussianBelief:
    """Measurement update with Cholesky-based innovation solve."""
    y = np.asarray(y, dtype=float)
    if y.shape != (model.meas_dim,):
        raise NotSquare(f"measurement must have length {model.meas_dim}")
    if not np.all(np.isfinite(y)):
        raise NonFinite("measurement contains non-finite values")
    y_mean, y_cov, crosscov = propagate(
        model.measurement, belief, model.meas_dim, wrap=model.residual_wrap
    )
    pyy = y_cov + model.R
    # Jacobi equilibration: pseudo-measurement rows can sit many orders of
    # magnitude below the physical ones, and an unscaled solve loses the
    # corresponding digits in the gain.
    d = np.sqrt(np.diag(pyy))
    d[~(d > 0.0)] = 1.0
    pyy_scaled = pyy / np.outer(d, d)
    try:
        s = cholesky(pyy_scaled)
    except NotPositiveDefinite as exc:
        raise SingularInnovation(str(exc)) from exc
    resid = y - y_mean
    if model.residual_wrap is not None and model.residual_wrap.any():
        resid[model.residual_wrap] = wrap_angle(resid[model.residual_wrap])
    gain = cho_solve((s, True), (crosscov / d).T).T / d
    mean = belief.mean + gain @ resid
    # K Pyy K^T == Pxy K^T since K = Pxy Pyy^{-1}; the latter avoids
    # squaring the ill-conditioned innovation covariance
    cov = belief.cov - crosscov @ gain.T
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(mean)):
        raise NonFinite("updated mean is non-finite")
    return GaussianBelief(mean=mean, cov=cov)
