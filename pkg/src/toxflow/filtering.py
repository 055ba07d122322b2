"""Kalman-Bucy filtering of the unobserved flow toxicity.

The joint state (theta, X) is conditionally Gaussian given the observed flow,
so the error covariance Sigma solves a deterministic matrix Riccati ODE and
the conditional means follow linear innovation updates.  Sigma is solved once
per spec and shared across all Monte Carlo paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, NumericalError, TimeGrid, ValidationError

PSD_EIG_FLOOR = -1e-10

_E1 = np.array([1.0, 0.0])


def _riccati_rhs(spec: ModelSpec, t: float, sigma_mat: np.ndarray) -> np.ndarray:
    """Right-hand side of dSigma/dt for the (theta, X) error covariance."""
    a = spec.a(t)
    c = spec.c(t)
    d = spec.d(t)
    s = spec.sigma
    # F = A - sigma^{-1} C e1^T with A = [[a,0],[1,0]], C = (c, sigma)^T
    F = np.array([[a - c / s, 0.0], [0.0, 0.0]])
    DDt = np.array([[d * d, 0.0], [0.0, 0.0]])
    quad = sigma_mat @ np.outer(_E1, _E1) @ sigma_mat / (s * s)
    return F @ sigma_mat + sigma_mat @ F.T - quad + DDt


@dataclass(frozen=True)
class RiccatiSolution:
    """Filter error covariance on the grid plus derived innovation loadings.

    Attributes
    ----------
    grid : TimeGrid
    Sigma : ndarray, shape (n_steps + 1, 2, 2)
        Symmetric PSD error covariance at each node, Sigma[0] = 0.
    kappa1, kappa2 : ndarray
        Filter gains (Sigma e1)^T / sigma^2.
    load_theta, load_x : ndarray
        Innovation loadings kappa1 + c/sigma and kappa2 + 1: the dV
        coefficients in the theta_hat and X_hat updates.
    """

    grid: TimeGrid
    Sigma: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    load_theta: np.ndarray
    load_x: np.ndarray


def solve_riccati(spec: ModelSpec, grid: TimeGrid) -> RiccatiSolution:
    """Integrate the covariance ODE with classical RK4 from Sigma_0 = 0.

    The iterate is symmetrized after every step; a PSD check (eigenvalues
    above -1e-10) guards against an under-resolved grid.
    """
    n = grid.n_steps
    dt = grid.dt
    t = grid.t
    Sigma = np.zeros((n + 1, 2, 2))
    cur = np.zeros((2, 2))
    for k in range(n):
        tk = t[k]
        k1 = _riccati_rhs(spec, tk, cur)
        k2 = _riccati_rhs(spec, tk + 0.5 * dt, cur + 0.5 * dt * k1)
        k3 = _riccati_rhs(spec, tk + 0.5 * dt, cur + 0.5 * dt * k2)
        k4 = _riccati_rhs(spec, tk + dt, cur + dt * k3)
        cur = cur + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        cur = 0.5 * (cur + cur.T)
        Sigma[k + 1] = cur

    if not np.all(np.isfinite(Sigma)):
        raise NumericalError("Riccati integration produced non-finite covariance")
    eigs = np.linalg.eigvalsh(Sigma)
    if eigs.min() < PSD_EIG_FLOOR:
        raise NumericalError(
            f"Riccati solution lost positive semi-definiteness "
            f"(min eigenvalue {eigs.min():.3e}); refine the grid"
        )

    s2 = spec.sigma * spec.sigma
    kappa1 = Sigma[:, 0, 0] / s2
    kappa2 = Sigma[:, 0, 1] / s2
    load_theta = kappa1 + spec.c(t) / spec.sigma
    load_x = kappa2 + 1.0
    return RiccatiSolution(
        grid=grid, Sigma=Sigma,
        kappa1=kappa1, kappa2=kappa2,
        load_theta=load_theta, load_x=load_x,
    )


def innovation_loadings(ric: RiccatiSolution, spec: ModelSpec, t: float) -> tuple[float, float]:
    """dV loadings (kappa1 + c/sigma, kappa2 + 1) of (theta_hat, X_hat) at a node."""
    k = ric.grid.index_of(t)
    return float(ric.load_theta[k]), float(ric.load_x[k])


@dataclass
class FilterState:
    """Conditional means and the running innovation along one path."""

    t: float
    theta_hat: float
    x_hat: float
    v: float = 0.0


def initial_filter_state(spec: ModelSpec) -> FilterState:
    """Start of day: theta_hat = theta0, x_hat = inventory plus outstanding inflow."""
    ini = spec.initial
    return FilterState(t=0.0, theta_hat=ini.theta0, x_hat=ini.x + ini.z, v=0.0)


def filter_step(
    st: FilterState,
    dZ: float,
    q: float,
    spec: ModelSpec,
    ric: RiccatiSolution,
    dt: float,
) -> FilterState:
    """One explicit Euler-Maruyama update of the conditional means.

    dV = dZ - theta_hat dt, then theta_hat gains (a theta_hat + b q) dt plus
    its innovation loading times dV, and x_hat gains (theta_hat + q) dt plus
    its loading times dV (left-endpoint theta_hat in both).
    """
    if not all(np.isfinite(v) for v in (dZ, q, st.theta_hat, st.x_hat)):
        raise NumericalError("filter_step received non-finite input")
    if abs(dt - ric.grid.dt) > 1e-12 * max(1.0, ric.grid.T):
        raise ValidationError("filter_step dt must equal the grid step")
    k = ric.grid.index_of(st.t)
    if k >= ric.grid.n_steps:
        raise ValidationError("filter_step would leave the grid")
    lt = ric.load_theta[k]
    lx = ric.load_x[k]
    dV = dZ - st.theta_hat * dt
    theta_new = st.theta_hat + (spec.a(st.t) * st.theta_hat + spec.b(st.t) * q) * dt + lt * dV
    x_new = st.x_hat + (st.theta_hat + q) * dt + lx * dV
    return FilterState(t=st.t + dt, theta_hat=theta_new, x_hat=x_new, v=st.v + dV)


def write_riccati_csv(ric: RiccatiSolution, path) -> None:
    """Dump the covariance and loadings, one row per grid node."""
    header = "t,Sigma11,Sigma12,Sigma22,load_theta,load_x"
    data = np.column_stack([
        ric.grid.t,
        ric.Sigma[:, 0, 0], ric.Sigma[:, 0, 1], ric.Sigma[:, 1, 1],
        ric.load_theta, ric.load_x,
    ])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
