"""FISTA with early stopping and block-coordinate reconstruction.

Models
------
FW        image prior only, frames independent
DT        image prior + Huber on the temporal derivative (velocity frozen at 0)
OF        joint image/velocity estimation by alternating FISTA sub-solves
CHEAT_OF  like DT but with the velocity frozen at a supplied ground truth
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffops, mri, objective
from .objective import ModelParams


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SolverParams:
    sigma: float = 0.0
    n_outer: int = 200
    n_rho: int = 1400
    n_v: int = 3200
    delta: float = 1e-5
    init: str = "zero"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        for name in ("n_outer", "n_rho", "n_v"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.init not in ("zero", "adjoint"):
            raise ValueError(f"unknown init {self.init!r}")


class ModelKind(enum.Enum):
    FW = "fw"
    DT = "dt"
    OF = "of"
    CHEAT_OF = "cheat-of"


def _rel_change(new, old):
    """``||new - old|| / ||old||``; 0 if both vanish, inf if only the denominator does."""
    num = float(np.linalg.norm(new - old))
    den = float(np.linalg.norm(old))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def momentum_next(t):
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))


def fista(f_grad, L, x_init, n, delta, callback=None):
    """Accelerated gradient descent on a smooth function with early stopping.

    Parameters
    ----------
    f_grad : callable
        Gradient oracle ``x -> grad f(x)``.
    L : float
        Lipschitz constant of the gradient; the step is ``1 / L``.
    x_init : ndarray
        Starting point.
    n : int
        Maximum number of iterations.
    delta : float
        Stop once ``||x^j - x^(j-1)|| / ||x^(j-1)|| < delta``.
    callback : callable, optional
        Called as ``callback(j, x, t)`` after every iteration.

    Returns
    -------
    x : ndarray
        Last iterate.
    iters : int
        Iterations performed.
    """
    if not L > 0:
        raise ValueError(f"Lipschitz constant must be positive, got {L}")
    if n < 1:
        raise ValueError("n must be ≥ 1")
    x_prev = np.array(x_init, copy=True)
    x_hat = x_prev
    t = 1.0
    step = 1.0 / L
    j = 0
    x = x_prev
    for j in range(1, n + 1):
        g = f_grad(x_hat)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"divergence: non-finite gradient at iteration {j}")
        x = x_hat - step * g
        t_next = momentum_next(t)
        assert t_next > t >= 1.0
        x_hat = x + ((t - 1.0) / t_next) * (x - x_prev)
        if callback is not None:
            callback(j, x, t)
        done = _rel_change(x, x_prev) < delta
        t = t_next
        x_prev = x
        if done:
            break
    return x, j


@dataclass
class TraceRow:
    outer_iter: int
    subproblem: str
    inner_iters: int
    F_start: float
    F_value: float
    grad_norm: float
    rel_change: float
    lipschitz: float


@dataclass
class Trace:
    rows: list = field(default_factory=list)

    CSV_COLUMNS = ("outer_iter", "subproblem", "inner_iters", "F_value", "grad_norm", "rel_change")

    def append(self, row: TraceRow):
        self.rows.append(row)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        """Write CSV to a path or an open text stream."""
        if hasattr(path, "write"):
            self._write(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.outer_iter, r.subproblem, r.inner_iters,
                        repr(r.F_value), repr(r.grad_norm), repr(r.rel_change)])


def effective_params(model: ModelKind, mp: ModelParams) -> ModelParams:
    """Parameters actually used for the image sub-problem of each model."""
    if model is ModelKind.FW:
        return mp.replace(alpha2=0.0, alpha3=0.0)
    if model in (ModelKind.DT, ModelKind.CHEAT_OF):
        return mp.replace(alpha2=0.0)
    return mp


def _solve_rho(y, system, v, mp, sp, rho0, data_lambda, ahy, outer, trace):
    L = objective.lipschitz_rho(system, v, mp, data_lambda=data_lambda)
    grad = objective.rho_gradient_oracle(y, system, v, mp, ahy=ahy)
    F0 = objective.objective_value(rho0, v, y, system, mp)
    rho, iters = fista(grad, L, rho0, sp.n_rho, sp.delta)
    F1 = objective.objective_value(rho, v, y, system, mp)
    trace.append(TraceRow(outer, "rho", iters, F0, F1, float(np.linalg.norm(grad(rho))),
                          _rel_change(rho, rho0), L))
    return rho


def _solve_v(y, system, rho, mp, sp, v0, outer, trace):
    L = objective.lipschitz_v(rho, mp)
    grad = objective.v_gradient_oracle(rho, mp)
    F0 = objective.objective_value(rho, v0, y, system, mp)
    v, iters = fista(grad, L, v0, sp.n_v, sp.delta)
    F1 = objective.objective_value(rho, v, y, system, mp)
    gn = float(np.linalg.norm(grad(v)))
    trace.append(TraceRow(outer, "v", iters, F0, F1, gn, _rel_change(v, v0), L))
    return v


def reconstruct(y, system, model, mp: ModelParams, sp: SolverParams, v_gt=None):
    """Reconstruct an image sequence (and velocities for OF).

    Parameters
    ----------
    y : ndarray or KSpaceData
        Zero-filled samples, shape ``(Nt, Nc, Nx, Ny)``.
    system : MriSystem
    model : ModelKind or str
    mp, sp : ModelParams, SolverParams
    v_gt : ndarray, optional
        Velocity of shape ``(2, Nt, Nx, Ny)``; required for CHEAT_OF.

    Returns
    -------
    rho : ndarray
    v : ndarray
        Estimated (OF) or frozen velocity.
    trace : Trace
    """
    model = ModelKind(model)
    y = np.asarray(getattr(y, "samples", y))
    system.check_kspace(y)
    shape = system.image_shape
    if model is ModelKind.CHEAT_OF:
        if v_gt is None:
            raise ValueError("CHEAT_OF requires ground-truth velocities")
        v_gt = np.asarray(v_gt, dtype=np.complex128)
        if v_gt.shape != (2,) + shape:
            raise ValueError(f"velocity shape {v_gt.shape} does not match {(2,) + shape}")

    trace = Trace()
    data_lambda = objective.data_norm_sq(system)
    ahy = mri.adjoint(system, y)
    if sp.init == "adjoint":
        rho = mri.adjoint(system, y)
    else:
        rho = np.zeros(shape, dtype=np.complex128)

    if model is not ModelKind.OF:
        v = v_gt if model is ModelKind.CHEAT_OF else np.zeros((2,) + shape, dtype=np.complex128)
        pm = effective_params(model, mp)
        rho = _solve_rho(y, system, v, pm, sp, rho, data_lambda, ahy, 1, trace)
        return rho, v, trace

    v = np.zeros((2,) + shape, dtype=np.complex128)
    rho_hat, v_hat = rho, v
    for i in range(1, sp.n_outer + 1):
        s = sp.sigma / i
        rho_new = _solve_rho(y, system, v_hat, mp, sp, rho_hat, data_lambda, ahy, i, trace)
        rho_hat = diffops.gaussian_smooth(rho_new, s)
        v_new = _solve_v(y, system, rho_hat, mp, sp, v_hat, i, trace)
        v_hat = diffops.gaussian_smooth(v_new, s)
        change = 0.5 * _rel_change(v_new, v) + 0.5 * _rel_change(rho_new, rho)
        rho, v = rho_new, v_new
        if change < sp.delta:
            break
    return rho, v, trace
