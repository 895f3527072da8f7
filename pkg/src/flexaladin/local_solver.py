"""Per-agent subproblem solvers and curvature-approximation policies.

Both solver engines delegate two things here: producing a symmetric
positive definite matrix ``B_i`` that stands in for the local Hessian,
and solving the proximal subproblem

    min_x  f(x) + lam' x + 1/2 ||x - y||^2_B

(`lam` becomes ``A' lam`` in the resource-coupled case). All policy
outputs are floored at ``epsilon_spd`` via an eigenvalue clamp so the
coordination systems stay invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, LocalSolveError
from .objectives import ObjectiveFn, QuadraticObjective, as_vector

__all__ = [
    "HessianPolicy",
    "ExactHessian",
    "FixedMatrix",
    "ScalarSchedule",
    "DampedBfgs",
    "BfgsMemory",
    "update_hessian",
    "LocalSolveReport",
    "solve_local_consensus",
    "solve_local_resource",
    "evaluate_gradient_consensus",
    "evaluate_gradient_resource",
]

DEFAULT_EPSILON_SPD = 1e-4


def clamp_spd(H: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and lift eigenvalues below `floor` up to `floor`."""
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    if w[0] >= floor:
        return H
    out = V @ np.diag(np.maximum(w, floor)) @ V.T
    return 0.5 * (out + out.T)


class HessianPolicy:
    """Base policy; subclasses decide how ``B_i`` evolves across iterations."""

    def __init__(self, epsilon_spd: float = DEFAULT_EPSILON_SPD):
        if epsilon_spd <= 0:
            raise ValueError(f"epsilon_spd must be positive, got {epsilon_spd}")
        self.epsilon_spd = float(epsilon_spd)

    def matrix(self, f: ObjectiveFn, x_plus, B_prev, k: int, memory=None) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


class ExactHessian(HessianPolicy):
    """Evaluate the true Hessian at the new iterate, eigenvalue-clamped to SPD.

    The clamp is flagged in `describe()` output because it is a choice,
    not a property of the underlying function.
    """

    def matrix(self, f, x_plus, B_prev, k, memory=None):
        if not f.has_hessian:
            raise CapabilityError(f"exact Hessian policy needs a twice-differentiable f, got {type(f).__name__}")
        return clamp_spd(f.hessian(x_plus), self.epsilon_spd)

    def describe(self):
        return {"policy": "exact", "epsilon_spd": self.epsilon_spd, "indefinite_handling": "eigenvalue clamp"}


class FixedMatrix(HessianPolicy):
    """A constant user-supplied SPD matrix, never updated."""

    def __init__(self, B, epsilon_spd: float = DEFAULT_EPSILON_SPD):
        super().__init__(epsilon_spd)
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[0] != B.shape[1]:
            raise ValueError(f"B must be square, got {B.shape}")
        if not np.allclose(B, B.T, atol=1e-12 * (1.0 + np.abs(B).max())):
            raise ValueError("B must be symmetric")
        w = np.linalg.eigvalsh(0.5 * (B + B.T))
        if w[0] < self.epsilon_spd:
            raise ValueError(
                f"fixed B has smallest eigenvalue {w[0]:.3e} below the SPD floor {self.epsilon_spd:.3e}"
            )
        self.B = 0.5 * (B + B.T)

    def matrix(self, f, x_plus, B_prev, k, memory=None):
        return self.B.copy()

    def describe(self):
        return {"policy": "fixed", "matrix": self.B.tolist(), "epsilon_spd": self.epsilon_spd}


class ScalarSchedule(HessianPolicy):
    """Iteration-indexed scalar matrix ``B^k = beta0 * k**exponent * I``.

    A growing schedule (e.g. exponent 0.5) shrinks the effective step of
    the single-sweep engine variant, which is what its convergence
    condition requires.
    """

    def __init__(self, beta0: float, exponent: float = 0.5, epsilon_spd: float = DEFAULT_EPSILON_SPD):
        super().__init__(epsilon_spd)
        if beta0 <= 0:
            raise ValueError(f"beta0 must be positive, got {beta0}")
        self.beta0 = float(beta0)
        self.exponent = float(exponent)

    def scale(self, k: int) -> float:
        if k < 1:
            raise ValueError(f"schedule index must be >= 1, got {k}")
        return max(self.beta0 * float(k) ** self.exponent, self.epsilon_spd)

    def matrix(self, f, x_plus, B_prev, k, memory=None):
        n = np.atleast_1d(np.asarray(x_plus)).shape[0]
        return self.scale(k) * np.eye(n)

    def describe(self):
        return {
            "policy": "scalar_schedule",
            "beta0": self.beta0,
            "exponent": self.exponent,
            "epsilon_spd": self.epsilon_spd,
        }


@dataclass
class BfgsMemory:
    """Previous iterate and gradient for one agent's quasi-Newton recursion."""

    prev_x: np.ndarray | None = None
    prev_grad: np.ndarray | None = None


class DampedBfgs(HessianPolicy):
    """Powell-damped BFGS update of ``B_i`` from consecutive agent iterates.

    The update is skipped whenever the damped curvature inner product
    drops to <= `curvature_floor`, and the result is eigenvalue-clamped,
    so SPD is preserved unconditionally.
    """

    def __init__(self, B0, epsilon_spd: float = DEFAULT_EPSILON_SPD, curvature_floor: float = 1e-10):
        super().__init__(epsilon_spd)
        self.B0 = FixedMatrix(B0, epsilon_spd).B
        self.curvature_floor = float(curvature_floor)

    def matrix(self, f, x_plus, B_prev, k, memory: BfgsMemory | None = None):
        if not f.has_gradient:
            raise CapabilityError("damped BFGS needs gradients")
        x_plus = np.asarray(x_plus, dtype=float)
        grad = f.gradient(x_plus)
        B = self.B0 if B_prev is None else np.asarray(B_prev, dtype=float)
        if memory is None or memory.prev_x is None:
            updated = B.copy()
        else:
            s = x_plus - memory.prev_x
            yv = grad - memory.prev_grad
            updated = self._update(B, s, yv)
        if memory is not None:
            memory.prev_x = x_plus.copy()
            memory.prev_grad = grad.copy()
        return clamp_spd(updated, self.epsilon_spd)

    def _update(self, B, s, yv):
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs <= 0:
            return B.copy()
        sy = float(s @ yv)
        if sy >= 0.2 * sBs:
            theta = 1.0
        else:
            theta = 0.8 * sBs / (sBs - sy)
        ybar = theta * yv + (1.0 - theta) * Bs
        sybar = float(s @ ybar)
        if sybar <= self.curvature_floor:
            return B.copy()
        return B - np.outer(Bs, Bs) / sBs + np.outer(ybar, ybar) / sybar

    def describe(self):
        return {
            "policy": "damped_bfgs",
            "epsilon_spd": self.epsilon_spd,
            "curvature_floor": self.curvature_floor,
        }


def update_hessian(policy: HessianPolicy, f: ObjectiveFn, x_plus, B_prev, k: int,
                   memory: BfgsMemory | None = None) -> np.ndarray:
    """Produce the next SPD curvature matrix for one agent."""
    return policy.matrix(f, x_plus, B_prev, k, memory)


@dataclass
class LocalSolveReport:
    """Outcome of one agent subproblem solve."""

    x_plus: np.ndarray
    stationarity_residual: float
    newton_iters: int


def _prox_residual(f, x, lam, B, y):
    return f.subgradient(x) + lam + B @ (x - y)


def solve_local_consensus(f: ObjectiveFn, lambda_i, y, B_i, tol: float = 1e-12,
                          max_iters: int = 50) -> LocalSolveReport:
    """Minimize ``f(x) + lam'x + 1/2||x - y||^2_B``.

    Quadratics are solved in closed form; other smooth objectives by a
    damped Newton iteration on the stationarity residual, warm-started
    at the prox center `y`. Nonsmooth objectives are rejected here (the
    single-sweep engine variant handles them without an inner solve).
    """
    lam = as_vector(lambda_i, f.n, "lambda")
    y = as_vector(y, f.n, "y")
    B = np.atleast_2d(np.asarray(B_i, dtype=float))
    if isinstance(f, QuadraticObjective):
        x = np.linalg.solve(f.Q + B, B @ y - lam - f.q)
        resid = float(np.linalg.norm(_prox_residual(f, x, lam, B, y)))
        return LocalSolveReport(x_plus=x, stationarity_residual=resid, newton_iters=0)
    if not f.is_smooth:
        raise CapabilityError(
            f"local proximal solve requires a smooth objective, got {type(f).__name__}"
        )
    x = y.copy()
    r = _prox_residual(f, x, lam, B, y)
    rnorm = float(np.linalg.norm(r))
    for it in range(1, max_iters + 1):
        if rnorm <= tol:
            return LocalSolveReport(x_plus=x, stationarity_residual=rnorm, newton_iters=it - 1)
        J = f.hessian(x) + B
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as e:
            raise LocalSolveError(
                f"singular Newton system in local solve: {e}", best_x=x, residual=rnorm
            ) from e
        t = 1.0
        for _ in range(30):
            cand = x + t * step
            rc = _prox_residual(f, cand, lam, B, y)
            rcnorm = float(np.linalg.norm(rc))
            if rcnorm < rnorm:
                x, r, rnorm = cand, rc, rcnorm
                break
            t *= 0.5
        else:
            raise LocalSolveError(
                "local Newton stalled (no residual decrease)", best_x=x, residual=rnorm
            )
    if rnorm <= tol:
        return LocalSolveReport(x_plus=x, stationarity_residual=rnorm, newton_iters=max_iters)
    raise LocalSolveError(
        f"local Newton did not reach tol={tol} in {max_iters} iterations (residual {rnorm:.3e})",
        best_x=x,
        residual=rnorm,
    )


def solve_local_resource(f: ObjectiveFn, lam, y_i, A_i, B_i, tol: float = 1e-12,
                         max_iters: int = 50) -> LocalSolveReport:
    """Resource-coupled local solve: the dual enters through ``A_i' lam``."""
    A = np.atleast_2d(np.asarray(A_i, dtype=float))
    lam = as_vector(lam, A.shape[0], "lambda")
    return solve_local_consensus(f, A.T @ lam, y_i, B_i, tol=tol, max_iters=max_iters)


def evaluate_gradient_consensus(B_i, y, x_plus, lambda_i) -> np.ndarray:
    """Recover the local (sub)gradient at ``x_plus`` from the prox geometry.

    With `B_i` the matrix used in the preceding local solve, stationarity
    makes ``B(y - x+) - lam`` equal to the gradient of f at ``x+`` up to
    the solve tolerance, without an extra oracle call.
    """
    B = np.atleast_2d(np.asarray(B_i, dtype=float))
    y = as_vector(y, B.shape[0], "y")
    x_plus = as_vector(x_plus, B.shape[0], "x_plus")
    lam = as_vector(lambda_i, B.shape[0], "lambda")
    return B @ (y - x_plus) - lam


def evaluate_gradient_resource(B_i, y_i, x_plus, A_i, lam) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A_i, dtype=float))
    lam = as_vector(lam, A.shape[0], "lambda")
    return evaluate_gradient_consensus(B_i, y_i, x_plus, A.T @ lam)
