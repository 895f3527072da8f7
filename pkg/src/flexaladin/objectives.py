"""Objective families, problem containers, and centralized reference solvers.

Two problem classes are supported:

* consensus problems: ``min sum_i f_i(x_i)`` subject to ``x_i = y`` for a
  shared global variable ``y``;
* resource-allocation problems: ``min sum_i f_i(x_i)`` subject to the
  affine coupling ``sum_i A_i x_i = b``.

The centralized oracles in this module solve small instances to high
accuracy and return ground-truth primal/dual solutions that the solver
engines and the diagnostics layer are tested against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CapabilityError,
    DimensionMismatchError,
    OracleError,
    ProblemFormatError,
)

__all__ = [
    "ObjectiveFn",
    "QuadraticObjective",
    "AbsDeviationObjective",
    "TrigQuadraticObjective",
    "ConsensusProblem",
    "ResourceProblem",
    "ConsensusSolution",
    "ResourceSolution",
    "solve_consensus_oracle",
    "solve_resource_oracle",
    "load_problem",
    "problem_to_dict",
    "problem_digest",
    "random_strongly_convex_quadratic",
    "random_consensus_problem",
    "random_resource_problem",
]


def as_vector(x, n: int, what: str = "x") -> np.ndarray:
    """Coerce `x` to a float vector of length `n`, accepting scalars for n=1."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (n,):
        raise DimensionMismatchError(f"{what} has shape {arr.shape}, expected ({n},)")
    return arr


def as_matrix(a, shape: tuple[int, int], what: str = "A") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.shape != shape:
        raise DimensionMismatchError(f"{what} has shape {arr.shape}, expected {shape}")
    return arr


class ObjectiveFn:
    """A local objective ``f: R^n -> R`` with optional derivative capabilities.

    Attributes
    ----------
    n : int
        Input dimension.
    has_gradient, has_hessian, is_smooth : bool
        Capability flags. When `is_smooth`, `subgradient` coincides with
        `gradient` everywhere.
    """

    n: int
    has_gradient: bool = False
    has_hessian: bool = False
    is_smooth: bool = False

    def value(self, x) -> float:
        raise NotImplementedError

    def subgradient(self, x) -> np.ndarray:
        """Return one element of the subdifferential at `x` (the gradient when smooth)."""
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        if not self.has_gradient:
            raise CapabilityError(f"{type(self).__name__} has no gradient")
        return self.subgradient(x)

    def hessian(self, x) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} has no Hessian")

    def _vec(self, x) -> np.ndarray:
        return as_vector(x, self.n)


class QuadraticObjective(ObjectiveFn):
    """``f(x) = 1/2 x'Qx + q'x + offset`` with symmetric Q.

    The smallest eigenvalue of Q is stored as `mu`; instances with
    ``mu > 0`` are strongly convex with modulus `mu`.
    """

    has_gradient = True
    has_hessian = True
    is_smooth = True

    def __init__(self, Q, q=None, offset: float = 0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatchError(f"Q must be square, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(Q).max())):
            raise ProblemFormatError("Q", "matrix is not symmetric")
        self.n = Q.shape[0]
        self.Q = 0.5 * (Q + Q.T)
        self.q = np.zeros(self.n) if q is None else as_vector(q, self.n, "q")
        self.offset = float(offset)
        self.mu = float(np.linalg.eigvalsh(self.Q)[0])

    @property
    def is_strongly_convex(self) -> bool:
        return self.mu > 0.0

    def value(self, x) -> float:
        x = self._vec(x)
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.offset)

    def subgradient(self, x) -> np.ndarray:
        x = self._vec(x)
        return self.Q @ x + self.q

    def hessian(self, x) -> np.ndarray:
        self._vec(x)
        return self.Q.copy()


class AbsDeviationObjective(ObjectiveFn):
    """``f(x) = ||x - center||_1``, nonsmooth at the kinks.

    Subgradient convention: ``sign(x - center)`` with 0 on each coordinate
    sitting exactly at its kink (the minimum-norm element). Every
    subgradient component lies in [-1, 1].
    """

    def __init__(self, center):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        self.n = c.shape[0]
        self.center = c

    def value(self, x) -> float:
        x = self._vec(x)
        return float(np.abs(x - self.center).sum())

    def subgradient(self, x) -> np.ndarray:
        x = self._vec(x)
        return np.sign(x - self.center)


class TrigQuadraticObjective(ObjectiveFn):
    """Coordinate-wise ``f(x) = sum_j a/2 (x_j - center)^2 + b cos(x_j)``.

    Twice continuously differentiable but non-convex whenever ``b > a``:
    the Hessian diagonal ``a - b cos(x_j)`` can turn negative.
    """

    has_gradient = True
    has_hessian = True
    is_smooth = True

    def __init__(self, a: float, b: float, center: float = 0.0, dimension: int = 1):
        if a <= 0:
            raise ProblemFormatError("a", f"quadratic weight must be positive, got {a}")
        if dimension < 1:
            raise ProblemFormatError("dimension", f"must be >= 1, got {dimension}")
        self.a = float(a)
        self.b = float(b)
        self.center = float(center)
        self.n = int(dimension)

    def value(self, x) -> float:
        x = self._vec(x)
        return float(np.sum(0.5 * self.a * (x - self.center) ** 2 + self.b * np.cos(x)))

    def subgradient(self, x) -> np.ndarray:
        x = self._vec(x)
        return self.a * (x - self.center) - self.b * np.sin(x)

    def hessian(self, x) -> np.ndarray:
        x = self._vec(x)
        return np.diag(self.a - self.b * np.cos(x))


class ConsensusProblem:
    """N agents sharing one n-dimensional decision variable."""

    def __init__(self, objectives: list[ObjectiveFn]):
        if len(objectives) < 1:
            raise ProblemFormatError("objectives", "need at least one agent")
        n = objectives[0].n
        for i, f in enumerate(objectives):
            if f.n != n:
                raise ProblemFormatError(
                    f"objectives[{i}]", f"dimension {f.n} differs from shared dimension {n}"
                )
        self.objectives = list(objectives)
        self.N = len(objectives)
        self.n = n

    def total_value(self, y) -> float:
        return sum(f.value(y) for f in self.objectives)

    def total_subgradient(self, y) -> np.ndarray:
        out = np.zeros(self.n)
        for f in self.objectives:
            out += f.subgradient(y)
        return out


class ResourceProblem:
    """N agents with local variables coupled by ``sum_i A_i x_i = b``.

    The stacked coupling matrix ``[A_1 ... A_N]`` must have full row rank;
    this is what makes the coordination step's dual system invertible.
    """

    def __init__(self, objectives: list[ObjectiveFn], coupling: list, resource):
        if len(objectives) < 1:
            raise ProblemFormatError("objectives", "need at least one agent")
        if len(coupling) != len(objectives):
            raise ProblemFormatError(
                "coupling", f"{len(coupling)} matrices for {len(objectives)} objectives"
            )
        b = np.atleast_1d(np.asarray(resource, dtype=float))
        m = b.shape[0]
        A = []
        for i, (f, Ai) in enumerate(zip(objectives, coupling)):
            Ai = np.atleast_2d(np.asarray(Ai, dtype=float))
            if Ai.shape != (m, f.n):
                raise ProblemFormatError(
                    f"coupling[{i}]", f"shape {Ai.shape} incompatible with m={m}, n_i={f.n}"
                )
            A.append(Ai)
        stacked = np.hstack(A)
        if np.linalg.matrix_rank(stacked) < m:
            raise ProblemFormatError("coupling", f"stacked matrix has rank < m={m}")
        self.objectives = list(objectives)
        self.coupling = A
        self.resource = b
        self.N = len(objectives)
        self.m = m
        self.dims = [f.n for f in objectives]

    def coupling_residual(self, xs: list[np.ndarray]) -> np.ndarray:
        out = -self.resource.copy()
        for Ai, xi in zip(self.coupling, xs):
            out += Ai @ xi
        return out


@dataclass
class ConsensusSolution:
    """Optimal point of a consensus problem with per-agent dual variables.

    The duals satisfy ``sum_i lambda_i = 0`` exactly and
    ``lambda_i = -subgradient(f_i, y_star)`` up to re-centering.
    """

    y_star: np.ndarray
    lambda_star: list[np.ndarray]
    f_star: float


@dataclass
class ResourceSolution:
    """Optimal point of a resource problem with the coupling-constraint dual."""

    x_star: list[np.ndarray]
    lambda_star: np.ndarray
    f_star: float


def _newton_minimize(problem: ConsensusProblem, y0: np.ndarray, tol: float, max_iter: int = 100):
    """Damped Newton on the stationarity condition of the summed objective."""
    y = y0.copy()
    for _ in range(max_iter):
        r = problem.total_subgradient(y)
        if np.linalg.norm(r) <= tol:
            return y
        H = np.zeros((problem.n, problem.n))
        for f in problem.objectives:
            H += f.hessian(y)
        try:
            step = np.linalg.solve(H, -r)
        except np.linalg.LinAlgError as e:
            raise OracleError(f"singular Hessian in centralized Newton: {e}") from e
        t = 1.0
        base = np.linalg.norm(r)
        for _ in range(40):
            cand = y + t * step
            if np.linalg.norm(problem.total_subgradient(cand)) < base:
                y = cand
                break
            t *= 0.5
        else:
            raise OracleError("centralized Newton stalled (no descent in line search)")
    raise OracleError(f"centralized Newton did not reach tolerance {tol} in {max_iter} iterations")


def _bisect_minimize(problem: ConsensusProblem, bracket: tuple[float, float], tol: float):
    """Scalar bisection on the derivative sign change inside `bracket`, Newton-polished."""
    if problem.n != 1:
        raise OracleError("bracketed oracle solves are scalar-only")
    lo, hi = float(bracket[0]), float(bracket[1])
    glo = float(problem.total_subgradient(np.array([lo]))[0])
    ghi = float(problem.total_subgradient(np.array([hi]))[0])
    if glo == 0.0:
        y = lo
    elif ghi == 0.0:
        y = hi
    elif glo * ghi > 0:
        raise OracleError(f"bracket [{lo}, {hi}] does not straddle a stationary point")
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gmid = float(problem.total_subgradient(np.array([mid]))[0])
            if gmid == 0.0 or hi - lo <= tol:
                break
            if glo * gmid < 0:
                hi = mid
            else:
                lo, glo = mid, gmid
        y = 0.5 * (lo + hi)
    yv = np.array([y])
    # Newton polish; non-increasing |derivative| guard keeps us inside the basin.
    for _ in range(50):
        g = problem.total_subgradient(yv)
        if abs(g[0]) <= tol:
            break
        h = sum(float(f.hessian(yv)[0, 0]) for f in problem.objectives)
        if h <= 0:
            break
        cand = yv - g / h
        if abs(problem.total_subgradient(cand)[0]) >= abs(g[0]):
            break
        yv = cand
    h = sum(float(f.hessian(yv)[0, 0]) for f in problem.objectives)
    if h <= 0:
        raise OracleError("bracketed stationary point is not a local minimum (curvature <= 0)")
    return yv


def solve_consensus_oracle(
    problem: ConsensusProblem,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-12,
) -> ConsensusSolution:
    """Compute the optimal ``(y*, lambda*)`` of a consensus problem centrally.

    Strategy by family mix: quadratic sums are solved in closed form;
    smooth sums by damped Newton (or scalar bisection inside `bracket`
    for non-convex instances); pure absolute-deviation sums by the
    coordinate-wise median. The duals are set to
    ``-subgradient(f_i, y*)`` and re-centered so they sum to zero
    exactly.
    """
    fs = problem.objectives
    if all(isinstance(f, QuadraticObjective) for f in fs):
        Q = sum(f.Q for f in fs)
        q = sum(f.q for f in fs)
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise OracleError("summed quadratic is not strongly convex")
        y = np.linalg.solve(Q, -q)
    elif all(f.is_smooth and f.has_hessian for f in fs):
        if bracket is not None:
            y = _bisect_minimize(problem, bracket, tol)
        else:
            y = _newton_minimize(problem, np.zeros(problem.n), tol)
    elif all(isinstance(f, AbsDeviationObjective) for f in fs):
        centers = np.stack([f.center for f in fs])
        y = np.median(centers, axis=0)
    else:
        raise OracleError("unsupported objective mix for the consensus oracle")

    resid = np.linalg.norm(problem.total_subgradient(y))
    if resid > 1e-8:
        raise OracleError(f"oracle stationarity residual {resid:.3e} exceeds 1e-8")
    lambdas = [-f.subgradient(y) for f in fs]
    mean = sum(lambdas) / problem.N
    lambdas = [lam - mean for lam in lambdas]
    return ConsensusSolution(y_star=y, lambda_star=lambdas, f_star=problem.total_value(y))


def solve_resource_oracle(problem: ResourceProblem, tol: float = 1e-10) -> ResourceSolution:
    """Solve a quadratic resource problem via its KKT linear system.

    Assembles ``[blockdiag(Q_i), A'; A, 0] (x, lambda) = (-q, b)`` and
    factorizes it directly. Only the quadratic family is supported.
    """
    for i, f in enumerate(problem.objectives):
        if not isinstance(f, QuadraticObjective):
            raise CapabilityError(
                f"resource oracle supports quadratic objectives only (agent {i})"
            )
        if f.mu <= 0:
            raise OracleError(f"agent {i} quadratic is not positive definite")
    ntot = sum(problem.dims)
    m = problem.m
    K = np.zeros((ntot + m, ntot + m))
    rhs = np.zeros(ntot + m)
    off = 0
    for f, Ai in zip(problem.objectives, problem.coupling):
        sl = slice(off, off + f.n)
        K[sl, sl] = f.Q
        K[sl, ntot:] = Ai.T
        K[ntot:, sl] = Ai
        rhs[sl] = -f.q
        off += f.n
    rhs[ntot:] = problem.resource
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as e:
        raise OracleError(f"singular KKT matrix: {e}") from e
    if np.linalg.norm(K @ sol - rhs) > 1e-8 * (1.0 + np.linalg.norm(rhs)):
        raise OracleError("KKT solve is inaccurate (near-singular system)")
    xs = []
    off = 0
    for ni in problem.dims:
        xs.append(sol[off : off + ni])
        off += ni
    lam = sol[ntot:]
    feas = np.linalg.norm(problem.coupling_residual(xs))
    if feas > tol:
        raise OracleError(f"oracle feasibility residual {feas:.3e} exceeds {tol}")
    f_star = sum(f.value(x) for f, x in zip(problem.objectives, xs))
    return ResourceSolution(x_star=xs, lambda_star=lam, f_star=f_star)


# ---------------------------------------------------------------------------
# Problem files


_FAMILY_TAGS = {
    QuadraticObjective: "quadratic",
    AbsDeviationObjective: "abs_deviation",
    TrigQuadraticObjective: "trig_quadratic",
}


def _objective_from_dict(d: dict, field: str) -> ObjectiveFn:
    if not isinstance(d, dict) or "family" not in d:
        raise ProblemFormatError(field, "expected an object with a 'family' key")
    family = d["family"]
    try:
        if family == "quadratic":
            return QuadraticObjective(d["Q"], d.get("q"), d.get("offset", 0.0))
        if family == "abs_deviation":
            return AbsDeviationObjective(d["center"])
        if family == "trig_quadratic":
            return TrigQuadraticObjective(
                d["a"], d["b"], d.get("center", 0.0), d.get("dimension", 1)
            )
    except KeyError as e:
        raise ProblemFormatError(f"{field}.{e.args[0]}", "missing required parameter") from e
    except (DimensionMismatchError, ProblemFormatError) as e:
        raise ProblemFormatError(field, str(e)) from e
    raise ProblemFormatError(f"{field}.family", f"unknown family {family!r}")


def _objective_to_dict(f: ObjectiveFn) -> dict:
    if isinstance(f, QuadraticObjective):
        return {
            "family": "quadratic",
            "Q": f.Q.tolist(),
            "q": f.q.tolist(),
            "offset": f.offset,
        }
    if isinstance(f, AbsDeviationObjective):
        return {"family": "abs_deviation", "center": f.center.tolist()}
    if isinstance(f, TrigQuadraticObjective):
        return {
            "family": "trig_quadratic",
            "a": f.a,
            "b": f.b,
            "center": f.center,
            "dimension": f.n,
        }
    raise ProblemFormatError("objectives", f"cannot serialize {type(f).__name__}")


def load_problem(source) -> ConsensusProblem | ResourceProblem:
    """Build a problem from a JSON file path or an already-parsed dict.

    Expected shape::

        {"kind": "consensus", "objectives": [{"family": ..., ...}, ...]}
        {"kind": "resource", "objectives": [...],
         "coupling": [[[...]], ...], "resource": [...]}

    Invariant violations raise :class:`ProblemFormatError` naming the
    offending field.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ProblemFormatError("<file>", f"invalid JSON: {e}") from e
    else:
        data = source
    if not isinstance(data, dict):
        raise ProblemFormatError("<root>", "expected a JSON object")
    kind = data.get("kind")
    if kind not in ("consensus", "resource"):
        raise ProblemFormatError("kind", f"expected 'consensus' or 'resource', got {kind!r}")
    raw = data.get("objectives")
    if not isinstance(raw, list) or not raw:
        raise ProblemFormatError("objectives", "expected a nonempty list")
    objectives = [_objective_from_dict(d, f"objectives[{i}]") for i, d in enumerate(raw)]
    if kind == "consensus":
        return ConsensusProblem(objectives)
    if "coupling" not in data:
        raise ProblemFormatError("coupling", "required for resource problems")
    if "resource" not in data:
        raise ProblemFormatError("resource", "required for resource problems")
    return ResourceProblem(objectives, data["coupling"], data["resource"])


def problem_to_dict(problem) -> dict:
    if isinstance(problem, ConsensusProblem):
        return {
            "kind": "consensus",
            "objectives": [_objective_to_dict(f) for f in problem.objectives],
        }
    if isinstance(problem, ResourceProblem):
        return {
            "kind": "resource",
            "objectives": [_objective_to_dict(f) for f in problem.objectives],
            "coupling": [Ai.tolist() for Ai in problem.coupling],
            "resource": problem.resource.tolist(),
        }
    raise ProblemFormatError("<root>", f"cannot serialize {type(problem).__name__}")


def problem_digest(problem) -> str:
    """Stable hex digest of the problem definition, recorded in trace metadata."""
    payload = json.dumps(problem_to_dict(problem), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Random benchmark instances


def random_strongly_convex_quadratic(
    rng: np.random.Generator, n: int, cond_max: float = 100.0
) -> QuadraticObjective:
    """Random quadratic with eigenvalues in [1, cond_max] in a random basis."""
    eigs = 1.0 + (cond_max - 1.0) * rng.random(n)
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Q = V @ np.diag(eigs) @ V.T
    Q = 0.5 * (Q + Q.T)
    q = rng.standard_normal(n)
    return QuadraticObjective(Q, q)


def random_consensus_problem(
    rng: np.random.Generator, N: int, n: int, cond_max: float = 100.0
) -> ConsensusProblem:
    return ConsensusProblem(
        [random_strongly_convex_quadratic(rng, n, cond_max) for _ in range(N)]
    )


def random_resource_problem(
    rng: np.random.Generator,
    N: int,
    m: int,
    dims: list[int] | None = None,
    cond_max: float = 100.0,
) -> ResourceProblem:
    """Random quadratic resource instance with a full-row-rank coupling."""
    if dims is None:
        dims = [int(rng.integers(max(1, m), m + 3)) for _ in range(N)]
    objectives = [random_strongly_convex_quadratic(rng, ni, cond_max) for ni in dims]
    for _ in range(20):
        coupling = [rng.standard_normal((m, ni)) for ni in dims]
        if np.linalg.matrix_rank(np.hstack(coupling)) == m:
            break
    else:
        raise OracleError("failed to draw a full-row-rank coupling")
    b = rng.standard_normal(m)
    return ResourceProblem(objectives, coupling, b)
