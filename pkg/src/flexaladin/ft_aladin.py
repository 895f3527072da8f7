"""Resource-allocation solver engine with random agent polling.

Agents hold local variables coupled only through ``sum_i A_i x_i = b``.
Polled agents solve a proximal local problem around their own ``y_i``;
the coordinator then forms the dual gradient and dual Hessian

    R = sum_i A_i (x_i - B_i^-1 g_i) - b,
    M = sum_i A_i B_i^-1 A_i',

solves ``M lam+ = R`` by a symmetric factorization, and redistributes

    y_i+ = x_i - B_i^-1 (g_i + A_i' lam+).

Substituting back gives ``sum_i A_i y_i+ = (R + b) - M lam+ = b``: the
redistributed local targets are feasible by construction, which is the
engine's dominant correctness check. The same slate matrix is used in
the local prox and the gradient recovery (set every ``B_i = rho * I``
via a fixed policy to recover a plain scalar prox).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import EngineError, LocalSolveError, ValidationError
from .local_solver import (
    BfgsMemory,
    DampedBfgs,
    HessianPolicy,
    evaluate_gradient_resource,
    solve_local_resource,
    update_hessian,
)
from .objectives import ResourceProblem, as_vector
from .polling import PollingConfig, draw_active_set
from .trace import IterationTrace, ResourceRecord

__all__ = [
    "AgentSlate",
    "FtState",
    "FtConfig",
    "DualSystem",
    "FtAladin",
    "run_ft",
    "state_residuals",
]


def state_residuals(state: "FtState", problem: ResourceProblem) -> tuple[float, float]:
    """Coupling feasibility of the local targets and max dual stationarity gap.

    Stationarity uses the stored slate gradients, which track the true
    local gradients at the slate iterates up to the solve tolerance.
    """
    feas = float(np.linalg.norm(problem.coupling_residual([s.y for s in state.slates])))
    stat = max(
        float(np.linalg.norm(s.g + Ai.T @ state.lam))
        for s, Ai in zip(state.slates, problem.coupling)
    )
    return feas, stat


@dataclass
class AgentSlate:
    """One agent's contribution: iterate, gradient, curvature, local target."""

    x: np.ndarray
    g: np.ndarray
    B: np.ndarray
    y: np.ndarray
    bfgs: BfgsMemory | None = None


@dataclass
class FtState:
    """Coordinator state: global dual, per-agent slates, iteration count."""

    lam: np.ndarray
    slates: list[AgentSlate]
    k: int = 0


@dataclass
class FtConfig:
    """Engine options for the resource variant."""

    hessian_policy: HessianPolicy | list[HessianPolicy]
    local_tol: float = 1e-12
    newton_cap: int = 50

    def __post_init__(self):
        if self.local_tol <= 0:
            raise ValidationError(f"local_tol must be positive, got {self.local_tol}")

    def describe(self) -> dict:
        pol = self.hessian_policy
        return {
            "local_tol": self.local_tol,
            "hessian": [p.describe() for p in pol] if isinstance(pol, list) else pol.describe(),
        }


@dataclass
class DualSystem:
    """Dual gradient and dual Hessian of one coordination step."""

    R: np.ndarray
    M: np.ndarray


class FtAladin:
    """Engine instance binding one resource problem to one configuration."""

    def __init__(self, problem: ResourceProblem, cfg: FtConfig):
        self.problem = problem
        self.cfg = cfg
        pol = cfg.hessian_policy
        if isinstance(pol, list):
            if len(pol) != problem.N:
                raise ValidationError(f"{len(pol)} policies for {problem.N} agents")
            self.policies = list(pol)
        else:
            self.policies = [pol] * problem.N

    def init_state(self, y0=None, lambda0=None) -> FtState:
        """Seed slates at the initial local targets and factorize the dual system.

        A factorization failure here means the coupling is rank
        deficient in a way the load-time rank check did not resolve.
        """
        prob = self.problem
        if y0 is None:
            ys = [np.zeros(ni) for ni in prob.dims]
        else:
            if len(y0) != prob.N:
                raise ValidationError(f"{len(y0)} initial targets for {prob.N} agents")
            ys = [as_vector(y, ni, f"y0[{i}]") for i, (y, ni) in enumerate(zip(y0, prob.dims))]
        lam = np.zeros(prob.m) if lambda0 is None else as_vector(lambda0, prob.m, "lambda0")
        slates = []
        for i, (f, Ai) in enumerate(zip(prob.objectives, prob.coupling)):
            memory = BfgsMemory() if isinstance(self.policies[i], DampedBfgs) else None
            B = update_hessian(self.policies[i], f, ys[i], None, k=1, memory=memory)
            x = ys[i].copy()
            g = evaluate_gradient_resource(B, ys[i], x, Ai, lam)
            slates.append(AgentSlate(x=x, g=g, B=B, y=ys[i].copy(), bfgs=memory))
        state = FtState(lam=lam, slates=slates, k=0)
        system = self.build_dual_system(state)
        try:
            scipy.linalg.cho_factor(system.M)
        except np.linalg.LinAlgError as e:
            raise ValidationError(
                f"dual Hessian is not positive definite at init (rank-deficient coupling?): {e}"
            ) from e
        return state

    def agent_step(self, state: FtState, i: int) -> AgentSlate:
        """Local solve around the agent's own target, plus gradient and curvature updates."""
        f = self.problem.objectives[i]
        Ai = self.problem.coupling[i]
        slate = state.slates[i]
        k_now = state.k + 1
        try:
            report = solve_local_resource(
                f, state.lam, slate.y, Ai, slate.B,
                tol=self.cfg.local_tol, max_iters=self.cfg.newton_cap,
            )
        except LocalSolveError as e:
            raise EngineError(
                f"agent {i} local solve failed at iteration {k_now}: {e}",
                iteration=k_now, agent=i,
            ) from e
        x_plus = report.x_plus
        g_plus = evaluate_gradient_resource(slate.B, slate.y, x_plus, Ai, state.lam)
        B_plus = update_hessian(self.policies[i], f, x_plus, slate.B, k=k_now, memory=slate.bfgs)
        return replace(slate, x=x_plus, g=g_plus, B=B_plus)

    def build_dual_system(self, state: FtState) -> DualSystem:
        """Assemble the dual gradient and dual Hessian from current slates."""
        prob = self.problem
        R = -prob.resource.copy()
        M = np.zeros((prob.m, prob.m))
        for s, Ai in zip(state.slates, prob.coupling):
            cho = scipy.linalg.cho_factor(s.B)
            R += Ai @ (s.x - scipy.linalg.cho_solve(cho, s.g))
            M += Ai @ scipy.linalg.cho_solve(cho, Ai.T)
        return DualSystem(R=R, M=0.5 * (M + M.T))

    def coordinate(self, state: FtState) -> tuple[np.ndarray, list[np.ndarray]]:
        """Solve the dual system and redistribute feasible local targets."""
        system = self.build_dual_system(state)
        try:
            cho = scipy.linalg.cho_factor(system.M)
        except np.linalg.LinAlgError as e:
            cond = float(np.linalg.cond(system.M))
            raise EngineError(
                f"dual Hessian factorization failed (condition estimate {cond:.3e}): {e}",
                iteration=state.k + 1,
            ) from e
        lam_plus = scipy.linalg.cho_solve(cho, system.R)
        ys = []
        for s, Ai in zip(state.slates, self.problem.coupling):
            bcho = scipy.linalg.cho_factor(s.B)
            ys.append(s.x - scipy.linalg.cho_solve(bcho, s.g + Ai.T @ lam_plus))
        return lam_plus, ys

    def iterate(self, state: FtState, active) -> None:
        """Advance the state through one polled iteration in place."""
        for i in active:
            state.slates[i] = self.agent_step(state, i)
        lam_plus, ys = self.coordinate(state)
        state.lam = lam_plus
        for s, y in zip(state.slates, ys):
            s.y = y
        state.k += 1

    def run(
        self,
        K: int,
        polling: PollingConfig,
        y0=None,
        lambda0=None,
        observers=(),
        metadata: dict | None = None,
    ) -> IterationTrace:
        """Init plus K polled iterations; returns the full trace."""
        if K < 1:
            raise ValidationError(f"iteration count K must be >= 1, got {K}")
        meta = {
            "engine": "ft",
            "config": self.cfg.describe(),
            "polling": polling.describe(),
            "K": K,
        }
        if metadata:
            meta.update(metadata)
        trace = IterationTrace(meta)
        state = self.init_state(y0, lambda0)
        self._record(trace, state, None, observers)
        for k in range(1, K + 1):
            active = draw_active_set(polling, self.problem.N, k)
            try:
                self.iterate(state, active)
            except EngineError:
                raise
            except (np.linalg.LinAlgError, ValueError) as e:
                raise EngineError(f"iteration {k} failed: {e}", iteration=k) from e
            self._record(trace, state, active, observers)
        return trace

    def _record(self, trace: IterationTrace, state: FtState, active, observers) -> None:
        feas, stat = state_residuals(state, self.problem)
        record = ResourceRecord(
            k=state.k,
            active=None if active is None else tuple(active.members),
            lam=state.lam,
            y_locals=[s.y for s in state.slates],
            x=[s.x for s in state.slates],
            g=[s.g for s in state.slates],
            B=[s.B for s in state.slates],
            feasibility_residual=feas,
            stationarity_residual=stat,
        )
        trace.append(record)
        for obs in observers:
            obs(record)


def run_ft(
    problem: ResourceProblem,
    cfg: FtConfig,
    polling: PollingConfig,
    K: int,
    observers=(),
    y0=None,
    lambda0=None,
    metadata: dict | None = None,
) -> IterationTrace:
    """One-call convenience wrapper around :class:`FtAladin`."""
    return FtAladin(problem, cfg).run(
        K, polling, y0=y0, lambda0=lambda0, observers=observers, metadata=metadata
    )
