"""Consensus-problem solver engine with random agent polling.

Each iteration, polled agents refresh their slate ``(x_i, g_i, B_i)``
from the current global variable and their dual; agents that missed the
poll keep stale values. The coordinator then recomputes the global
variable from a closed-form consensus quadratic program and re-derives
every agent's dual:

    y+      = (sum_i B_i)^-1 sum_i (B_i x_i - g_i)
    lam_i+  = B_i (x_i - y+) - g_i

Using each agent's current slate matrix in both lines makes
``sum_i lam_i+ = 0`` an exact algebraic identity, which the diagnostics
rely on. Three variants are provided:

* ``exact_B_prox``: the local solve uses the slate matrix as prox weight;
* ``exact_rho_prox``: the local solve uses ``rho * I`` instead, which is
  the form the local (non-convex) convergence analysis assumes;
* ``inexact``: no inner solve at all, a single preconditioned
  (sub)gradient step ``x+ = y - B^-1 (lam + df(y))``, suited to
  nonsmooth objectives; the coordinator may consume either the realized
  slate values or, for active agents, the explicit probability mixture
  ``p * new + (1-p) * old`` (``mean_field`` mixing). Only realized
  mixing preserves the zero-sum dual identity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import CapabilityError, EngineError, LocalSolveError, ValidationError
from .local_solver import (
    BfgsMemory,
    DampedBfgs,
    FixedMatrix,
    HessianPolicy,
    ScalarSchedule,
    evaluate_gradient_consensus,
    solve_local_consensus,
    update_hessian,
)
from .objectives import ConsensusProblem, as_vector
from .polling import PollingConfig, draw_active_set
from .trace import ConsensusRecord, IterationTrace

__all__ = ["AgentSlate", "FcState", "FcConfig", "FcAladin", "run_fc"]

VARIANTS = ("exact_B_prox", "exact_rho_prox", "inexact")
MIXINGS = ("realized", "mean_field")


@dataclass
class AgentSlate:
    """One agent's contribution as held at the coordinator."""

    x: np.ndarray
    g: np.ndarray
    B: np.ndarray
    lam: np.ndarray
    bfgs: BfgsMemory | None = None


@dataclass
class FcState:
    """Coordinator state: global variable, per-agent slates, iteration count."""

    y: np.ndarray
    slates: list[AgentSlate]
    k: int = 0

    def lambdas(self) -> list[np.ndarray]:
        return [s.lam for s in self.slates]

    def dual_sum_residual(self) -> float:
        total = np.zeros_like(self.y)
        for s in self.slates:
            total = total + s.lam
        return float(np.linalg.norm(total))

    def primal_residual(self) -> float:
        return max(float(np.linalg.norm(s.x - self.y)) for s in self.slates)


@dataclass
class FcConfig:
    """Engine options: curvature policy, variant, local tolerance, mixing."""

    hessian_policy: HessianPolicy | list[HessianPolicy]
    local_tol: float = 1e-12
    variant: str = "exact_B_prox"
    rho: float | None = None
    mixing: str = "realized"
    newton_cap: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.mixing not in MIXINGS:
            raise ValidationError(f"unknown mixing {self.mixing!r}, expected one of {MIXINGS}")
        if self.variant == "exact_rho_prox":
            if self.rho is None or self.rho <= 0:
                raise ValidationError(f"exact_rho_prox needs rho > 0, got {self.rho}")
        elif self.rho is not None:
            raise ValidationError(f"rho is only meaningful for exact_rho_prox, got variant {self.variant!r}")
        if self.mixing == "mean_field" and self.variant != "inexact":
            raise ValidationError("mean_field mixing is only defined for the inexact variant")
        if self.local_tol <= 0:
            raise ValidationError(f"local_tol must be positive, got {self.local_tol}")

    def describe(self) -> dict:
        d = {
            "variant": self.variant,
            "mixing": self.mixing,
            "local_tol": self.local_tol,
        }
        if self.rho is not None:
            d["rho"] = self.rho
        pol = self.hessian_policy
        d["hessian"] = [p.describe() for p in pol] if isinstance(pol, list) else pol.describe()
        return d


class FcAladin:
    """Engine instance binding one consensus problem to one configuration.

    Methods taking an explicit :class:`FcState` are pure with respect to
    it except `iterate`, which advances the state in place; agent steps
    within an iteration are independent of one another and of execution
    order.
    """

    def __init__(self, problem: ConsensusProblem, cfg: FcConfig):
        self.problem = problem
        self.cfg = cfg
        pol = cfg.hessian_policy
        if isinstance(pol, list):
            if len(pol) != problem.N:
                raise ValidationError(
                    f"{len(pol)} policies for {problem.N} agents"
                )
            self.policies = list(pol)
        else:
            self.policies = [pol] * problem.N
        if cfg.variant == "inexact":
            for i, p in enumerate(self.policies):
                if not isinstance(p, (FixedMatrix, ScalarSchedule)):
                    raise ValidationError(
                        "inexact variant holds B fixed within an iteration and supports "
                        f"only fixed or scheduled policies, got {type(p).__name__} for agent {i}"
                    )

    # -- state construction --------------------------------------------------

    def init_state(self, y0=None, lambda0=None) -> FcState:
        """Seed slates at the initial global variable.

        Duals are re-centered to sum to zero exactly. The slate
        placeholders ``x_i = y0`` and ``g_i = -lam_i`` are consistent
        with the gradient-recovery identity and are overwritten by the
        forced full first round before any stale value can matter.
        """
        n = self.problem.n
        y = np.zeros(n) if y0 is None else as_vector(y0, n, "y0")
        if lambda0 is None:
            lambdas = [np.zeros(n) for _ in range(self.problem.N)]
        else:
            if len(lambda0) != self.problem.N:
                raise ValidationError(f"{len(lambda0)} duals for {self.problem.N} agents")
            lambdas = [as_vector(l, n, f"lambda0[{i}]") for i, l in enumerate(lambda0)]
        mean = sum(lambdas) / self.problem.N
        lambdas = [lam - mean for lam in lambdas]
        slates = []
        for i, f in enumerate(self.problem.objectives):
            memory = BfgsMemory() if isinstance(self.policies[i], DampedBfgs) else None
            B = update_hessian(self.policies[i], f, y, None, k=1, memory=memory)
            x = y.copy()
            g = evaluate_gradient_consensus(B, y, x, lambdas[i])
            slates.append(AgentSlate(x=x, g=g, B=B, lam=lambdas[i], bfgs=memory))
        return FcState(y=y, slates=slates, k=0)

    # -- agent side ----------------------------------------------------------

    def _prox_matrix(self, slate: AgentSlate) -> np.ndarray:
        if self.cfg.variant == "exact_rho_prox":
            return self.cfg.rho * np.eye(self.problem.n)
        return slate.B

    def agent_step(self, state: FcState, i: int) -> AgentSlate:
        """Local solve, gradient recovery, and curvature update for agent i.

        The gradient is recovered with the same prox matrix used in the
        solve, so it equals the true local gradient at the new iterate
        up to the solve tolerance.
        """
        f = self.problem.objectives[i]
        slate = state.slates[i]
        prox = self._prox_matrix(slate)
        k_now = state.k + 1
        try:
            report = solve_local_consensus(
                f, slate.lam, state.y, prox, tol=self.cfg.local_tol,
                max_iters=self.cfg.newton_cap,
            )
        except LocalSolveError as e:
            raise EngineError(
                f"agent {i} local solve failed at iteration {k_now}: {e}",
                iteration=k_now, agent=i,
            ) from e
        x_plus = report.x_plus
        g_plus = evaluate_gradient_consensus(prox, state.y, x_plus, slate.lam)
        B_plus = update_hessian(self.policies[i], f, x_plus, slate.B, k=k_now, memory=slate.bfgs)
        return replace(slate, x=x_plus, g=g_plus, B=B_plus)

    def inexact_agent_step(self, state: FcState, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Single preconditioned (sub)gradient step; no inner solve."""
        f = self.problem.objectives[i]
        slate = state.slates[i]
        x_plus = state.y - np.linalg.solve(slate.B, slate.lam + f.subgradient(state.y))
        return x_plus, f.subgradient(x_plus)

    # -- coordinator side ----------------------------------------------------

    def coordinate(self, state: FcState) -> tuple[np.ndarray, list[np.ndarray]]:
        """Closed-form consensus QP over all slates, stale or fresh.

        Accumulation runs in ascending agent order so traces are bit
        reproducible.
        """
        n = self.problem.n
        S = np.zeros((n, n))
        rhs = np.zeros(n)
        for s in state.slates:
            S += s.B
            rhs += s.B @ s.x - s.g
        y_plus = self._solve_spd(S, rhs)
        lambdas = [s.B @ (s.x - y_plus) - s.g for s in state.slates]
        return y_plus, lambdas

    def inexact_coordinate(
        self,
        state: FcState,
        active,
        new_x: dict[int, np.ndarray],
        new_g: dict[int, np.ndarray],
        p: float,
    ) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
        """Global update consuming fresh values for active agents only.

        With realized mixing the expectation over polling is instantiated
        by the draw itself. With mean_field mixing the coordinator blends
        ``p * new + (1-p) * old`` for each active agent when forming the
        global variable; duals are always evaluated at the realized
        values, so only realized mixing keeps their sum at exactly zero.

        Returns ``(y_plus, lambdas_plus, x_realized, g_realized)``.
        """
        members = set(active.members if hasattr(active, "members") else active)
        n = self.problem.n
        S = np.zeros((n, n))
        rhs = np.zeros(n)
        x_real: list[np.ndarray] = []
        g_real: list[np.ndarray] = []
        for i, s in enumerate(state.slates):
            if i in members:
                xr, gr = new_x[i], new_g[i]
                if self.cfg.mixing == "mean_field":
                    x_eff = p * xr + (1.0 - p) * s.x
                    g_eff = p * gr + (1.0 - p) * s.g
                else:
                    x_eff, g_eff = xr, gr
            else:
                xr, gr = s.x, s.g
                x_eff, g_eff = s.x, s.g
            S += s.B
            rhs += s.B @ x_eff - g_eff
            x_real.append(xr)
            g_real.append(gr)
        y_plus = self._solve_spd(S, rhs)
        lambdas = [
            s.B @ (xr - y_plus) - gr for s, xr, gr in zip(state.slates, x_real, g_real)
        ]
        return y_plus, lambdas, x_real, g_real

    @staticmethod
    def _solve_spd(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        try:
            c, low = scipy.linalg.cho_factor(S)
        except np.linalg.LinAlgError as e:  # pragma: no cover - SPD by invariant
            raise AssertionError(f"sum of SPD slate matrices failed to factorize: {e}") from e
        return scipy.linalg.cho_solve((c, low), rhs)

    # -- outer loop ----------------------------------------------------------

    def iterate(self, state: FcState, active, mixing_p: float = 1.0) -> None:
        """Advance the state through one polled iteration in place.

        `mixing_p` is the polling probability consumed by mean_field
        mixing; realized mixing ignores it.
        """
        k_now = state.k + 1
        if self.cfg.variant == "inexact":
            for i, s in enumerate(state.slates):
                s.B = update_hessian(
                    self.policies[i], self.problem.objectives[i], s.x, s.B, k=k_now,
                    memory=s.bfgs,
                )
            new_x, new_g = {}, {}
            for i in active:
                new_x[i], new_g[i] = self.inexact_agent_step(state, i)
            y_plus, lambdas, x_real, g_real = self.inexact_coordinate(
                state, active, new_x, new_g, p=mixing_p
            )
            for i, s in enumerate(state.slates):
                s.x, s.g, s.lam = x_real[i], g_real[i], lambdas[i]
        else:
            for i in active:
                state.slates[i] = self.agent_step(state, i)
            y_plus, lambdas = self.coordinate(state)
            for s, lam in zip(state.slates, lambdas):
                s.lam = lam
        state.y = y_plus
        state.k = k_now

    def run(
        self,
        K: int,
        polling: PollingConfig,
        y0=None,
        lambda0=None,
        observers=(),
        metadata: dict | None = None,
    ) -> IterationTrace:
        """Init plus K polled iterations; returns the full trace.

        The first round polls every agent when the polling config says
        so (default), which populates all slates before any stale value
        can enter a coordination.
        """
        if K < 1:
            raise ValidationError(f"iteration count K must be >= 1, got {K}")
        meta = {
            "engine": "fc",
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
                self.iterate(state, active, mixing_p=polling.p)
            except EngineError:
                raise
            except (np.linalg.LinAlgError, ValueError) as e:
                raise EngineError(f"iteration {k} failed: {e}", iteration=k) from e
            self._record(trace, state, active, observers)
        return trace

    def _record(self, trace: IterationTrace, state: FcState, active, observers) -> None:
        record = ConsensusRecord(
            k=state.k,
            active=None if active is None else tuple(active.members),
            y=state.y,
            x=[s.x for s in state.slates],
            g=[s.g for s in state.slates],
            lambdas=[s.lam for s in state.slates],
            B=[s.B for s in state.slates],
            primal_residual=state.primal_residual(),
            dual_sum_residual=state.dual_sum_residual(),
        )
        trace.append(record)
        for obs in observers:
            obs(record)


def run_fc(
    problem: ConsensusProblem,
    cfg: FcConfig,
    polling: PollingConfig,
    K: int,
    observers=(),
    y0=None,
    lambda0=None,
    metadata: dict | None = None,
) -> IterationTrace:
    """One-call convenience wrapper around :class:`FcAladin`."""
    return FcAladin(problem, cfg).run(
        K, polling, y0=y0, lambda0=lambda0, observers=observers, metadata=metadata
    )
