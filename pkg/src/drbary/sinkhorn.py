"""Damped Sinkhorn scheme for fixed-support barycenters.

One iteration recomputes the softmin potentials phi^j on the reference
support, the induced barycenter mu_t and marginals nu^j_t, then applies the
damped log-ratio update

    psi^j <- psi^j - eta * lam * log d(nu^j_t)/d(nu^j),   eta = min(1, tau/lam).

Damping is what makes the scheme converge for every (lam, tau); the undamped
update (eta = 1) is kept as a diagnostic mode and empirically diverges once
tau < lam/2.  The stopping rule is the computable certificate gap, not an
iterate-difference norm.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .dual import (
    Certificate,
    DualState,
    barycenter_from_duals,
    certificate_from_residuals,
    dual_objective,
    kl_tv_residuals,
)
from .entropic import Potential, logsumexp
from .errors import InconsistentState, ParameterOutOfRange
from .measures import CostOracle, DiscreteMeasure, SolverConfig

TRACE_COLUMNS = ("t", "dual_value", "improvement_bound", "gap_upper_bound",
                 "max_osc", "wall_ms")


@dataclass
class TraceRecord:
    t: int
    dual_value: float
    improvement_bound: float
    gap_upper_bound: float
    max_osc: float
    wall_ms: float
    extras: dict = field(default_factory=dict)


@dataclass
class ConvergenceTrace:
    """Per-iteration log of the solver.

    ``monotonicity_guaranteed`` is False when the damping factor was
    overridden above min(1, tau/lam); the dual value may then decrease.
    """

    records: list[TraceRecord] = field(default_factory=list)
    monotonicity_guaranteed: bool = True
    extra_columns: tuple = ()

    def dual_values(self) -> np.ndarray:
        return np.array([r.dual_value for r in self.records])

    def gaps(self) -> np.ndarray:
        return np.array([r.gap_upper_bound for r in self.records])

    def max_oscs(self) -> np.ndarray:
        return np.array([r.max_osc for r in self.records])

    def improvement_bounds(self) -> np.ndarray:
        return np.array([r.improvement_bound for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = TRACE_COLUMNS + self.extra_columns
        buf.write(",".join(cols) + "\n")
        for r in self.records:
            row = [str(r.t)] + [repr(getattr(r, c)) for c in TRACE_COLUMNS[1:]]
            row += [repr(r.extras.get(c, float("nan"))) for c in self.extra_columns]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass
class SolveResult:
    state: DualState
    certificate: Certificate
    trace: ConvergenceTrace
    converged: bool

    @property
    def budget_exhausted(self) -> bool:
        return not self.converged


class FixedSupportCore:
    """Preassembled log-domain kernels for the solver loop.

    Stores D^j = log nu^j - C^j / lam once per problem so that each iteration
    only performs two log-sum-exp reductions per marginal.
    """

    def __init__(self, marginals, reference: DiscreteMeasure, cost: CostOracle,
                 cfg: SolverConfig):
        self.marginals = list(marginals)
        self.reference = reference
        self.cfg = cfg
        self.lam = float(cfg.lam)
        self.tau = float(cfg.tau)
        self.w = np.asarray(cfg.weights, dtype=np.float64)
        self.log_pi = np.log(reference.weights)
        self.log_nu = [np.log(nu.weights) for nu in self.marginals]
        self.nu_w = [nu.weights for nu in self.marginals]
        self.D = [
            self.log_nu[j][None, :] - cost.pairwise(reference.points, nu.points) / self.lam
            for j, nu in enumerate(self.marginals)
        ]
        if np.isfinite(cost.c_inf):
            self.c_inf = float(cost.c_inf)
        else:
            self.c_inf = max(
                float((-self.lam) * (self.D[j] - self.log_nu[j][None, :]).min())
                for j in range(len(self.marginals))
            )

    def potentials(self, psis):
        """u^j = -phi^j/lam on the reference support, plus log Z and log mu."""
        u = [logsumexp(D_j + psi_j[None, :] / self.lam, axis=1)
             for D_j, psi_j in zip(self.D, psis)]
        v = np.zeros(self.reference.size)
        for w_j, u_j in zip(self.w, u):
            v -= w_j * self.lam * u_j
        s = self.log_pi - v / self.tau
        log_Z = float(logsumexp(s[None, :], axis=1)[()])
        return u, log_Z, s - log_Z

    def log_ratios(self, psis, u, log_mu):
        """log d(nu^j_psi)/d(nu^j) for every marginal."""
        out = []
        for j, (D_j, psi_j, u_j) in enumerate(zip(self.D, psis, u)):
            a = (log_mu - u_j)[:, None] + (D_j + psi_j[None, :] / self.lam)
            out.append(logsumexp(a, axis=0) - self.log_nu[j])
        return out

    def dual_value(self, psis, log_Z) -> float:
        lin = sum(w_j * float(nu_w @ psi_j)
                  for w_j, nu_w, psi_j in zip(self.w, self.nu_w, psis))
        return lin - self.tau * log_Z

    def state_from(self, psis, u, log_Z, log_mu) -> DualState:
        return DualState(
            psi=[Potential(p, f"nu[{j}]") for j, p in enumerate(psis)],
            phi=[Potential(-self.lam * u_j, "ref") for u_j in u],
            log_Z=log_Z,
            mu_weights=np.exp(log_mu),
            reference=self.reference,
        )


def _check_consistent(state: DualState, cfg: SolverConfig):
    v = np.zeros(state.reference.size)
    for w_j, phi_j in zip(cfg.weights, state.phi):
        v += w_j * phi_j.values
    s = np.log(state.reference.weights) - v / cfg.tau
    log_Z = float(logsumexp(s[None, :], axis=1)[()])
    if not np.isclose(log_Z, state.log_Z, rtol=1e-8, atol=1e-8):
        raise InconsistentState(
            f"state log_Z={state.log_Z} but potentials imply {log_Z}")


def _single_step(state: DualState, marginals, reference, cost, cfg, eta):
    _check_consistent(state, cfg)
    core = FixedSupportCore(marginals, reference, cost, cfg)
    psis = [p.values for p in state.psi]
    u, log_Z, log_mu = core.potentials(psis)
    log_r = core.log_ratios(psis, u, log_mu)
    new = [psi_j - eta * cfg.lam * r_j for psi_j, r_j in zip(psis, log_r)]
    return barycenter_from_duals(
        [Potential(p, f"nu[{j}]") for j, p in enumerate(new)],
        reference, marginals, cost, cfg)


def damped_step(state: DualState, marginals, reference: DiscreteMeasure,
                cost: CostOracle, cfg: SolverConfig) -> DualState:
    """One damped update of every psi^j, returning the rebuilt state.

    Post-state satisfies osc(psi^j_new) <= (1-eta) osc(psi^j) + eta c_inf.
    """
    return _single_step(state, marginals, reference, cost, cfg, cfg.damping)


def undamped_step(state: DualState, marginals, reference: DiscreteMeasure,
                  cost: CostOracle, cfg: SolverConfig) -> DualState:
    """Diagnostic full Sinkhorn update (eta forced to 1, any tau/lam)."""
    return _single_step(state, marginals, reference, cost, cfg, 1.0)


def initial_state(marginals, reference, cost, cfg) -> DualState:
    """State at psi = 0, the fixed initialization of the solver."""
    zeros = [Potential(np.zeros(nu.size), f"nu[{j}]")
             for j, nu in enumerate(marginals)]
    return barycenter_from_duals(zeros, reference, marginals, cost, cfg)


def run(marginals, reference: DiscreteMeasure, cost: CostOracle,
        cfg: SolverConfig, undamped: bool = False,
        warm_start: list[Potential] | None = None) -> SolveResult:
    """Iterate until the certificate gap drops below cfg.tol_certificate.

    Starts from psi = 0 unless a warm start is given.  On budget exhaustion
    the best state seen is returned with ``converged=False`` rather than
    raising.  Identical inputs produce bit-identical traces.
    """
    core = FixedSupportCore(marginals, reference, cost, cfg)
    eta = 1.0 if undamped else cfg.damping
    guaranteed = eta <= min(1.0, cfg.tau / cfg.lam) + 1e-15
    if warm_start is not None:
        psis = [np.asarray(p.values, dtype=np.float64).copy() for p in warm_start]
    else:
        psis = [np.zeros(nu.size) for nu in core.marginals]

    trace = ConvergenceTrace(monotonicity_guaranteed=guaranteed)
    min_lt = min(cfg.lam, cfg.tau)
    t0 = time.perf_counter()
    best = None  # (dual value, arrays snapshot, certificate)
    converged = False

    for t in range(cfg.max_iters + 1):
        u, log_Z, log_mu = core.potentials(psis)
        log_r = core.log_ratios(psis, u, log_mu)
        kls, tvs = zip(*(kl_tv_residuals(nu, r)
                         for nu, r in zip(core.marginals, log_r)))
        e_t = core.dual_value(psis, log_Z)
        oscs = [float(p.max() - p.min()) if p.size else 0.0 for p in psis]
        cert = certificate_from_residuals(e_t, np.array(kls), np.array(tvs),
                                          np.array(oscs), core.c_inf, cfg)
        trace.records.append(TraceRecord(
            t=t,
            dual_value=e_t,
            improvement_bound=min_lt * float(core.w @ np.array(kls)),
            gap_upper_bound=cert.gap_upper_bound,
            max_osc=max(oscs),
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))
        if best is None or e_t > best[0]:
            best = (e_t, [p.copy() for p in psis], (u, log_Z, log_mu), cert)
        if cert.gap_upper_bound <= cfg.tol_certificate and cert.certified:
            converged = True
            break
        if t == cfg.max_iters:
            break
        psis = [psi_j - eta * cfg.lam * r_j for psi_j, r_j in zip(psis, log_r)]

    _, best_psis, (u, log_Z, log_mu), cert = best
    state = core.state_from(best_psis, u, log_Z, log_mu)
    return SolveResult(state=state, certificate=cert, trace=trace,
                       converged=converged)


def run_dual_values(marginals, reference, cost, cfg, n_iters: int,
                    undamped: bool = False):
    """Lean loop: dual value and max osc per iteration, nothing else.

    Used for long reference runs (e.g. estimating E* by running far past the
    measurement window) where per-iteration certificates would dominate the
    cost.  Applies exactly the same update arithmetic as :func:`run`.
    """
    core = FixedSupportCore(marginals, reference, cost, cfg)
    eta = 1.0 if undamped else cfg.damping
    psis = [np.zeros(nu.size) for nu in core.marginals]
    values = np.empty(n_iters + 1)
    oscs = np.empty(n_iters + 1)
    for t in range(n_iters + 1):
        u, log_Z, log_mu = core.potentials(psis)
        values[t] = core.dual_value(psis, log_Z)
        oscs[t] = max(float(p.max() - p.min()) if p.size else 0.0 for p in psis)
        if t == n_iters:
            break
        log_r = core.log_ratios(psis, u, log_mu)
        psis = [psi_j - eta * cfg.lam * r_j for psi_j, r_j in zip(psis, log_r)]
    return values, oscs
