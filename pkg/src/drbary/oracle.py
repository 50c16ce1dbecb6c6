"""Monte-Carlo marginal estimation and the approximate-oracle contract.

Given samples X_1..X_n from (approximately) the current barycenter, the
marginal density ratio of nu^j is estimated by the kernel average

    est_l = (1/n) sum_i exp((phi(X_i) + psi_l - c(X_i, y_l)) / lam),

then floored away from zero by mixing with the marginal itself:
ratio_l = (1 - zeta) * est_l + zeta.  The mixed ratio satisfies a four-part
contract (positivity, TV accuracy, bounded inverse-ratio mean, oscillation
contraction of the damped update) that the solver's convergence analysis
consumes; :func:`verify_oracle_properties` measures each part against the
exact marginal on test rigs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .entropic import Potential, logsumexp, softmin_potential
from .errors import EmptySampleSet, ParameterOutOfRange, ZetaOutOfRange
from .measures import CostOracle, DiscreteMeasure


@dataclass(frozen=True)
class OracleOutput:
    """One approximate marginal: log density ratio plus its accuracy tag."""

    log_density_ratio: np.ndarray
    accuracy_estimate: float
    n_samples: int
    zeta: float

    def __post_init__(self):
        v = np.asarray(self.log_density_ratio, dtype=np.float64).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "log_density_ratio", v)
        if not np.all(np.isfinite(v)):
            raise ParameterOutOfRange("log density ratio must be finite (positivity)")


def mc_marginal_estimate(psi_j: Potential, nu_j: DiscreteMeasure,
                         samples: np.ndarray, cost: CostOracle,
                         lam: float) -> np.ndarray:
    """Kernel-average estimate of d(nu^j_psi)/d(nu^j) at each atom.

    Computed in log scale (LSE over samples minus log n) and exponentiated
    at the end; each summand nu_l * K(X_i, y_l) lies in [0, 1].
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[0]
    if n == 0:
        raise EmptySampleSet("need at least one sample")
    phi = softmin_potential(psi_j, nu_j, cost, samples, lam)
    C = cost.pairwise(samples, nu_j.points)
    log_K = (phi.values[:, None] + psi_j.values[None, :] - C) / lam
    return np.exp(logsumexp(log_K, axis=0) - math.log(n))


def mix_with_marginal(estimate: np.ndarray, zeta: float) -> np.ndarray:
    """log((1 - zeta) * estimate + zeta): strictly positive by construction."""
    if not (0.0 < zeta <= 0.5):
        raise ZetaOutOfRange(f"zeta must lie in (0, 0.5], got {zeta}")
    estimate = np.asarray(estimate, dtype=np.float64)
    if np.any(estimate < 0):
        raise ParameterOutOfRange("estimate entries must be non-negative")
    return np.log((1.0 - zeta) * estimate + zeta)


def accuracy_bound(m_j: int, m: int, n: int, zeta: float, eps_mu: float,
                   delta: float, c_inf: float) -> float:
    """High-probability accuracy of the mixed Monte-Carlo marginal.

    eps_j = c_inf * (2 zeta + m_j eps_mu / zeta
                     + (m_j / zeta) sqrt(2 log(2m/delta) / n))^(1/2),
    valid with probability at least 1 - delta over the n samples.
    """
    if min(m_j, m, n) <= 0 or c_inf <= 0 or eps_mu < 0:
        raise ParameterOutOfRange("m_j, m, n, c_inf must be positive; eps_mu >= 0")
    if not (0.0 < zeta <= 0.5):
        raise ZetaOutOfRange(f"zeta must lie in (0, 0.5], got {zeta}")
    if not (0.0 < delta < 1.0):
        raise ParameterOutOfRange(f"delta must lie in (0, 1), got {delta}")
    inner = (2.0 * zeta
             + m_j * eps_mu / zeta
             + (m_j / zeta) * math.sqrt(2.0 * math.log(2.0 * m / delta) / n))
    return c_inf * math.sqrt(inner)


def choose_oracle_params(eps: float, c_inf: float, m_j: int, m: int,
                         delta: float, eps_mu: float = 0.0) -> tuple[float, int]:
    """Pick (zeta, n) so the accuracy bound comes out at most eps.

    Budget split: the mixing term gets 2 zeta = eps^2/(8 c^2) (so
    zeta = eps^2/(16 c^2), capped at 1/2) and the sampling term gets
    eps^2/(4 c^2); the sampler-error term m_j eps_mu / zeta is whatever the
    certified eps_mu makes it.  The split is a choice, not part of the
    accuracy statement, which is re-evaluated through accuracy_bound.
    """
    if eps <= 0:
        raise ParameterOutOfRange(f"eps must be positive, got {eps}")
    zeta = min(eps**2 / (16.0 * c_inf**2), 0.5)
    budget = zeta * eps**2 / (4.0 * c_inf**2)
    n = math.ceil(2.0 * math.log(2.0 * m / delta) * (m_j / budget) ** 2)
    return zeta, n


@dataclass(frozen=True)
class PropertyReport:
    """Measured compliance of an oracle output against the exact marginal."""

    positivity: bool
    tv_error: float
    tv_budget: float
    inv_ratio_mean: float
    inv_ratio_budget: float
    osc_after: float
    osc_budget: float
    eps: float

    @property
    def tv_ok(self) -> bool:
        return self.tv_error <= self.tv_budget

    @property
    def inv_ratio_ok(self) -> bool:
        return self.inv_ratio_mean <= self.inv_ratio_budget

    @property
    def osc_ok(self) -> bool:
        return self.osc_after <= self.osc_budget + 1e-12

    @property
    def all_ok(self) -> bool:
        return self.positivity and self.tv_ok and self.inv_ratio_ok and self.osc_ok

    def to_json(self) -> str:
        return json.dumps({
            "eps": self.eps,
            "positivity": self.positivity,
            "tv_error": self.tv_error, "tv_budget": self.tv_budget,
            "inv_ratio_mean": self.inv_ratio_mean,
            "inv_ratio_budget": self.inv_ratio_budget,
            "osc_after": self.osc_after, "osc_budget": self.osc_budget,
            "all_ok": self.all_ok,
        })


def verify_oracle_properties(output: OracleOutput, exact_ratio: np.ndarray,
                             nu_j: DiscreteMeasure, psi_j: Potential,
                             eta: float, lam: float, c_inf: float,
                             eps: float) -> PropertyReport:
    """Measure the four contract properties of an oracle output.

    1. the mixed ratio is strictly positive;
    2. TV between mixed and exact marginal is at most eps/(2 c_inf);
    3. E_nu[exact/mixed] is at most 1 + eps^2/(2 c_inf^2);
    4. the damped update psi - eta lam log(ratio) contracts the oscillation
       norm to (1-eta) osc(psi) + eta c_inf.

    Property 4 is stated for the updated iterate, which is the form the
    solver's oscillation induction consumes; it is structural, holding for
    any sample set, any zeta, and any eta in [0, 1].
    """
    log_rt = output.log_density_ratio
    positivity = bool(np.all(np.isfinite(log_rt)))
    tilde = nu_j.weights * np.exp(log_rt)
    exact_mass = nu_j.weights * np.asarray(exact_ratio, dtype=np.float64)
    tv = 0.5 * float(np.abs(tilde - exact_mass).sum())
    inv_mean = float(nu_j.weights @ (np.asarray(exact_ratio) / np.exp(log_rt)))
    updated = psi_j.values - eta * lam * log_rt
    return PropertyReport(
        positivity=positivity,
        tv_error=tv,
        tv_budget=eps / (2.0 * c_inf),
        inv_ratio_mean=inv_mean,
        inv_ratio_budget=1.0 + eps**2 / (2.0 * c_inf**2),
        osc_after=float(updated.max() - updated.min()),
        osc_budget=(1.0 - eta) * psi_j.osc() + eta * c_inf,
        eps=eps,
    )
