"""Log-domain primitives of entropic optimal transport.

Everything here works on dual potentials anchored to discrete measures.  The
central object is the softmin response map: given a potential psi on the
atoms of nu, the induced potential at a point x is

    phi(x) = -lam * log( sum_l nu_l * exp((psi_l - c(x, y_l)) / lam) )

evaluated with a max-subtracted log-sum-exp so that small lam never
underflows.  No exponential kernel matrix is materialized except by
:func:`coupling_from_potentials` on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnchorMismatch, NonPositiveLambda
from .measures import CostOracle, DiscreteMeasure


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-subtracted log-sum-exp, tolerant of all-(-inf) slices."""
    mx = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.sum(np.exp(a - safe), axis=axis)) + np.squeeze(safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(mx, axis=axis)), out, -np.inf)


@dataclass(frozen=True)
class Potential:
    """Dual potential: one real value per atom of its anchor measure."""

    values: np.ndarray
    anchor: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def osc(self) -> float:
        """Oscillation norm sup - inf."""
        return float(self.values.max() - self.values.min())

    def shifted(self, a: float) -> "Potential":
        return Potential(self.values + a, self.anchor)


def zero_potential(nu: DiscreteMeasure, anchor: str = "") -> Potential:
    return Potential(np.zeros(nu.size), anchor)


def osc(values: np.ndarray) -> float:
    return float(np.max(values) - np.min(values))


def _require_anchor(pot: Potential, measure: DiscreteMeasure, what: str):
    if len(pot) != measure.size:
        raise AnchorMismatch(
            f"{what}: potential has {len(pot)} values, measure has {measure.size} atoms")


def softmin_potential(psi: Potential, nu: DiscreteMeasure, cost: CostOracle,
                      eval_points: np.ndarray, lam: float,
                      anchor: str = "") -> Potential:
    """Softmin response potential evaluated at ``eval_points``.

    Returns phi with phi(x_i) = -lam * LSE_l(log nu_l + (psi_l - c(x_i, y_l)) / lam).
    The additive constant is fixed by this formula (no recentering), which
    makes the normalization identity of the coupling hold by construction.
    """
    if lam <= 0:
        raise NonPositiveLambda(f"lam must be positive, got {lam}")
    _require_anchor(psi, nu, "softmin_potential")
    C = cost.pairwise(eval_points, nu.points)
    a = np.log(nu.weights)[None, :] + (psi.values[None, :] - C) / lam
    return Potential(-lam * logsumexp(a, axis=1), anchor)


def semidual_value(phi: Potential, psi: Potential, mu: DiscreteMeasure,
                   nu: DiscreteMeasure) -> float:
    """E(phi, psi) = E_mu[phi] + E_nu[psi], valid when phi is the softmin of psi."""
    _require_anchor(phi, mu, "semidual_value phi")
    _require_anchor(psi, nu, "semidual_value psi")
    return float(mu.weights @ phi.values + nu.weights @ psi.values)


def coupling_from_potentials(phi: Potential, psi: Potential,
                             mu: DiscreteMeasure, nu: DiscreteMeasure,
                             cost: CostOracle, lam: float) -> np.ndarray:
    """Primal coupling gamma_il = exp((phi_i + psi_l - c_il)/lam) mu_i nu_l.

    Computed in log scale then exponentiated.  When phi is the softmin of
    psi, every row sums to mu_i.
    """
    if lam <= 0:
        raise NonPositiveLambda(f"lam must be positive, got {lam}")
    _require_anchor(phi, mu, "coupling phi")
    _require_anchor(psi, nu, "coupling psi")
    C = cost.pairwise(mu.points, nu.points)
    log_gamma = (
        (phi.values[:, None] + psi.values[None, :] - C) / lam
        + np.log(mu.weights)[:, None]
        + np.log(nu.weights)[None, :]
    )
    return np.exp(log_gamma)
