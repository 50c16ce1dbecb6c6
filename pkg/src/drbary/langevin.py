"""Unadjusted Langevin sampling from the free-support barycenter.

The barycenter induced by duals psi is mu_psi proportional to
exp(-V_psi(x)/tau) restricted to the domain X, with V_psi = sum_j w_j phi^j.
ULA cannot target a constrained measure directly, so sampling happens from
the smoothed surrogate

    mu_{psi,sigma} propto exp(-V_psi(x)/tau - dist(x, X)^2 / (2 sigma^2))

supported on all of R^d.  The smoothing error in total variation and the
smoothness constant of the surrogate potential are both explicit, and the
ULA budget (step size, iteration count) is derived from them plus an LSI
constant bound.  The LSI constant is NOT derived here: the default is a
documented heuristic and every certificate that depends on it is flagged as
non-certified unless the caller supplies a proven bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .entropic import Potential
from .errors import BudgetInvariantViolated, ParameterOutOfRange, UnsupportedCost
from .measures import SQUARED_EUCLIDEAN, CostOracle, DiscreteMeasure


@dataclass(frozen=True)
class Domain:
    """Ball of radius R centered at the origin, or an axis-aligned box."""

    kind: str
    radius: float = float("nan")
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @classmethod
    def ball(cls, radius: float) -> "Domain":
        if radius <= 0:
            raise ParameterOutOfRange(f"ball radius must be positive, got {radius}")
        return cls(kind="ball", radius=float(radius))

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(lo >= hi):
            raise ParameterOutOfRange("box needs lo < hi coordinate-wise")
        return cls(kind="box", lo=lo, hi=hi)

    def enclosing_radius(self) -> float:
        if self.kind == "ball":
            return self.radius
        corners = np.maximum(np.abs(self.lo), np.abs(self.hi))
        return float(np.linalg.norm(corners))


def project_domain(x: np.ndarray, domain: Domain) -> np.ndarray:
    """Euclidean projection onto the domain; closed form for ball and box."""
    x = np.asarray(x, dtype=np.float64)
    if domain.kind == "ball":
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        scale = np.where(norms > domain.radius, domain.radius / np.maximum(norms, 1e-300), 1.0)
        return x * scale
    return np.clip(x, domain.lo, domain.hi)


@dataclass(frozen=True)
class SmoothedTarget:
    """The ULA target: smoothed barycenter density parameters."""

    psi: list[Potential]
    marginals: list[DiscreteMeasure]
    weights: np.ndarray
    lam: float
    tau: float
    sigma: float
    domain: Domain

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterOutOfRange(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "weights",
                           np.asarray(self.weights, dtype=np.float64))


def _softmax_barycenters(x: np.ndarray, target: SmoothedTarget):
    """For each j, phi^j values and softmax-weighted atom means at x (batched)."""
    x = np.atleast_2d(x)
    phis = np.empty((len(target.marginals), x.shape[0]))
    means = np.empty((len(target.marginals), x.shape[0], x.shape[1]))
    for j, (nu, psi_j) in enumerate(zip(target.marginals, target.psi)):
        diff = x[:, None, :] - nu.points[None, :, :]
        sq = np.einsum("ild,ild->il", diff, diff)
        logits = np.log(nu.weights)[None, :] + (psi_j.values[None, :] - sq) / target.lam
        mx = logits.max(axis=1, keepdims=True)
        p = np.exp(logits - mx)
        z = p.sum(axis=1, keepdims=True)
        phis[j] = -target.lam * (np.log(z[:, 0]) + mx[:, 0])
        means[j] = (p / z) @ nu.points
    return phis, means


def smoothed_potential_value(x: np.ndarray, target: SmoothedTarget) -> np.ndarray:
    """V_sigma(x) = sum_j w_j phi^j(x) / tau + dist(x, X)^2 / (2 sigma^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    phis, _ = _softmax_barycenters(x, target)
    v = (target.weights @ phis) / target.tau
    gap = x - project_domain(x, target.domain)
    return v + np.einsum("id,id->i", gap, gap) / (2.0 * target.sigma**2)


def grad_V_sigma(x: np.ndarray, target: SmoothedTarget,
                 marginals=None, cost: CostOracle | None = None) -> np.ndarray:
    """Gradient of the smoothed potential, batched over rows of x.

    For squared cost, grad phi^j(x) = 2 (x - E_{rho_x}[Y]) with rho_x the
    softmax over atoms; the boundary term contributes (x - proj(x)) / sigma^2
    (zero inside, any subgradient choice on the boundary itself is fine).
    """
    if cost is not None and cost.kind != SQUARED_EUCLIDEAN:
        raise UnsupportedCost("analytic gradients need the squared Euclidean cost")
    x_in = np.asarray(x, dtype=np.float64)
    single = x_in.ndim == 1
    x2 = np.atleast_2d(x_in)
    _, means = _softmax_barycenters(x2, target)
    g = np.zeros_like(x2)
    for j, w_j in enumerate(target.weights):
        g += w_j * 2.0 * (x2 - means[j])
    g /= target.tau
    g += (x2 - project_domain(x2, target.domain)) / target.sigma**2
    return g[0] if single else g


def compute_lipschitz(target: SmoothedTarget, marginals=None) -> float:
    """Gradient Lipschitz bound of the smoothed potential.

    L_sigma = 1/tau + 4 R^2 max_j m_j / (tau lam) + 1/sigma^2, with R the
    (enclosing-ball) radius of the domain.  Squared cost only.
    """
    marginals = marginals if marginals is not None else target.marginals
    R = target.domain.enclosing_radius()
    max_m = max(nu.size for nu in marginals)
    return (1.0 / target.tau
            + 4.0 * R**2 * max_m / (target.tau * target.lam)
            + 1.0 / target.sigma**2)


def smoothing_tv_bound(sigma: float, R: float, tau: float, d: int) -> float:
    """Certified TV between the constrained and smoothed barycenters.

    Valid for sigma in (0, 1/4]:
    TV <= 2 sigma exp(8 R^2/tau) [(4 R d^(-1/4))^(d-1) + 1], capped at 1.
    """
    if sigma > 0.25:
        return 1.0
    raw = 2.0 * sigma * math.exp(8.0 * R**2 / tau) * ((4.0 * R * d**-0.25) ** (d - 1) + 1.0)
    return min(1.0, raw)


def choose_sigma(eps: float, m: int, R: float, tau: float, d: int) -> tuple[float, float]:
    """Smoothing width for a target oracle accuracy, plus its TV bound.

    Inverts the smoothing TV bound at budget eps^2/(32 m) and caps at 1/4;
    when uncapped the returned bound is the budget itself (exact inverse).
    """
    if eps <= 0:
        raise ParameterOutOfRange(f"eps must be positive, got {eps}")
    budget = eps**2 / (32.0 * m)
    factor = 2.0 * math.exp(8.0 * R**2 / tau) * ((4.0 * R * d**-0.25) ** (d - 1) + 1.0)
    sigma = budget / factor
    if sigma <= 0.25:
        return sigma, budget
    return 0.25, smoothing_tv_bound(0.25, R, tau, d)


def kl_init_bound(c_inf: float, tau: float, d: int, L_sigma: float) -> float:
    """KL between the Gaussian initialization and the smoothed target."""
    return c_inf / tau + 0.5 * d * math.log(L_sigma / (2.0 * math.pi))


@dataclass(frozen=True)
class SamplerBudget:
    """ULA step size and iteration count, with the constants behind them.

    The certified regime requires step <= (1/(8 L^2 C)) min(1, eps_kl/(4 d))
    and iters >= (2 C / step) log(2 kl_init / eps_kl).  ``lsi_certified``
    records whether C_sigma is a proven LSI bound; the shipped default
    heuristic is not, and every downstream certificate inherits the flag.
    """

    L_sigma: float
    C_sigma: float
    step: float
    iters: int
    kl_init: float
    lsi_certified: bool = False

    @classmethod
    def for_accuracy(cls, eps_kl: float, L_sigma: float, C_sigma: float,
                     kl_init: float, d: int, lsi_certified: bool = False) -> "SamplerBudget":
        if eps_kl <= 0:
            raise ParameterOutOfRange(f"eps_kl must be positive, got {eps_kl}")
        step = (1.0 / (8.0 * L_sigma**2 * C_sigma)) * min(1.0, eps_kl / (4.0 * d))
        iters = math.ceil((2.0 * C_sigma / step) * math.log(2.0 * kl_init / eps_kl))
        return cls(L_sigma=L_sigma, C_sigma=C_sigma, step=step,
                   iters=max(iters, 1), kl_init=kl_init, lsi_certified=lsi_certified)

    @classmethod
    def practical(cls, step: float, iters: int, L_sigma: float, C_sigma: float,
                  kl_init: float) -> "SamplerBudget":
        """Budget outside the certified regime; use with enforce_budget=False."""
        return cls(L_sigma=L_sigma, C_sigma=C_sigma, step=float(step),
                   iters=int(iters), kl_init=kl_init, lsi_certified=False)

    def certified_eps_kl(self, d: int) -> float:
        """Smallest KL accuracy the theorem grants this budget; inf if none.

        Monotone non-increasing in the iteration count.
        """
        if 8.0 * self.L_sigma**2 * self.C_sigma * self.step > 1.0:
            return float("inf")
        from_step = 32.0 * d * self.L_sigma**2 * self.C_sigma * self.step
        from_iters = 2.0 * self.kl_init * math.exp(
            -self.iters * self.step / (2.0 * self.C_sigma))
        return max(from_step, from_iters)


def default_lsi_constant(target: SmoothedTarget, L_sigma: float) -> float:
    """Heuristic LSI bound: Holley-Stroock over the ball, inflated for the
    boundary smoothing term.  NOT a certified constant."""
    R = target.domain.enclosing_radius()
    base = math.exp(8.0 * R**2 / target.tau) * R**2
    return base * (1.0 + 1.0 / (L_sigma * target.sigma**2))


def stationary_point(target: SmoothedTarget, marginals=None,
                     cost: CostOracle | None = None,
                     grad_tol: float = 1e-6, max_steps: int = 100000):
    """Projected gradient descent on V_psi/tau over the domain.

    Step 1/L_V with L_V the smoothness bound without the boundary term.
    Returns (point, projected-gradient norm); best effort, the residual is
    the caller's to inspect.
    """
    marginals = marginals if marginals is not None else target.marginals
    L_V = compute_lipschitz(target, marginals) - 1.0 / target.sigma**2
    step = 1.0 / L_V
    x = np.zeros(marginals[0].dim)
    for nu, w_j in zip(marginals, target.weights):
        x = x + w_j * (nu.weights @ nu.points)
    x = project_domain(x, target.domain)
    res = float("inf")
    for _ in range(max_steps):
        _, means = _softmax_barycenters(x[None, :], target)
        g = np.zeros_like(x)
        for j, w_j in enumerate(target.weights):
            g += w_j * 2.0 * (x - means[j][0])
        g /= target.tau
        x_next = project_domain(x - step * g, target.domain)
        res = float(np.linalg.norm(x - x_next) / step)
        if res <= grad_tol:
            x = x_next
            break
        x = x_next
    return x, res


@dataclass
class UlaResult:
    """Terminal chain points plus the accuracy certificate."""

    samples: np.ndarray
    eps_mu: float
    eps_kl: float
    smoothing_tv: float
    budget_valid: bool
    lsi_certified: bool
    init_center: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.budget_valid and self.lsi_certified

    def sidecar_json(self, budget: SamplerBudget, sigma: float) -> str:
        return json.dumps({
            "sigma": sigma,
            "step": budget.step,
            "iters": budget.iters,
            "L_sigma": budget.L_sigma,
            "C_sigma": budget.C_sigma,
            "kl_init": budget.kl_init,
            "eps_kl": self.eps_kl,
            "smoothing_tv": self.smoothing_tv,
            "eps_mu_certified": self.eps_mu,
            "budget_valid": self.budget_valid,
            "lsi_certified": self.lsi_certified,
            "n_samples": int(self.samples.shape[0]),
        }, indent=1)


def ula_sample(target: SmoothedTarget, budget: SamplerBudget, n: int,
               seed: int, smoothing_tv: float | None = None,
               center: np.ndarray | None = None,
               enforce_budget: bool = True) -> UlaResult:
    """Run n independent ULA chains and certify the total TV error.

    Each chain starts at N(x_psi, I_d) with x_psi a stationary point of the
    unsmoothed potential, and runs budget.iters steps of

        x <- x - step * grad V_sigma(x) + sqrt(2 step) * Z.

    The certificate is eps_mu = smoothing TV + sqrt(eps_kl / 2) (Pinsker),
    with eps_kl the KL accuracy the budget buys.  When the budget violates
    the step-size constraint the certificate is infinite; pass
    enforce_budget=False to run anyway (the result is flagged).
    """
    d = target.marginals[0].dim
    eps_kl = budget.certified_eps_kl(d)
    budget_valid = math.isfinite(eps_kl)
    if enforce_budget and not budget_valid:
        raise BudgetInvariantViolated(
            "step size exceeds 1/(8 L^2 C); certificate undefined "
            "(pass enforce_budget=False to run uncertified)")
    if center is None:
        center, _ = stationary_point(target)
    center = np.asarray(center, dtype=np.float64)

    rng = np.random.Generator(np.random.Philox(seed))
    x = center[None, :] + rng.standard_normal((n, d))
    step = budget.step
    noise_scale = math.sqrt(2.0 * step)
    for _ in range(budget.iters):
        x = x - step * grad_V_sigma(x, target) + noise_scale * rng.standard_normal((n, d))

    if smoothing_tv is None:
        smoothing_tv = smoothing_tv_bound(target.sigma,
                                          target.domain.enclosing_radius(),
                                          target.tau, d)
    eps_mu = min(1.0, smoothing_tv + math.sqrt(max(eps_kl, 0.0) / 2.0)) \
        if math.isfinite(eps_kl) else 1.0
    return UlaResult(samples=x, eps_mu=eps_mu, eps_kl=eps_kl,
                     smoothing_tv=smoothing_tv, budget_valid=budget_valid,
                     lsi_certified=budget.lsi_certified, init_center=center)


def samples_to_csv(samples: np.ndarray) -> str:
    d = samples.shape[1]
    lines = [",".join(f"x{i}" for i in range(d))]
    for row in samples:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
