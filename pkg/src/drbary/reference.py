"""Independent brute-force solver and fixture bundles for tiny instances.

The dense ascent below maximizes the same dual objective as the production
solver but through plain gradient ascent with backtracking line search, so
agreement between the two is a meaningful cross-check of the iteration, not
of the objective code (the objective itself is re-derived at high precision
in the test suite).  Capped at 64 dual dimensions; not a production solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dual import barycenter_from_duals, dual_objective, pushforward_marginal
from .entropic import Potential
from .errors import DimensionTooLarge
from .measures import CostOracle, DiscreteMeasure, SolverConfig

MAX_DUAL_DIM = 64


@dataclass
class ReferenceSolution:
    value: float
    psi: list[Potential]
    mu: np.ndarray
    grad_norm: float
    iterations: int


def _split(theta: np.ndarray, sizes) -> list[np.ndarray]:
    out, at = [], 0
    for m in sizes:
        out.append(theta[at:at + m])
        at += m
    return out


class _DenseEvaluator:
    """Value and gradient of the dual objective, written out plainly.

    Deliberately independent of the solver's iteration kernels: cost
    matrices are assembled once, every reduction goes through scipy's
    logsumexp, and nothing is shared with the damped update path.
    """

    def __init__(self, marginals, reference, cost, cfg):
        from scipy.special import logsumexp as sp_lse

        self._lse = sp_lse
        self.cfg = cfg
        self.sizes = [nu.size for nu in marginals]
        self.nu_w = [nu.weights for nu in marginals]
        self.log_nu = [np.log(nu.weights) for nu in marginals]
        self.log_pi = np.log(reference.weights)
        self.C = [cost.pairwise(reference.points, nu.points) for nu in marginals]

    def __call__(self, theta):
        cfg = self.cfg
        blocks = _split(theta, self.sizes)
        lin = 0.0
        v = np.zeros(self.log_pi.shape[0])
        log_kernels = []
        for j, psi_j in enumerate(blocks):
            a = self.log_nu[j][None, :] + (psi_j[None, :] - self.C[j]) / cfg.lam
            phi_j = -cfg.lam * self._lse(a, axis=1)
            log_kernels.append(a + phi_j[:, None] / cfg.lam)
            v += cfg.weights[j] * phi_j
            lin += cfg.weights[j] * float(self.nu_w[j] @ psi_j)
        s = self.log_pi - v / cfg.tau
        log_Z = float(self._lse(s))
        log_mu = s - log_Z
        grad_blocks = []
        for j in range(len(blocks)):
            # mass_l = nu_l * d(nu_psi)/d(nu)(y_l), directly in one reduction
            mass = np.exp(self._lse(log_kernels[j] + log_mu[:, None], axis=0))
            grad_blocks.append(cfg.weights[j] * (self.nu_w[j] - mass))
        return lin - cfg.tau * log_Z, np.concatenate(grad_blocks), np.exp(log_mu)


def dense_dual_ascent(marginals, reference: DiscreteMeasure, cost: CostOracle,
                      cfg: SolverConfig, iters: int = 50000,
                      grad_tol: float = 1e-10,
                      x0: np.ndarray | None = None) -> ReferenceSolution:
    """Gradient ascent with backtracking line search on the dual objective.

    The exact gradient block for marginal j is w_j * (nu^j - nu^j_psi); the
    trial step follows the Barzilai-Borwein secant rule, backtracked until
    the Armijo increase condition holds.  Because every nu^j_psi is a
    probability measure, the gradient has zero mean per block, so the
    translation-invariant directions never appear and the gradient norm is
    a valid stationarity certificate.
    """
    sizes = [nu.size for nu in marginals]
    dim = int(sum(sizes))
    if dim > MAX_DUAL_DIM:
        raise DimensionTooLarge(f"total dual dimension {dim} exceeds {MAX_DUAL_DIM}")

    evaluate = _DenseEvaluator(marginals, reference, cost, cfg)

    def unpack(theta):
        return [Potential(block, f"nu[{j}]")
                for j, block in enumerate(_split(theta, sizes))]

    theta = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    val, grad, mu = evaluate(theta)
    alpha = 1.0
    t = 0
    saturated = False
    for t in range(1, iters + 1):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) <= grad_tol:
            t -= 1
            break
        alpha = min(alpha * 4.0, 1e12)
        while True:
            cand = theta + alpha * grad
            cand_val, cand_grad, cand_mu = evaluate(cand)
            if cand_val >= val + 1e-4 * alpha * gnorm2 or alpha < 1e-18:
                break
            alpha *= 0.5
        if cand_val <= val and alpha < 1e-15:
            # objective saturated in float64; the gradient still carries
            # usable precision, so polish on the gradient norm instead
            saturated = True
            break
        d_theta = cand - theta
        d_grad = cand_grad - grad
        theta, val, grad, mu = cand, cand_val, cand_grad, cand_mu
        curv = -float(d_theta @ d_grad)
        if curv > 0:
            alpha = float(d_theta @ d_theta) / curv  # BB1 secant step
    if saturated:
        # Newton polish on the stationarity equations.  The Hessian is
        # singular along per-block constant shifts, so take the
        # minimum-norm least-squares step; the gradient is orthogonal to
        # that null space, which keeps the step well defined.
        gnorm = float(np.linalg.norm(grad))
        h = 1e-6
        for _ in range(30):
            if gnorm <= grad_tol:
                break
            H = np.empty((dim, dim))
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = h
                H[:, i] = (evaluate(theta + e)[1] - evaluate(theta - e)[1]) / (2.0 * h)
            step = np.linalg.lstsq(H, -grad, rcond=1e-10)[0]
            scale = 1.0
            improved = False
            for _ in range(20):
                cand = theta + scale * step
                cand_val, cand_grad, cand_mu = evaluate(cand)
                cand_gnorm = float(np.linalg.norm(cand_grad))
                if cand_gnorm < gnorm:
                    theta, val, grad, mu = cand, cand_val, cand_grad, cand_mu
                    gnorm = cand_gnorm
                    improved = True
                    break
                scale *= 0.5
            if not improved:
                break
    return ReferenceSolution(value=val, psi=unpack(theta), mu=mu,
                             grad_norm=float(np.linalg.norm(grad)), iterations=t)


def finite_difference_gradient(f, point: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for i in range(point.size):
        e = np.zeros_like(point)
        e.flat[i] = h
        grad.flat[i] = (f(point + e) - f(point - e)) / (2.0 * h)
    return grad


# -- random instances and fixture bundles ---------------------------------


@dataclass
class Instance:
    """A complete fixed-support barycenter problem."""

    marginals: list[DiscreteMeasure]
    reference: DiscreteMeasure
    cfg: SolverConfig

    def cost(self) -> CostOracle:
        cost = CostOracle.squared_euclidean()
        c_inf = max(float(cost.pairwise(self.reference.points, nu.points).max())
                    for nu in self.marginals)
        return cost.with_c_inf(c_inf)


def _random_simplex(rng, m):
    w = rng.uniform(0.2, 1.0, size=m)
    return w / w.sum()


def random_instance(seed: int, k: int = 2, m_range=(3, 20), ref_range=(5, 50),
                    d: int = 2, lam: float = 1.0, tau: float = 1.0,
                    scale: float = 1.0, **cfg_kwargs) -> Instance:
    """Random point-cloud instance; supports drawn uniformly in a box."""
    rng = np.random.default_rng(seed)
    marginals = []
    for _ in range(k):
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        marginals.append(DiscreteMeasure(
            points=rng.uniform(-scale, scale, size=(m, d)),
            weights=_random_simplex(rng, m)))
    n_ref = int(rng.integers(ref_range[0], ref_range[1] + 1))
    reference = DiscreteMeasure(points=rng.uniform(-scale, scale, size=(n_ref, d)),
                                weights=_random_simplex(rng, n_ref))
    cfg = SolverConfig(lam=lam, tau=tau, weights=_random_simplex(rng, k),
                       seed=seed, **cfg_kwargs)
    return Instance(marginals=marginals, reference=reference, cfg=cfg)


def measure_to_dict(m: DiscreteMeasure) -> dict:
    return {"points": [[float(v) for v in row] for row in m.points],
            "weights": [float(v) for v in m.weights]}


def instance_to_dict(inst: Instance) -> dict:
    return {
        "lambda": inst.cfg.lam,
        "tau": inst.cfg.tau,
        "weights": [float(v) for v in inst.cfg.weights],
        "marginals": [measure_to_dict(nu) for nu in inst.marginals],
        "reference": measure_to_dict(inst.reference),
    }


def instance_from_dict(obj: dict, **cfg_kwargs) -> Instance:
    cfg = SolverConfig(lam=float(obj["lambda"]), tau=float(obj["tau"]),
                       weights=np.asarray(obj["weights"]), **cfg_kwargs)
    return Instance(
        marginals=[DiscreteMeasure(np.asarray(m["points"]), np.asarray(m["weights"]))
                   for m in obj["marginals"]],
        reference=DiscreteMeasure(np.asarray(obj["reference"]["points"]),
                                  np.asarray(obj["reference"]["weights"])),
        cfg=cfg,
    )


def make_fixture(name: str, inst: Instance, iters: int = 20000) -> dict:
    """Solve an instance to stationarity and freeze the result."""
    sol = dense_dual_ascent(inst.marginals, inst.reference, inst.cost(),
                            inst.cfg, iters=iters)
    return {
        "name": name,
        "instance": instance_to_dict(inst),
        "E_star": sol.value,
        "psi_star": [[float(v) for v in p.values] for p in sol.psi],
        "mu_star": [float(v) for v in sol.mu],
        "grad_norm": sol.grad_norm,
    }


def default_fixture_instances() -> list[tuple[str, Instance]]:
    """The shipped oracle fixture set: small, covers tau >=, =, < lam."""
    specs = [
        ("k2_balanced", dict(seed=101, k=2, m_range=(3, 5), ref_range=(4, 6), lam=1.0, tau=1.0)),
        ("k2_debiased", dict(seed=102, k=2, m_range=(3, 5), ref_range=(4, 6), lam=1.0, tau=0.5)),
        ("k3_outer_heavy", dict(seed=103, k=3, m_range=(3, 4), ref_range=(5, 8), lam=0.5, tau=2.0)),
        ("k2_small_lam", dict(seed=104, k=2, m_range=(3, 4), ref_range=(4, 6), lam=0.5, tau=0.5)),
        ("k1_self", dict(seed=105, k=1, m_range=(3, 3), ref_range=(3, 3), lam=1.0, tau=1.0)),
        ("k2_1d", dict(seed=106, k=2, m_range=(4, 6), ref_range=(8, 10), d=1, lam=2.0, tau=1.0)),
    ]
    return [(name, random_instance(**kw)) for name, kw in specs]


def write_fixtures(path_dir, iters: int = 20000) -> list[str]:
    import os

    os.makedirs(path_dir, exist_ok=True)
    written = []
    for name, inst in default_fixture_instances():
        fixture = make_fixture(name, inst, iters=iters)
        out = os.path.join(path_dir, f"{name}.json")
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(fixture, fh, indent=1)
        written.append(out)
    return written


def load_fixture(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
