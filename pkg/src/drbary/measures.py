"""Core data types: discrete measures, cost oracles, solver configuration.

All types are immutable after construction and safe for concurrent reads.
Weights are stored in linear scale; downstream kernel arithmetic is done in
log scale (see :mod:`drbary.entropic`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    DimensionMismatch,
    EmptySupport,
    NonProbabilityWeights,
    ParameterOutOfRange,
    UnsupportedCost,
)

WEIGHT_SUM_TOL = 1e-12

SQUARED_EUCLIDEAN = "squared_euclidean"
EXPLICIT_MATRIX = "explicit_matrix"


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^d.

    points : (m, d) float array, one row per atom
    weights : (m,) float array, strictly positive, summing to one

    The constructor normalizes shapes and dtypes but defers the probability
    invariants to :meth:`issues` / :func:`validate_problem`, so that invalid
    inputs can be diagnosed instead of rejected blindly.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise DimensionMismatch(f"points must be a (m, d) array, got ndim={pts.ndim}")
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatch(
                f"{w.shape[0]} weights for {pts.shape[0]} points")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def issues(self) -> list[str]:
        """Invariant violations, empty if the measure is a valid probability."""
        out = []
        if self.size == 0:
            out.append("empty support")
        if not np.all(np.isfinite(self.points)):
            out.append("non-finite point coordinates")
        if np.any(self.weights <= 0):
            out.append("non-positive weights")
        if not np.all(np.isfinite(self.weights)):
            out.append("non-finite weights")
        elif abs(float(self.weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            out.append(f"weights sum to {self.weights.sum()!r}, not 1")
        return out

    def check_valid(self):
        """Raise if any invariant is violated."""
        probs = self.issues()
        if not probs:
            return
        msg = "; ".join(probs)
        if "empty support" in probs:
            raise EmptySupport(msg)
        if any("weight" in p for p in probs):
            raise NonProbabilityWeights(msg)
        raise DimensionMismatch(msg)

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "points": [[float(v) for v in row] for row in self.points],
            "weights": [float(v) for v in self.weights],
        })

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        obj = json.loads(text)
        return cls(points=np.asarray(obj["points"], dtype=np.float64),
                   weights=np.asarray(obj["weights"], dtype=np.float64))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.dim)] + ["weight"])
        for row, w in zip(self.points, self.weights):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DiscreteMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise EmptySupport("empty CSV")
        body = rows[1:]  # header row is mandatory
        if not body:
            raise EmptySupport("CSV has a header but no atoms")
        data = np.asarray([[float(v) for v in row] for row in body])
        return cls(points=data[:, :-1], weights=data[:, -1])

    @classmethod
    def load(cls, path) -> "DiscreteMeasure":
        text = open(path, "r", encoding="utf-8").read()
        if str(path).endswith(".csv"):
            return cls.from_csv(text)
        return cls.from_json(text)

    def save(self, path):
        text = self.to_csv() if str(path).endswith(".csv") else self.to_json()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def dirac(point) -> DiscreteMeasure:
    """Single-atom measure at the given point."""
    return DiscreteMeasure(points=np.atleast_2d(np.asarray(point, dtype=np.float64)),
                           weights=np.array([1.0]))


@dataclass(frozen=True)
class CostOracle:
    """Cost access for potential/kernel evaluations.

    ``squared_euclidean`` evaluates c(x, y) = ||x - y||^2 lazily for arbitrary
    point sets.  ``explicit_matrix`` wraps one precomputed matrix for a single
    (eval set, support) pair; shapes are checked on every lookup.

    ``c_inf`` is the supremum of the cost over all relevant point pairs:
    cross-support pairs in fixed-support mode, 4R^2 over the ball in
    free-support mode (the induced barycenter ranges over the whole domain).
    """

    kind: str = SQUARED_EUCLIDEAN
    matrix: np.ndarray | None = None
    c_inf: float = float("nan")

    def __post_init__(self):
        if self.kind not in (SQUARED_EUCLIDEAN, EXPLICIT_MATRIX):
            raise UnsupportedCost(f"unknown cost kind {self.kind!r}")
        if self.kind == EXPLICIT_MATRIX:
            mat = np.asarray(self.matrix, dtype=np.float64)
            if mat.ndim != 2:
                raise UnsupportedCost("explicit cost matrix must be 2-d")
            if np.any(mat < 0) or not np.all(np.isfinite(mat)):
                raise UnsupportedCost("cost values must be finite and non-negative")
            mat.setflags(write=False)
            object.__setattr__(self, "matrix", mat)
            if np.isnan(self.c_inf):
                object.__setattr__(self, "c_inf", float(mat.max()) if mat.size else 0.0)

    @classmethod
    def squared_euclidean(cls, c_inf: float = float("nan")) -> "CostOracle":
        return cls(kind=SQUARED_EUCLIDEAN, c_inf=c_inf)

    @classmethod
    def explicit(cls, matrix) -> "CostOracle":
        return cls(kind=EXPLICIT_MATRIX, matrix=matrix)

    def with_c_inf(self, c_inf: float) -> "CostOracle":
        return replace(self, c_inf=float(c_inf))

    def pairwise(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Cost matrix c(x_i, y_l) of shape (len(xs), len(ys))."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        if self.kind == SQUARED_EUCLIDEAN:
            if xs.shape[1] != ys.shape[1]:
                raise DimensionMismatch(
                    f"point dimensions differ: {xs.shape[1]} vs {ys.shape[1]}")
            # cdist is single-threaded and loop-ordered: results do not
            # depend on BLAS thread count.
            return cdist(xs, ys, metric="sqeuclidean")
        if self.matrix.shape != (xs.shape[0], ys.shape[0]):
            raise DimensionMismatch(
                f"explicit cost matrix is {self.matrix.shape}, "
                f"queried with ({xs.shape[0]}, {ys.shape[0]}) points")
        return self.matrix


@dataclass(frozen=True)
class SolverConfig:
    """Regularization strengths, damping, budgets, and mode.

    ``eta`` defaults to the damping factor min(1, tau/lam); overriding it
    above that value voids the monotone-improvement guarantee (the trace is
    flagged accordingly).
    """

    lam: float
    tau: float
    weights: np.ndarray
    eta: float | None = None
    max_iters: int = 1000
    tol_certificate: float = 1e-6
    mode: str = "fixed_support"
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.lam <= 0:
            raise ParameterOutOfRange(f"lam must be positive, got {self.lam}")
        if self.tau <= 0:
            raise ParameterOutOfRange(f"tau must be positive, got {self.tau}")
        if self.mode not in ("fixed_support", "free_support"):
            raise ParameterOutOfRange(f"unknown mode {self.mode!r}")
        if self.eta is not None and not (0 < self.eta <= 1):
            raise ParameterOutOfRange(f"eta must lie in (0, 1], got {self.eta}")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def damping(self) -> float:
        """Effective damping factor: user override or min(1, tau/lam)."""
        if self.eta is not None:
            return float(self.eta)
        return min(1.0, self.tau / self.lam)

    def issues(self) -> list[str]:
        out = []
        if np.any(self.weights <= 0):
            out.append("marginal weights w must be strictly positive")
        if abs(float(self.weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            out.append(f"marginal weights w sum to {self.weights.sum()!r}, not 1")
        return out


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of cross-checking a barycenter problem instance."""

    errors: list[str] = field(default_factory=list)
    c_inf: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_problem(marginals, reference, cfg: SolverConfig,
                     radius: float | None = None) -> ValidationReport:
    """Check dimensions and weight invariants; compute c_inf.

    ``reference`` is a DiscreteMeasure in fixed-support mode.  In
    free-support mode pass ``radius`` (domain ball radius) and any reference
    placeholder; c_inf is then 4R^2 over the ball rather than the
    sample-support supremum, because the barycenter density ranges over the
    whole domain.
    """
    errors = []
    if len(marginals) == 0:
        errors.append("no marginals given")
    if len(marginals) != cfg.k:
        errors.append(f"{len(marginals)} marginals but {cfg.k} weights")
    errors.extend(cfg.issues())

    dims = set()
    for j, nu in enumerate(marginals):
        for msg in nu.issues():
            errors.append(f"marginal {j}: {msg}")
        if nu.size:
            dims.add(nu.dim)

    c_inf = float("nan")
    if cfg.mode == "free_support":
        if radius is None:
            errors.append("free-support mode needs a domain radius")
        else:
            c_inf = 4.0 * float(radius) ** 2
        if len(dims) > 1:
            errors.append(f"marginals have mixed dimensions {sorted(dims)}")
    else:
        if reference is None:
            errors.append("fixed-support mode needs a reference measure")
        else:
            for msg in reference.issues():
                errors.append(f"reference: {msg}")
            if reference.size:
                dims.add(reference.dim)
        if len(dims) > 1:
            errors.append(f"supports have mixed dimensions {sorted(dims)}")
        elif not errors and reference is not None:
            cost = CostOracle.squared_euclidean()
            c_inf = max(
                (float(cost.pairwise(reference.points, nu.points).max())
                 for nu in marginals),
                default=0.0,
            )
    return ValidationReport(errors=errors, c_inf=c_inf)
