"""Discrete probability measures, couplings, and their geometric transforms.

Measures are weighted point clouds in R^d. Construction canonicalizes the
support: duplicate atoms are merged (weights summed), atoms are sorted
lexicographically, and weights are renormalized when their total is within
``WEIGHT_TOL`` of one (rejected otherwise). Two measures built from the same
atoms in any order therefore compare equal, and marginal comparisons are
well defined.

Couplings are dense joint-probability tensors over the product of per-axis
supports, with the declared marginal measure attached to each axis.

All values are immutable after construction and safe to share across
threads; nothing in this module keeps global state.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WEIGHT_TOL",
    "SYMMETRIZE_MAX_AXES",
    "DiscreteMeasure",
    "CouplingTensor",
    "star",
    "translate",
    "separated_mixture",
    "product",
    "symmetrize",
    "marginal",
    "moment",
    "random_coupling",
    "grid_measure",
]

# Totals within this tolerance of 1 are renormalized; anything further off
# is rejected as malformed input.
WEIGHT_TOL = 1e-12

# Exact symmetrization enumerates all N! coordinate permutations.
SYMMETRIZE_MAX_AXES = 6


def star(v):
    """Apply the axis map (v1, v2, ..., vd) -> (-2*v1, v2, ..., vd).

    The first coordinate is the axis joining the two molecular centers;
    it is scaled by -2 while transverse coordinates pass through. The map
    acts on the last axis of ``v``, so batches of vectors are accepted.
    """
    out = np.array(v, dtype=float)
    if out.shape == ():
        raise ValueError("star expects a vector, got a scalar")
    out[..., 0] *= -2.0
    return out


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure supported on finitely many points of R^d.

    Parameters
    ----------
    points : array_like
        Support points, shape ``(n, d)``. A 1-d array is read as a single
        point (use :meth:`from_1d` for several scalar atoms).
    weights : array_like
        Nonnegative masses, shape ``(n,)``, summing to 1 within
        ``WEIGHT_TOL``.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] < 1 or pts.shape[0] < 1:
            raise ValueError(f"points must have shape (n, d) with n, d >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts = pts + 0.0  # normalize -0.0 so byte-level lookups agree with ==
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1 within {WEIGHT_TOL}")
        # Merge duplicate atoms and sort the support lexicographically.
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        merged = np.zeros(uniq.shape[0])
        np.add.at(merged, inverse.ravel(), w)
        merged = merged / merged.sum()
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "points", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        """Unit mass at a single point."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(p[None, :], np.ones(1))

    @classmethod
    def from_1d(cls, xs, weights=None) -> "DiscreteMeasure":
        """Measure on scalar atoms ``xs`` (uniform weights by default)."""
        xs = np.asarray(xs, dtype=float).ravel()
        if weights is None:
            weights = np.full(xs.shape[0], 1.0 / xs.shape[0])
        return cls(xs[:, None], weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def is_dirac(self) -> bool:
        return self.size == 1

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def mean1(self) -> float:
        """Weighted mean of the first coordinate."""
        return float(self.weights @ self.points[:, 0])

    def second_moment(self) -> float:
        """Weighted mean of |x|^2."""
        return float(self.weights @ np.sum(self.points**2, axis=1))

    def second_moment1(self) -> float:
        """Weighted mean of (x1)^2."""
        return float(self.weights @ self.points[:, 0] ** 2)

    def allclose(self, other: "DiscreteMeasure", atol: float = 1e-12) -> bool:
        """Same canonical support (exactly) and weights within ``atol``."""
        return (
            self.dim == other.dim
            and self.size == other.size
            and np.array_equal(self.points, other.points)
            and bool(np.max(np.abs(self.weights - other.weights)) <= atol)
        )

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(
            self.weights, other.weights
        )

    def __hash__(self):
        return hash((self.points.tobytes(), self.weights.tobytes()))

    def __repr__(self):
        return f"DiscreteMeasure(n={self.size}, d={self.dim})"

    def to_json(self) -> dict:
        """Wire format ``{"d": int, "points": [[..]], "weights": [..]}``."""
        return {
            "d": self.dim,
            "points": [[float(c) for c in p] for p in self.points],
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        pts = np.asarray(obj["points"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = cls(pts, np.asarray(obj["weights"], dtype=float))
        if "d" in obj and int(obj["d"]) != m.dim:
            raise ValueError(f"declared d={obj['d']} but points have dimension {m.dim}")
        return m


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """Joint probability over the product of N discrete supports.

    ``axes`` carries the declared marginal measure of every axis; the
    ``entries`` tensor holds nonnegative mass per index tuple and must have
    total mass 1 within ``WEIGHT_TOL``. Feasibility (axis marginals equal
    the declared measures) is checked on demand via
    :meth:`max_marginal_error`, not at construction.
    """

    axes: tuple
    entries: np.ndarray

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes:
            raise ValueError("coupling needs at least one axis")
        for ax in axes:
            if not isinstance(ax, DiscreteMeasure):
                raise TypeError("axes must be DiscreteMeasure instances")
        ent = np.asarray(self.entries, dtype=float)
        expected = tuple(ax.size for ax in axes)
        if ent.shape != expected:
            raise ValueError(f"entries shape {ent.shape} does not match supports {expected}")
        if not np.all(np.isfinite(ent)):
            raise ValueError("entries must be finite")
        if ent.min(initial=0.0) < -WEIGHT_TOL:
            raise ValueError("entries must be nonnegative")
        ent = np.maximum(ent, 0.0)
        total = float(ent.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"total mass {total!r}, expected 1 within {WEIGHT_TOL}")
        ent.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "entries", ent)

    @classmethod
    def from_measure(cls, m: DiscreteMeasure) -> "CouplingTensor":
        """A single measure viewed as a 1-axis coupling."""
        return cls((m,), m.weights.copy())

    @classmethod
    def from_sparse(cls, axes, items) -> "CouplingTensor":
        """Build from ``(index_tuple, mass)`` pairs."""
        axes = tuple(axes)
        ent = np.zeros(tuple(ax.size for ax in axes))
        for idx, mass in items:
            ent[tuple(idx)] += mass
        return cls(axes, ent)

    @property
    def n_axes(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.entries.shape

    def marginal_weights(self, i: int) -> np.ndarray:
        other = tuple(k for k in range(self.n_axes) if k != i)
        return self.entries.sum(axis=other)

    def max_marginal_error(self) -> float:
        """Max over axes of the L1 gap to the declared marginal."""
        return max(
            float(np.abs(self.marginal_weights(i) - self.axes[i].weights).sum())
            for i in range(self.n_axes)
        )

    def support(self, mass_tol: float = 0.0):
        """Index tuples carrying mass above ``mass_tol``, with masses."""
        idx = np.argwhere(self.entries > mass_tol)
        return [(tuple(int(i) for i in row), float(self.entries[tuple(row)])) for row in idx]

    def __repr__(self):
        return f"CouplingTensor(shape={self.shape})"


def translate(obj, shift):
    """Shift every support point by ``shift`` (axis-wise on couplings)."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    if isinstance(obj, DiscreteMeasure):
        if shift.shape != (obj.dim,):
            raise ValueError(f"shift has dimension {shift.shape[0]}, measure has {obj.dim}")
        return DiscreteMeasure(obj.points + shift, obj.weights)
    if isinstance(obj, CouplingTensor):
        return CouplingTensor(tuple(translate(ax, shift) for ax in obj.axes), obj.entries)
    raise TypeError(f"cannot translate {type(obj).__name__}")


def separated_mixture(rho_a, rho_b, n_a: int, n_b: int, eta: float) -> DiscreteMeasure:
    """Single-particle density of two fragments placed 1/eta apart.

    Fragment A (``n_a`` electrons, density ``rho_a``) is recentered at
    ``+e1/(2*eta)`` and fragment B at ``-e1/(2*eta)``; the mixture weights
    are the electron fractions ``n_a/(n_a+n_b)`` and ``n_b/(n_a+n_b)``.
    Overlapping translated atoms merge with summed weight.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if n_a < 1 or n_b < 1:
        raise ValueError("electron counts must be >= 1")
    if rho_a.dim != rho_b.dim:
        raise ValueError("fragment densities must share dimension")
    shift = np.zeros(rho_a.dim)
    shift[0] = 1.0 / (2.0 * eta)
    frac_a = n_a / (n_a + n_b)
    frac_b = n_b / (n_a + n_b)
    pts = np.vstack([rho_a.points + shift, rho_b.points - shift])
    w = np.concatenate([frac_a * rho_a.weights, frac_b * rho_b.weights])
    return DiscreteMeasure(pts, w)


def product(gamma_a: CouplingTensor, gamma_b: CouplingTensor) -> CouplingTensor:
    """Independent product coupling: entries multiply, axes concatenate."""
    return CouplingTensor(
        gamma_a.axes + gamma_b.axes,
        np.multiply.outer(gamma_a.entries, gamma_b.entries),
    )


def symmetrize(gamma: CouplingTensor) -> CouplingTensor:
    """Average a coupling over all N! coordinate permutations.

    The axes are first embedded into the union of their supports so that
    permuted copies live on a common product space; the result is
    permutation-invariant and every output marginal equals the average of
    the input marginals.
    """
    n = gamma.n_axes
    if n > SYMMETRIZE_MAX_AXES:
        raise ValueError(f"exact symmetrization is limited to {SYMMETRIZE_MAX_AXES} axes, got {n}")
    dims = {ax.dim for ax in gamma.axes}
    if len(dims) != 1:
        raise ValueError("all axes must share the ambient dimension")
    union = np.unique(np.vstack([ax.points for ax in gamma.axes]), axis=0)
    lookup = {union[i].tobytes(): i for i in range(union.shape[0])}
    maps = [np.array([lookup[p.tobytes()] for p in ax.points]) for ax in gamma.axes]
    embedded = np.zeros((union.shape[0],) * n)
    embedded[np.ix_(*maps)] = gamma.entries
    acc = np.zeros_like(embedded)
    for perm in itertools.permutations(range(n)):
        acc += np.transpose(embedded, perm)
    acc /= math.factorial(n)
    other = tuple(range(1, n))
    axis_measure = DiscreteMeasure(union, acc.sum(axis=other) if n > 1 else acc)
    return CouplingTensor((axis_measure,) * n, acc)


def marginal(gamma: CouplingTensor, i: int) -> DiscreteMeasure:
    """Push a coupling forward onto its ``i``-th axis."""
    if not 0 <= i < gamma.n_axes:
        raise IndexError(f"axis {i} out of range for {gamma.n_axes} axes")
    return DiscreteMeasure(gamma.axes[i].points, gamma.marginal_weights(i))


_MOMENT_KINDS = ("mean", "mean-coordinate-1", "second-moment", "second-moment-coordinate-1")


def moment(m: DiscreteMeasure, kind: str):
    """Weighted moment of a measure; ``kind`` selects the monomial."""
    if kind == "mean":
        return m.mean()
    if kind == "mean-coordinate-1":
        return m.mean1()
    if kind == "second-moment":
        return m.second_moment()
    if kind == "second-moment-coordinate-1":
        return m.second_moment1()
    raise ValueError(f"unknown moment kind {kind!r}; expected one of {_MOMENT_KINDS}")


def random_coupling(marginals, rng, rounds: int = 3) -> CouplingTensor:
    """Sample a feasible coupling of the given marginals.

    Mixes ``rounds`` greedy random fillings (pick an atom per axis, assign
    the minimum remaining capacity) with Dirichlet weights. The fillings
    consume capacities exactly, so the axis marginals match the declared
    measures to machine precision.
    """
    marginals = list(marginals)
    rng = np.random.default_rng(rng)
    parts = [_greedy_fill(marginals, rng) for _ in range(rounds)]
    lam = rng.dirichlet(np.ones(rounds))
    ent = sum(l * p for l, p in zip(lam, parts))
    return CouplingTensor(tuple(marginals), ent)


def _greedy_fill(marginals, rng):
    caps = [ax.weights.copy() for ax in marginals]
    ent = np.zeros(tuple(ax.size for ax in marginals))
    while True:
        choice = []
        for cap in caps:
            avail = np.flatnonzero(cap > 1e-15)
            if avail.size == 0:
                return ent
            choice.append(int(rng.choice(avail)))
        m = min(caps[k][i] for k, i in enumerate(choice))
        ent[tuple(choice)] += m
        for k, i in enumerate(choice):
            caps[k][i] -= m


_GAUSSIAN_RE = re.compile(r"gaussian\(([^)]+)\)")


def grid_measure(box, n: int, density: str = "uniform", jitter: float = 0.0, rng=None) -> DiscreteMeasure:
    """Build a measure from a grid spec.

    ``box`` is a list of per-dimension ``[lo, hi]`` intervals and ``n`` the
    number of cells per dimension (so ``n**d`` atoms at cell centers).
    ``density`` is ``"uniform"``, ``"gaussian(sigma)"`` (weights from an
    isotropic Gaussian at the box center), or ``"atoms"`` (``n`` points
    drawn uniformly in the box, equal weights). ``jitter`` displaces each
    grid point by a uniform fraction of the half cell per coordinate;
    ``jitter=1`` is half-cell jitter, the genericity proxy used by the
    Monge diagnostics.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a list of [lo, hi] pairs with hi > lo")
    if n < 1:
        raise ValueError("n must be >= 1")
    d = box.shape[0]
    rng = np.random.default_rng(rng)
    if density == "atoms":
        pts = rng.uniform(box[:, 0], box[:, 1], size=(n, d))
        return DiscreteMeasure(pts, np.full(n, 1.0 / n))
    cell = (box[:, 1] - box[:, 0]) / n
    axes_1d = [box[k, 0] + (np.arange(n) + 0.5) * cell[k] for k in range(d)]
    mesh = np.meshgrid(*axes_1d, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    if jitter:
        pts = pts + rng.uniform(-1.0, 1.0, size=pts.shape) * (jitter * cell / 2.0)
    if density == "uniform":
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        match = _GAUSSIAN_RE.fullmatch(density)
        if not match:
            raise ValueError(f"unknown density {density!r}")
        sigma = float(match.group(1))
        if sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        center = box.mean(axis=1)
        w = np.exp(-np.sum((pts - center) ** 2, axis=1) / (2.0 * sigma**2))
        w = w / w.sum()
    return DiscreteMeasure(pts, w)
