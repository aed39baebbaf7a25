"""Cost functions for two-fragment transport problems and their tensorization.

Four families are supported:

``coulomb``
    Pairwise inverse-distance energy of one group of N points. Coincident
    points cost ``inf`` (a maskable sentinel, not an exception).
``coulomb_eta``
    The same energy in separated-fragment coordinates: each fragment keeps
    its intra-group Coulomb term, and cross pairs interact through
    ``eta / sqrt(1 - 2*eta*(x1-y1) + eta^2*|x-y|^2)`` where ``eta`` is the
    inverse of the center-to-center distance.
``harmonic``
    ``1/2 * sum_ij (3*(x1_i-y1_j)^2 - |x_i-y_j|^2)``, attractive along the
    separation axis and repulsive transversally.
``bilinear``
    ``sum_ij x_i . star(y_j)``; differs from the harmonic family by a
    separable term whose integral against any fixed-marginal coupling is
    the constant returned by :func:`quad_bilinear_constant`.

All functions are pure; tensor construction is the only operation with a
size guard (``ENTRY_CAP`` entries by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, star

__all__ = [
    "COST_FAMILIES",
    "ENTRY_CAP",
    "CostSpec",
    "EtaDomainError",
    "SizeCapError",
    "coulomb_energy",
    "coulomb_separated",
    "bilinear_cost",
    "harmonic_cost",
    "interaction_leading",
    "interaction_exact",
    "interaction_taylor",
    "interaction_residual",
    "harmonic_average",
    "quad_bilinear_constant",
    "check_eta_admissible",
    "cost_tensor",
]

COST_FAMILIES = ("coulomb", "coulomb_eta", "harmonic", "bilinear")

# Default cap on dense cost tensors (number of entries).
ENTRY_CAP = 2_000_000


class EtaDomainError(ValueError):
    """eta is too large for the supports: some cross radicand is <= 0."""


class SizeCapError(ValueError):
    """A dense tensor would exceed the configured entry cap."""


@dataclass(frozen=True)
class CostSpec:
    """Parametric description of a cost family.

    ``n_a``/``n_b`` are the fragment group sizes (the ``coulomb`` family
    treats all points as a single group and only uses their sum). ``eta``
    is required for ``coulomb_eta`` and ignored elsewhere.
    """

    family: str
    n_a: int = 1
    n_b: int = 1
    eta: float | None = None
    d: int = 1

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}; expected one of {COST_FAMILIES}")
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError("group sizes must be >= 1")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.family == "coulomb_eta":
            if self.eta is None or self.eta <= 0:
                raise ValueError("coulomb_eta requires eta > 0")

    @property
    def n_axes(self) -> int:
        return self.n_a + self.n_b

    def to_json(self) -> dict:
        obj = {"family": self.family, "Na": self.n_a, "Nb": self.n_b, "d": self.d}
        if self.eta is not None:
            obj["eta"] = float(self.eta)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CostSpec":
        return cls(
            family=obj["family"],
            n_a=int(obj.get("Na", 1)),
            n_b=int(obj.get("Nb", 1)),
            eta=obj.get("eta"),
            d=int(obj.get("d", 1)),
        )


def _as_points(z, name="points"):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z[None, None]
    elif z.ndim == 1:
        # A flat vector is one point; scalar atoms need explicit (n, 1).
        z = z[None, :]
    if z.ndim != 2:
        raise ValueError(f"{name} must be a (n, d) array, got shape {z.shape}")
    return z


def _inverse_distance_sum(z) -> float:
    n = z.shape[0]
    if n < 2:
        return 0.0
    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(n, k=1)
    pair = dist[iu]
    if np.any(pair == 0.0):
        return np.inf
    return float(np.sum(1.0 / pair))


def coulomb_energy(z) -> float:
    """Sum of 1/|z_i - z_j| over unordered pairs; inf on coincident points."""
    return _inverse_distance_sum(_as_points(z, "z"))


def _radicand_matrix(x, y, eta: float) -> np.ndarray:
    s = x[:, None, 0] - y[None, :, 0]
    q = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return 1.0 - 2.0 * eta * s + eta**2 * q


def _cross_matrix(x, y, eta: float) -> np.ndarray:
    rad = _radicand_matrix(x, y, eta)
    if np.any(rad <= 0.0):
        i, j = np.unravel_index(int(np.argmin(rad)), rad.shape)
        raise EtaDomainError(
            f"eta={eta} too large for support: radicand {rad[i, j]:.3e} <= 0 "
            f"for atoms x={x[i].tolist()} and y={y[j].tolist()}"
        )
    return eta / np.sqrt(rad)


def coulomb_separated(x, y, eta: float) -> float:
    """Coulomb energy in separated-fragment coordinates.

    Cross pairs contribute ``eta/sqrt(1 - 2*eta*(x1_i-y1_j) + eta^2*
    |x_i-y_j|^2)``; each group adds its own pairwise inverse-distance
    energy (inf on coincident intra-group points). Raises
    :class:`EtaDomainError` when some cross radicand is nonpositive.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("x and y must share dimension")
    cross = float(np.sum(_cross_matrix(x, y, eta)))
    return cross + _inverse_distance_sum(x) + _inverse_distance_sum(y)


def bilinear_cost(x, y) -> float:
    """sum_i sum_j x_i . star(y_j)."""
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("x and y must share dimension")
    return float(np.einsum("id,jd->", x, star(y)))


def harmonic_cost(x, y) -> float:
    """1/2 * sum_ij (3*(x1_i - y1_j)^2 - |x_i - y_j|^2)."""
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("x and y must share dimension")
    s = x[:, None, 0] - y[None, :, 0]
    q = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return float(0.5 * np.sum(3.0 * s**2 - q))


def check_eta_admissible(rho_a: DiscreteMeasure, rho_b: DiscreteMeasure, eta: float) -> None:
    """Raise :class:`EtaDomainError` if any cross radicand is <= 0."""
    _cross_matrix(rho_a.points, rho_b.points, eta)


def interaction_leading(rho_a, rho_b, n_a: int, n_b: int, eta: float) -> float:
    """Leading inter-fragment energy: n_a*n_b*(eta + (m1_a - m1_b)*eta^2).

    ``m1`` denotes the first-coordinate mean of the fragment density. This
    is the second-order truncation of :func:`interaction_exact`.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return n_a * n_b * (eta + (rho_a.mean1() - rho_b.mean1()) * eta**2)


def interaction_exact(rho_a, rho_b, n_a: int, n_b: int, eta: float) -> float:
    """Inter-fragment energy under any product plan.

    Under a product plan with ``n_a`` marginals equal to ``rho_a`` and
    ``n_b`` equal to ``rho_b``, every cross pair decouples, so the term is
    ``n_a*n_b`` times the rho_a (x) rho_b average of the cross kernel.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    m = _cross_matrix(rho_a.points, rho_b.points, eta)
    return float(n_a * n_b * (rho_a.weights @ m @ rho_b.weights))


def harmonic_average(rho_a, rho_b) -> float:
    """rho_a (x) rho_b average of 1/2*(3*(x1-y1)^2 - |x-y|^2)."""
    x, y = rho_a.points, rho_b.points
    s = x[:, None, 0] - y[None, :, 0]
    q = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return float(rho_a.weights @ (0.5 * (3.0 * s**2 - q)) @ rho_b.weights)


def interaction_taylor(rho_a, rho_b, n_a: int, n_b: int, eta: float, order: int) -> float:
    """Truncated expansion of :func:`interaction_exact` in eta.

    Order 2 is :func:`interaction_leading`; order 3 adds
    ``eta^3 * n_a * n_b * harmonic_average(rho_a, rho_b)``. The remainder
    after order 3 is O(eta^4).
    """
    if order not in (2, 3):
        raise ValueError(f"order must be 2 or 3, got {order}")
    value = interaction_leading(rho_a, rho_b, n_a, n_b, eta)
    if order == 3:
        value += eta**3 * n_a * n_b * harmonic_average(rho_a, rho_b)
    return value


def _residual2_pairs(s, q, eta):
    # eta*(1/sqrt(r) - 1 - s*eta) with r = 1 - 2*s*eta + q*eta^2, written
    # without subtractive cancellation: the numerator 1 - (1+s*eta)^2 * r
    # expands exactly to eta^2*((3s^2 - q) - 2s(q - s^2)*eta - s^2*q*eta^2).
    r = 1.0 - 2.0 * s * eta + q * eta**2
    bracket = (3.0 * s**2 - q) - 2.0 * s * (q - s**2) * eta - s**2 * q * eta**2
    sr = np.sqrt(r)
    return eta**3 * bracket / (sr * (1.0 + (1.0 + s * eta) * sr))


def _residual3_pairs(s, q, eta):
    # Same device one order further: with P = 1 + s*eta + (3s^2-q)/2*eta^2,
    # 1 - P^2*r = -eta^3*(c3 + c4*eta + c5*eta^2 + c6*eta^3).
    r = 1.0 - 2.0 * s * eta + q * eta**2
    c3 = s * (3.0 * q - 5.0 * s**2)
    c4 = 4.5 * s**2 * q - 0.75 * q**2 - 3.75 * s**4
    c5 = 1.5 * s * (3.0 * s**2 - q) * (q - s**2)
    c6 = 0.25 * q * (3.0 * s**2 - q) ** 2
    p = 1.0 + s * eta + 0.5 * (3.0 * s**2 - q) * eta**2
    sr = np.sqrt(r)
    return -(eta**4) * (c3 + eta * (c4 + eta * (c5 + eta * c6))) / (sr * (1.0 + p * sr))


def interaction_residual(rho_a, rho_b, n_a: int, n_b: int, eta: float, order: int) -> float:
    """interaction_exact minus its order-``order`` Taylor truncation.

    Evaluated through a cancellation-free rearrangement per support pair,
    so the result keeps full relative precision even when it is many
    orders of magnitude below the interaction itself (naive subtraction
    loses ~|log10(eta^2)| digits).
    """
    if order not in (2, 3):
        raise ValueError(f"order must be 2 or 3, got {order}")
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    x, y = rho_a.points, rho_b.points
    s = x[:, None, 0] - y[None, :, 0]
    q = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    rad = 1.0 - 2.0 * eta * s + eta**2 * q
    if np.any(rad <= 0.0):
        raise EtaDomainError(f"eta={eta} too large for support")
    pairs = _residual2_pairs(s, q, eta) if order == 2 else _residual3_pairs(s, q, eta)
    return float(n_a * n_b * (rho_a.weights @ pairs @ rho_b.weights))


def quad_bilinear_constant(rho_a, rho_b, n_a: int, n_b: int) -> float:
    """Gap between the harmonic and bilinear objectives on fixed marginals.

    For every coupling whose group marginals are ``rho_a``/``rho_b``, the
    harmonic objective exceeds the bilinear one by
    ``1/2 * n_a * n_b * (3*M2_1(rho_a) + 3*M2_1(rho_b) - M2(rho_a) - M2(rho_b))``
    where ``M2_1`` is the second moment of the first coordinate and ``M2``
    the full second moment (always finite for point clouds).
    """
    return 0.5 * n_a * n_b * (
        3.0 * rho_a.second_moment1()
        + 3.0 * rho_b.second_moment1()
        - rho_a.second_moment()
        - rho_b.second_moment()
    )


def _pair_to_tensor(mat: np.ndarray, i: int, j: int, shape: tuple) -> np.ndarray:
    view = [1] * len(shape)
    view[i] = shape[i]
    view[j] = shape[j]
    return mat.reshape(view)


def cost_tensor(spec: CostSpec, marginals, cap: int = ENTRY_CAP) -> np.ndarray:
    """Dense cost array over the product of the marginals' supports.

    Entries may be ``inf`` (Coulomb singularities); solvers mask those.
    Raises :class:`SizeCapError` above ``cap`` entries and
    :class:`EtaDomainError` if ``coulomb_eta`` is inadmissible for some
    cross support pair (checked eagerly, naming the offending atoms).
    """
    marginals = list(marginals)
    n = len(marginals)
    for ax in marginals:
        if ax.dim != spec.d:
            raise ValueError(f"marginal dimension {ax.dim} does not match spec d={spec.d}")
    shape = tuple(ax.size for ax in marginals)
    total = 1
    for s in shape:
        total *= s
    if total > cap:
        raise SizeCapError(f"cost tensor would have {total} entries, cap is {cap}")

    if spec.family == "coulomb":
        if n < 2:
            raise ValueError("coulomb needs at least two marginals")
        group_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        cross_pairs = []
    else:
        if n != spec.n_axes:
            raise ValueError(f"{spec.family} expects {spec.n_axes} marginals, got {n}")
        cross_pairs = [(i, spec.n_a + j) for i in range(spec.n_a) for j in range(spec.n_b)]
        if spec.family == "coulomb_eta":
            group_pairs = [
                (i, j) for i in range(spec.n_a) for j in range(i + 1, spec.n_a)
            ] + [
                (i, j)
                for i in range(spec.n_a, n)
                for j in range(i + 1, n)
            ]
        else:
            group_pairs = []

    out = np.zeros(shape)
    if spec.family in ("coulomb", "coulomb_eta"):
        for i, j in group_pairs:
            p, q = marginals[i].points, marginals[j].points
            dist = np.sqrt(np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1))
            with np.errstate(divide="ignore"):
                mat = np.where(dist == 0.0, np.inf, 1.0 / np.where(dist == 0.0, 1.0, dist))
            out = out + _pair_to_tensor(mat, i, j, shape)
    if spec.family == "coulomb_eta":
        for i, j in cross_pairs:
            mat = _cross_matrix(marginals[i].points, marginals[j].points, spec.eta)
            out = out + _pair_to_tensor(mat, i, j, shape)
    elif spec.family == "bilinear":
        for i, j in cross_pairs:
            mat = marginals[i].points @ star(marginals[j].points).T
            out = out + _pair_to_tensor(mat, i, j, shape)
    elif spec.family == "harmonic":
        for i, j in cross_pairs:
            p, q = marginals[i].points, marginals[j].points
            s = p[:, None, 0] - q[None, :, 0]
            sq = np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1)
            out = out + _pair_to_tensor(0.5 * (3.0 * s**2 - sq), i, j, shape)
    return out
