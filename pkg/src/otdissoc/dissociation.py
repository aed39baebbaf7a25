"""Dissociation pipeline: per-fragment SCE energies, the decoupled energy
curve as a function of the inverse separation, expansion-order checks, and
the Dirac-marginal degeneracy demonstration.

Under plans that assign each electron to its fragment, the total energy at
inverse separation eta decouples as

    total(eta) = sce(rho_a, n_a) + sce(rho_b, n_b) + interaction_exact(eta)

because the intra-fragment terms depend only on the fragment couplings and
the cross term only on the pair of fragment densities. The SCE solves are
eta-independent and cached per (density, electron count, backend) key.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import (
    CostSpec,
    EtaDomainError,
    cost_tensor,
    harmonic_average,
    interaction_exact,
    interaction_leading,
    interaction_residual,
)
from .entropic import epsilon_schedule_solve, solve_sinkhorn
from .exact import monge_diagnostics, product_bilinear_value, solve_lp
from .measures import CouplingTensor, DiscreteMeasure, product, random_coupling

__all__ = [
    "CurveRow",
    "DissociationReport",
    "SlopeCheck",
    "DegeneracyReport",
    "SceInfeasibleError",
    "sce_functional",
    "clear_sce_cache",
    "dissociation_curve",
    "taylor_slope_check",
    "dirac_degeneracy_demo",
]

CSV_COLUMNS = (
    "eta",
    "sce_alpha",
    "sce_beta",
    "interaction_exact",
    "taylor2",
    "eta3_term",
    "residual_order2",
    "residual_order3",
    "backend",
    "solve_status",
)

RESIDUAL_FLOOR = 1e-14


class SceInfeasibleError(RuntimeError):
    """An SCE subproblem has no feasible masked coupling."""


@dataclass(frozen=True)
class CurveRow:
    eta: float
    sce_alpha: float
    sce_beta: float
    interaction_exact: float
    taylor2: float
    eta3_term: float
    residual_order2: float
    residual_order3: float
    backend: str
    solve_status: str

    @property
    def total(self) -> float:
        return self.sce_alpha + self.sce_beta + self.interaction_exact

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass(frozen=True)
class DissociationReport:
    rows: tuple
    metadata: dict

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "metadata": dict(self.metadata),
            "columns": list(CSV_COLUMNS),
            "rows": [
                {c: (v if isinstance(v, str) else float(v)) for c, v in zip(CSV_COLUMNS, r.as_tuple())}
                for r in self.rows
            ],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# schema_version: 1\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [v if isinstance(v, str) else repr(float(v)) for v in r.as_tuple()]
                )


@dataclass(frozen=True)
class SlopeCheck:
    slope2: float | None
    slope3: float | None
    status: str  # "ok" | "indeterminate"
    n_points: int
    window: tuple


@dataclass(frozen=True)
class DegeneracyReport:
    lp_value: float
    product_value: float
    closed_form_value: float
    random_plan_values: tuple
    max_spread: float
    all_equal: bool
    tol: float
    product_graphical_fraction: float
    product_is_graphical: bool

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "lp_value": float(self.lp_value),
            "product_value": float(self.product_value),
            "closed_form_value": float(self.closed_form_value),
            "random_plan_values": [float(v) for v in self.random_plan_values],
            "max_spread": float(self.max_spread),
            "all_equal": bool(self.all_equal),
            "tol": float(self.tol),
            "product_graphical_fraction": float(self.product_graphical_fraction),
            "product_is_graphical": bool(self.product_is_graphical),
        }


_SCE_CACHE: dict = {}


def clear_sce_cache() -> None:
    _SCE_CACHE.clear()


def _options_key(options):
    if not options:
        return ()
    items = []
    for k in sorted(options):
        v = options[k]
        items.append((k, tuple(v) if isinstance(v, (list, tuple)) else v))
    return tuple(items)


def sce_functional(rho: DiscreteMeasure, n: int, backend: str = "lp", options=None):
    """Minimal Coulomb energy over couplings with all n marginals equal to rho.

    Returns ``(value, report)`` where the report is the backend's solve
    report (None for the trivial n=1 case, which costs nothing by
    convention). An infeasible instance (every tuple hits a Coulomb
    singularity, e.g. a single-atom density with n >= 2) returns
    ``math.inf`` with the failed report attached.
    """
    if n < 1:
        raise ValueError("electron count must be >= 1")
    if n == 1:
        return 0.0, None
    key = (rho, n, backend, _options_key(options))
    if key in _SCE_CACHE:
        return _SCE_CACHE[key]

    options = dict(options or {})
    spec = CostSpec(family="coulomb", n_a=n, n_b=1, d=rho.dim)
    cost = cost_tensor(spec, [rho] * n, cap=options.pop("cap", 2_000_000))
    if backend == "lp":
        report = solve_lp(cost, [rho] * n, **options)
        value = report.value if report.optimal else math.inf
        status_ok = report.optimal
    elif backend == "entropic":
        epsilon = options.pop("epsilon", 1e-2)
        tol = options.pop("tol", 1e-8)
        max_iter = options.pop("max_iter", 100_000)
        if isinstance(epsilon, (list, tuple)):
            report, _ = epsilon_schedule_solve(cost, [rho] * n, epsilon, tol=tol, max_iter=max_iter)
        else:
            report = solve_sinkhorn(cost, [rho] * n, epsilon, tol=tol, max_iter=max_iter)
        status_ok = report.status != "infeasible"
        value = report.value if status_ok else math.inf
    else:
        raise ValueError(f"unknown backend {backend!r}")
    result = (value, report)
    _SCE_CACHE[key] = result
    return result


def _sce_or_raise(rho, n, backend, options, label):
    value, report = sce_functional(rho, n, backend, options)
    if not math.isfinite(value):
        status = getattr(report, "status", "infeasible")
        raise SceInfeasibleError(
            f"SCE for fragment {label} (n={n}, {rho.size} atoms) failed with status {status!r}"
        )
    return value, report


def dissociation_curve(rho_a, rho_b, n_a: int, n_b: int, etas, backend: str = "lp",
                       options=None) -> DissociationReport:
    """Energy curve over a list of inverse separations.

    Rows are sorted by eta descending (separation increasing). Each row
    carries the eta-independent fragment energies, the exact cross term,
    its order-2 and order-3 expansions, and cancellation-free residuals.
    Inadmissible etas (cross radicand <= 0 for some support pair) are
    reported per row, not raised; an infeasible SCE aborts with
    diagnostics since no row could be meaningful.
    """
    etas = sorted({float(e) for e in etas}, reverse=True)
    if not etas:
        raise ValueError("need at least one eta")
    if any(e <= 0 for e in etas):
        raise ValueError("etas must be positive")
    sce_a, _ = _sce_or_raise(rho_a, n_a, backend, options, "alpha")
    sce_b, _ = _sce_or_raise(rho_b, n_b, backend, options, "beta")

    h_avg = harmonic_average(rho_a, rho_b)
    rows = []
    for eta in etas:
        taylor2 = interaction_leading(rho_a, rho_b, n_a, n_b, eta)
        eta3_term = eta**3 * n_a * n_b * h_avg
        try:
            inter = interaction_exact(rho_a, rho_b, n_a, n_b, eta)
            res2 = abs(interaction_residual(rho_a, rho_b, n_a, n_b, eta, order=2))
            res3 = abs(interaction_residual(rho_a, rho_b, n_a, n_b, eta, order=3))
            status = "ok"
        except EtaDomainError:
            inter = res2 = res3 = math.nan
            status = "eta_inadmissible"
        rows.append(CurveRow(
            eta=eta,
            sce_alpha=sce_a,
            sce_beta=sce_b,
            interaction_exact=inter,
            taylor2=taylor2,
            eta3_term=eta3_term,
            residual_order2=res2,
            residual_order3=res3,
            backend=backend,
            solve_status=status,
        ))
    metadata = {
        "n_a": n_a,
        "n_b": n_b,
        "d": rho_a.dim,
        "backend": backend,
        "atoms_a": rho_a.size,
        "atoms_b": rho_b.size,
    }
    return DissociationReport(tuple(rows), metadata)


def taylor_slope_check(report: DissociationReport, window=(1e-3, 1e-2)) -> SlopeCheck:
    """Least-squares log-log slopes of the residuals inside an eta window.

    The order-2 residual should scale like eta^3 and the order-3 residual
    like eta^4. Residuals at the noise floor make the corresponding slope
    indeterminate instead of producing a garbage fit.
    """
    lo, hi = float(window[0]), float(window[1])
    in_window = [r for r in report.rows
                 if lo <= r.eta <= hi and r.solve_status == "ok"]
    if len(in_window) < 4:
        raise ValueError(
            f"window [{lo}, {hi}] contains {len(in_window)} usable rows, need >= 4"
        )

    def fit(residuals, etas):
        usable = [(e, r) for e, r in zip(etas, residuals) if r > RESIDUAL_FLOOR]
        if len(usable) < 4:
            return None
        x = np.log([e for e, _ in usable])
        y = np.log([r for _, r in usable])
        return float(np.polyfit(x, y, 1)[0])

    etas = [r.eta for r in in_window]
    slope2 = fit([r.residual_order2 for r in in_window], etas)
    slope3 = fit([r.residual_order3 for r in in_window], etas)
    status = "ok" if slope2 is not None and slope3 is not None else "indeterminate"
    return SlopeCheck(slope2, slope3, status, len(in_window), (lo, hi))


def dirac_degeneracy_demo(x_marginals, y_hats, n_plans: int = 20, seed: int = 0,
                          tol: float = 1e-12, mass_tol: float = 1e-9) -> DegeneracyReport:
    """Show that Dirac second-group marginals make every plan optimal.

    With every group-B marginal a Dirac, the bilinear objective of any
    feasible plan depends only on the fixed marginals, so the LP optimum,
    the product plan, and random feasible plans all share one value; the
    product plan is non-graphical as soon as some group-A marginal beyond
    the first is not a Dirac.
    """
    x_marginals = list(x_marginals)
    if not x_marginals:
        raise ValueError("need at least one group-A marginal")
    y_hats = np.atleast_2d(np.asarray(y_hats, dtype=float))
    diracs = [DiscreteMeasure.dirac(y) for y in y_hats]
    marginals = x_marginals + diracs
    n_a = len(x_marginals)
    d = x_marginals[0].dim

    spec = CostSpec(family="bilinear", n_a=n_a, n_b=len(diracs), d=d)
    cost = cost_tensor(spec, marginals)
    lp = solve_lp(cost, marginals)
    if not lp.optimal:
        raise RuntimeError(f"LP failed with status {lp.status!r}")

    prod_plan = CouplingTensor.from_measure(marginals[0])
    for m in marginals[1:]:
        prod_plan = product(prod_plan, CouplingTensor.from_measure(m))
    product_value = float(np.sum(prod_plan.entries * cost))
    closed_form = product_bilinear_value(marginals, n_a)

    rng = np.random.default_rng(seed)
    plan_values = []
    for _ in range(n_plans):
        gamma = random_coupling(marginals, rng)
        plan_values.append(float(np.sum(gamma.entries * cost)))

    everything = [lp.value, product_value, closed_form] + plan_values
    spread = float(max(everything) - min(everything))
    diag = monge_diagnostics(prod_plan, mass_tol=mass_tol)
    return DegeneracyReport(
        lp_value=lp.value,
        product_value=product_value,
        closed_form_value=closed_form,
        random_plan_values=tuple(plan_values),
        max_spread=spread,
        all_equal=spread <= tol,
        tol=tol,
        product_graphical_fraction=diag.graphical_mass_fraction,
        product_is_graphical=diag.is_graphical,
    )
