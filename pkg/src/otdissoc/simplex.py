"""Revised simplex on the dense multi-marginal transport polytope.

Variables are the entries of a coupling tensor (one per index tuple, in
C-flattened order); constraints fix every axis marginal. One row per axis
atom is kept except the last atom of each axis after the first, which
removes the N-1 structural redundancies and leaves a full-rank system;
masking (excluded columns) can still create redundant rows, which phase 1
detects and drops. The basis inverse is held explicitly (marginal counts
are small at desk scale) and rebuilt periodically for numerical hygiene.

Pivoting uses Bland's anti-cycling rule throughout: the entering column is
the first eligible one in scan order (lexicographic tuple order unless a
permutation is supplied), and ratio-test ties leave the variable with the
smallest column id. Identical inputs therefore produce identical pivot
sequences, solutions, and dual vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["KernelResult", "solve_transport"]

_REFACTOR_EVERY = 100
_PIV_TOL = 1e-11
_FEAS_TOL = 1e-9


@dataclass
class KernelResult:
    """Raw solver output on the reduced (full-rank, masked) system."""

    status: str  # "optimal" | "infeasible" | "pivot_limit" | "unbounded"
    value: float = np.nan
    dual_value: float = np.nan
    solution: dict = field(default_factory=dict)  # flat column id -> mass
    potentials: list = field(default_factory=list)  # per-axis dual tables
    pivots: int = 0


def solve_transport(cost, weights, allowed=None, pivot_limit=50_000, scan_order=None):
    """Minimize <cost, gamma> over couplings with the given axis weights.

    Parameters
    ----------
    cost : ndarray
        Dense cost tensor; ``inf`` entries must be pre-masked via
        ``allowed`` (they are never touched arithmetically here).
    weights : sequence of 1-d arrays
        Marginal weights per axis (each summing to one).
    allowed : flat bool array, optional
        Columns the solver may use; defaults to all.
    scan_order : permutation of the flat column ids, optional
        Alternative Bland scan order (used by the uniqueness probe).
    """
    solver = _Simplex(cost, weights, allowed, scan_order)
    return solver.run(pivot_limit)


class _Simplex:
    def __init__(self, cost, weights, allowed, scan_order):
        self.shape = tuple(len(w) for w in weights)
        self.n_axes = len(self.shape)
        self.nvar = int(np.prod(self.shape))
        cost = np.asarray(cost, dtype=float)
        if cost.shape != self.shape:
            raise ValueError(f"cost shape {cost.shape} does not match weights {self.shape}")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        if allowed is None:
            allowed = np.isfinite(cost).ravel()
        self.allowed = np.asarray(allowed, dtype=bool).ravel().copy()
        self.cost_flat = np.where(np.isfinite(cost), cost, 0.0).ravel()
        self.scan_order = None if scan_order is None else np.asarray(scan_order, dtype=int)
        self.cost_scale = float(np.max(np.abs(self.cost_flat), initial=0.0))
        self._build_rows(dropped=[set() for _ in self.shape])

    # -- row bookkeeping ----------------------------------------------------

    def _build_rows(self, dropped):
        """(Re)build row indices; ``dropped[k]`` are atoms whose row is gone."""
        self.row_of = []
        self.dropped = dropped
        b = []
        row = 0
        for k, w in enumerate(self.weights):
            ids = np.full(len(w), -1, dtype=int)
            last = len(w) - 1
            for a in range(len(w)):
                if k > 0 and a == last:
                    continue  # redundancy removed a priori
                if a in dropped[k]:
                    continue
                ids[a] = row
                b.append(w[a])
                row += 1
            self.row_of.append(ids)
        self.m = row
        self.b = np.asarray(b)

    def _column_rows(self, j):
        idx = np.unravel_index(j, self.shape)
        return [self.row_of[k][idx[k]] for k in range(self.n_axes) if self.row_of[k][idx[k]] >= 0]

    def _scatter(self, y):
        """Per-axis tables u_k with u_k[atom] = y[row] (0 on removed rows)."""
        tables = []
        for k in range(self.n_axes):
            u = np.zeros(self.shape[k])
            mask = self.row_of[k] >= 0
            u[mask] = y[self.row_of[k][mask]]
            tables.append(u)
        return tables

    def _broadcast_sum(self, tables):
        out = np.zeros(self.shape)
        for k, u in enumerate(tables):
            view = [1] * self.n_axes
            view[k] = self.shape[k]
            out = out + u.reshape(view)
        return out.ravel()

    # -- basis algebra ------------------------------------------------------

    def _refactor(self):
        basis_mat = np.zeros((self.m, self.m))
        for t, col in enumerate(self.basis):
            if col >= self.nvar:
                basis_mat[col - self.nvar, t] = 1.0
            else:
                for r in self._column_rows(col):
                    basis_mat[r, t] += 1.0
        self.B_inv = np.linalg.inv(basis_mat)
        self.xB = self.B_inv @ self.b
        np.clip(self.xB, 0.0, None, out=self.xB)

    def _direction(self, j):
        if j >= self.nvar:
            return self.B_inv[:, j - self.nvar].copy()
        rows = self._column_rows(j)
        return self.B_inv[:, rows].sum(axis=1)

    def _pivot(self, t, j, d):
        piv = d[t]
        self.B_inv[t] /= piv
        rest = d.copy()
        rest[t] = 0.0
        self.B_inv -= np.outer(rest, self.B_inv[t])
        theta = self.xB[t] / piv
        self.xB -= theta * d
        self.xB[t] = theta
        np.clip(self.xB, 0.0, None, out=self.xB)
        old = self.basis[t]
        if old < self.nvar:
            self.in_basis[old] = False
        if j < self.nvar:
            self.in_basis[j] = True
        self.basis[t] = j
        self.pivots += 1
        if self.pivots % _REFACTOR_EVERY == 0:
            self._refactor()

    def _first_candidate(self, mask):
        if not mask.any():
            return -1
        if self.scan_order is None:
            return int(np.argmax(mask))
        sub = mask[self.scan_order]
        pos = int(np.argmax(sub))
        return int(self.scan_order[pos]) if sub[pos] else -1

    def _leaving_row(self, d):
        pos = np.flatnonzero(d > _PIV_TOL)
        if pos.size == 0:
            return -1
        ratios = self.xB[pos] / d[pos]
        tmin = float(ratios.min())
        tie = pos[ratios <= tmin + 1e-12 + 1e-9 * abs(tmin)]
        return int(tie[np.argmin(self.basis[tie])])

    # -- phases ---------------------------------------------------------------

    def _iterate(self, cost_flat_or_none, pivot_limit):
        """Price-pivot until optimal; returns a status string."""
        phase1 = cost_flat_or_none is None
        tol = 1e-10 if phase1 else 1e-10 * (1.0 + self.cost_scale)
        while True:
            if self.pivots >= pivot_limit:
                return "pivot_limit"
            if phase1:
                c_basis = (self.basis >= self.nvar).astype(float)
            else:
                c_basis = self.cost_flat[self.basis]
            y = c_basis @ self.B_inv
            sum_pot = self._broadcast_sum(self._scatter(y))
            reduced = (0.0 if phase1 else self.cost_flat) - sum_pot
            mask = self.allowed & ~self.in_basis & (reduced < -tol)
            j = self._first_candidate(mask)
            if j < 0:
                return "optimal"
            d = self._direction(j)
            t = self._leaving_row(d)
            if t < 0:
                return "unbounded"
            self._pivot(t, j, d)

    def _remove_artificials(self):
        """Pivot zero-level artificials out; drop rows that resist (redundant)."""
        to_drop = []
        for t in range(self.m):
            if self.basis[t] < self.nvar:
                continue
            tab_row = self._broadcast_sum(self._scatter(self.B_inv[t]))
            mask = self.allowed & ~self.in_basis & (np.abs(tab_row) > 1e-9)
            j = self._first_candidate(mask)
            if j >= 0:
                self._pivot(t, j, self._direction(j))
            else:
                to_drop.append(t)
        if not to_drop:
            return
        dropped = [set(s) for s in self.dropped]
        drop_rows = set()
        for t in to_drop:
            drop_rows.add(self.basis[t] - self.nvar)
        for k in range(self.n_axes):
            for a, r in enumerate(self.row_of[k]):
                if r in drop_rows:
                    dropped[k].add(a)
        self.basis = np.array([c for c in self.basis if not (c >= self.nvar and c - self.nvar in drop_rows)])
        self._build_rows(dropped)
        # Re-tag surviving artificials (none expected) against new row ids.
        self._refactor()

    def run(self, pivot_limit):
        self.pivots = 0
        self.basis = np.arange(self.nvar, self.nvar + self.m)
        self.in_basis = np.zeros(self.nvar, dtype=bool)
        self.B_inv = np.eye(self.m)
        self.xB = self.b.copy()

        status = self._iterate(None, pivot_limit)
        if status != "optimal":
            return KernelResult(status=status, pivots=self.pivots)
        self._refactor()
        art = self.basis >= self.nvar
        infeas = float(self.xB[art].sum()) if art.any() else 0.0
        if infeas > _FEAS_TOL:
            return KernelResult(status="infeasible", pivots=self.pivots)
        self._remove_artificials()

        status = self._iterate(self.cost_flat, pivot_limit)
        if status != "optimal":
            return KernelResult(status=status, pivots=self.pivots)
        self._refactor()
        y = self.cost_flat[self.basis] @ self.B_inv
        solution = {
            int(col): float(self.xB[t])
            for t, col in enumerate(self.basis)
            if col < self.nvar and self.xB[t] > 0.0
        }
        value = float(sum(self.cost_flat[c] * v for c, v in solution.items()))
        return KernelResult(
            status="optimal",
            value=value,
            dual_value=float(y @ self.b),
            solution=solution,
            potentials=self._scatter(y),
            pivots=self.pivots,
        )
