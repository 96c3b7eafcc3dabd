"""Composite Gauss-Lobatto grids with spectral running integrals.

A :class:`Grid` partitions ``[lo, hi]`` into cells and places ``m`` Lobatto
nodes in each cell (cell edges are nodes, so neighbouring cells share them).
Tabulated functions are ``(n_cells, m)`` arrays.  On each cell the nodal
values define a degree ``m - 1`` interpolant, which gives

* quadrature exact to degree ``2m - 3``,
* running integrals from either end without cancellation,
* barycentric evaluation between nodes.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

from .exceptions import QuadratureFailure

DEFAULT_ORDER = 9


@lru_cache(maxsize=8)
def lobatto_rule(m: int = DEFAULT_ORDER):
    """Nodes, weights, left/right integration matrices and barycentric weights
    of the ``m``-point Gauss-Lobatto rule on [-1, 1]."""
    inner = L.Legendre.basis(m - 1).deriv().roots()
    x = np.concatenate(([-1.0], np.sort(inner.real), [1.0]))
    pm1 = L.legval(x, [0] * (m - 1) + [1])
    w = 2.0 / (m * (m - 1) * pm1**2)
    V = L.legvander(x, m - 1)
    C = np.linalg.inv(V)  # columns: Legendre coefficients of the Lagrange basis
    left = np.empty((m, m))
    right = np.empty((m, m))
    for j in range(m):
        antideriv = L.legint(C[:, j], lbnd=-1.0)
        at_x = L.legval(x, antideriv)
        left[:, j] = at_x
        right[:, j] = at_x[-1] - at_x
    # Exact end values: the left matrix's last row and the right matrix's first
    # row are the quadrature weights.
    left[-1] = w
    right[0] = w
    left[0] = 0.0
    right[-1] = 0.0
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / diff.prod(axis=1)
    return x, w, left, right, C, bary


class Grid:
    """Composite Lobatto grid on the cells delimited by ``edges``."""

    def __init__(self, edges, order: int = DEFAULT_ORDER):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        self.edges = edges
        self.order = order
        t, w, self._left, self._right, self._coef, self._bary = lobatto_rule(order)
        self._t = t
        self.half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        self.nodes = mid[:, None] + self.half[:, None] * t[None, :]
        self.nodes[:, 0] = edges[:-1]
        self.nodes[:, -1] = edges[1:]
        self.weights = self.half[:, None] * w[None, :]

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def shape(self):
        return self.nodes.shape

    def unique_nodes(self) -> np.ndarray:
        """Flattened nodes with the shared cell edges counted once."""
        return np.concatenate([self.nodes[:, :-1].ravel(), self.edges[-1:]])

    def unique_values(self, values) -> np.ndarray:
        values = np.asarray(values)
        return np.concatenate([values[:, :-1].ravel(), values[-1, -1:]])

    def evaluate(self, func, one_sided: bool = False) -> np.ndarray:
        """Tabulate ``func``.  With ``one_sided`` the shared edge nodes are
        nudged one ulp into their cell, so a jump located at a cell edge gets
        the correct one-sided limit in each cell."""
        x = self.nodes
        if one_sided:
            x = x.copy()
            x[:, 0] = np.nextafter(x[:, 0], np.inf)
            x[:, -1] = np.nextafter(x[:, -1], -np.inf)
        return np.asarray(func(x), dtype=float).reshape(self.shape)

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def cell_integrals(self, values) -> np.ndarray:
        return np.sum(self.weights * values, axis=1)

    def running_left(self, values) -> np.ndarray:
        """``int_lo^x values`` at every node."""
        values = np.asarray(values, dtype=float)
        within = (values @ self._left.T) * self.half[:, None]
        before = np.concatenate(([0.0], np.cumsum(within[:, -1])[:-1]))
        return within + before[:, None]

    def running_right(self, values) -> np.ndarray:
        """``int_x^hi values`` at every node."""
        values = np.asarray(values, dtype=float)
        within = (values @ self._right.T) * self.half[:, None]
        after = np.concatenate((np.cumsum(within[::-1, 0])[::-1][1:], [0.0]))
        return within + after[:, None]

    def running_from(self, values, x0: float = 0.0) -> np.ndarray:
        """``int_{x0}^x values``; ``x0`` must be a cell edge."""
        k = np.searchsorted(self.edges, x0)
        if k >= self.edges.size or self.edges[k] != x0:
            raise ValueError(f"{x0} is not a cell edge")
        run = self.running_left(values)
        base = run[k, 0] if k < self.n_cells else run[-1, -1]
        return run - base

    def split_running(self, values, pivot_cell: int | None = None) -> np.ndarray:
        """``int_lo^x values`` evaluated without cancellation in either tail.

        Valid for integrands whose total integral is zero: to the right of the
        pivot cell the result is computed as ``-int_x^hi values``.
        """
        left = self.running_left(values)
        right = -self.running_right(values)
        if pivot_cell is None:
            pivot_cell = self.n_cells // 2
        out = left.copy()
        out[pivot_cell:] = right[pivot_cell:]
        return out

    def locate(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def interpolate(self, values, x):
        """Evaluate the piecewise polynomial interpolant of ``values`` at ``x``.

        Points outside ``[lo, hi]`` are extrapolated from the end cells; callers
        decide what that means.
        """
        values = np.asarray(values, dtype=float)
        xa = np.asarray(x, dtype=float)
        flat = np.atleast_1d(xa).ravel()
        idx = self.locate(flat)
        mid = 0.5 * (self.edges[idx] + self.edges[idx + 1])
        t = (flat - mid) / self.half[idx]
        diff = t[:, None] - self._t[None, :]
        exact = diff == 0.0
        diff[exact] = 1.0
        k = self._bary[None, :] / diff
        out = np.sum(k * values[idx], axis=1) / np.sum(k, axis=1)
        hit = exact.any(axis=1)
        if hit.any():
            rows = np.nonzero(hit)[0]
            cols = np.argmax(exact[rows], axis=1)
            out[rows] = values[idx[rows], cols]
        out = out.reshape(np.shape(xa)) if xa.ndim else out[0]
        return float(out) if np.ndim(out) == 0 else out

    def resolution_error(self, values) -> np.ndarray:
        """Per-cell size of the two highest Legendre coefficients."""
        coefs = np.asarray(values, dtype=float) @ self._coef.T
        return np.abs(coefs[:, -1]) + np.abs(coefs[:, -2])

    def refined(self, mask) -> "Grid":
        """Bisect the cells flagged in ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return self
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])[mask]
        return Grid(np.sort(np.concatenate((self.edges, mids))), self.order)

    def with_edges(self, points) -> "Grid":
        """Insert extra cell edges (points outside the grid are ignored)."""
        pts = np.asarray([p for p in points if self.lo < p < self.hi], dtype=float)
        if pts.size == 0:
            return self
        edges = np.union1d(self.edges, pts)
        # drop slivers created next to an existing edge
        keep = np.concatenate(([True], np.diff(edges) > 1e-9 * (self.hi - self.lo)))
        keep[-1] = True
        return Grid(edges[keep], self.order)


def uniform_grid(lo, hi, n_cells, order=DEFAULT_ORDER, anchor=0.0) -> Grid:
    """Uniform cells on [lo, hi]; ``anchor`` is forced to be an edge when inside."""
    edges = np.linspace(lo, hi, n_cells + 1)
    if lo < anchor < hi and not np.any(edges == anchor):
        j = np.argmin(np.abs(edges - anchor))
        edges[j] = anchor
    return Grid(edges, order)


def adaptive_grid(lo, hi, funcs, n_cells=256, tol=1e-13, max_rounds=12,
                  anchor=0.0, order=DEFAULT_ORDER, breakpoints=()) -> Grid:
    """Refine a uniform grid until every function in ``funcs`` is resolved.

    A cell counts as resolved when its highest Legendre coefficients are below
    ``tol`` times the function's maximum magnitude on the grid.
    """
    grid = uniform_grid(lo, hi, n_cells, order, anchor).with_edges(breakpoints)
    for _ in range(max_rounds):
        mask = np.zeros(grid.n_cells, dtype=bool)
        for f in funcs:
            vals = grid.evaluate(f)
            if not np.all(np.isfinite(vals)):
                raise QuadratureFailure("non-finite integrand on the quadrature grid")
            scale = np.max(np.abs(vals))
            if scale == 0:
                continue
            mask |= grid.resolution_error(vals) > tol * scale
        if not mask.any():
            return grid
        grid = grid.refined(mask)
    raise QuadratureFailure(f"grid refinement did not converge after {max_rounds} rounds "
                            f"({grid.n_cells} cells)")
