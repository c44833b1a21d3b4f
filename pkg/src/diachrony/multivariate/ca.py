"""Simple correspondence analysis of a two-way contingency table."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DegenerateRank, ZeroMargin

JACOBI_TOL = 1e-12


def jacobi_svd(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """One-sided (Hestenes) Jacobi SVD.

    Returns ``u, s, vt`` with singular values in decreasing order, like
    ``numpy.linalg.svd(a, full_matrices=False)``.
    """
    a = np.asarray(a, dtype=float)
    m, n = a.shape
    if m < n:
        u, s, vt = jacobi_svd(a.T, tol, max_sweeps)
        return vt.T, s, u.T
    w = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = w[:, i] @ w[:, i]
                beta = w[:, j] @ w[:, j]
                gamma = w[:, i] @ w[:, j]
                if gamma == 0 or abs(gamma) <= tol * np.sqrt(alpha) * np.sqrt(beta):
                    continue
                if abs(beta - alpha) >= 1e150 * abs(gamma):
                    continue  # the rotation angle is below double precision
                rotated = True
                zeta = (beta - alpha) / (2 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.hypot(1.0, zeta)) if zeta != 0 else 1.0
                c = 1 / np.sqrt(1 + t * t)
                s_ = c * t
                wi, wj = w[:, i].copy(), w[:, j].copy()
                w[:, i], w[:, j] = c * wi - s_ * wj, s_ * wi + c * wj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s_ * vj, s_ * vi + c * vj
        if not rotated:
            break
    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    nz = s > 0
    u[:, nz] = w[:, nz] / s[nz]
    return u, s, v.T


@dataclass
class CaSolution:
    row_coords: np.ndarray
    col_coords: np.ndarray
    singular_values: np.ndarray
    shares: np.ndarray
    total_inertia: float
    row_masses: np.ndarray = field(repr=False)
    col_masses: np.ndarray = field(repr=False)
    row_labels: list = field(default_factory=list)
    col_labels: list = field(default_factory=list)

    @property
    def n_dims(self) -> int:
        return len(self.singular_values)

    def require_2d(self) -> None:
        """Two dimensions are needed for a biplot."""
        if self.n_dims < 2:
            raise DegenerateRank(f"only {self.n_dims} nontrivial dimension(s); cannot draw a 2-D map")

    def to_dict(self) -> dict:
        return {
            "rows": self.row_labels, "cols": self.col_labels,
            "row_coords": self.row_coords.tolist(), "col_coords": self.col_coords.tolist(),
            "singular_values": self.singular_values.tolist(), "shares": self.shares.tolist(),
            "total_inertia": self.total_inertia,
        }


def correspondence_analysis(matrix, row_labels=None, col_labels=None, tol: float = 1e-10) -> CaSolution:
    """Principal coordinates from the SVD of the standardized residuals.

    Dimensions with singular value below ``tol`` are dropped, so a table
    of independent margins yields zero dimensions and zero inertia.  Each
    axis is oriented so its first nonzero row loading is positive.
    """
    n = np.asarray(matrix, dtype=float)
    if n.ndim != 2 or n.shape[0] < 2 or n.shape[1] < 2:
        raise DataError("correspondence analysis needs at least a 2x2 table")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise DataError("counts must be finite and nonnegative")
    r_sum, c_sum = n.sum(axis=1), n.sum(axis=0)
    if np.any(r_sum == 0) or np.any(c_sum == 0):
        raise ZeroMargin("a row or column total is zero")
    p = n / n.sum()
    r, c = p.sum(axis=1), p.sum(axis=0)
    s = (p - np.outer(r, c)) / np.sqrt(np.outer(r, c))
    u, sv, vt = jacobi_svd(s)
    keep = sv > tol
    u, sv, v = u[:, keep], sv[keep], vt[keep].T
    for k in range(len(sv)):
        nz = np.flatnonzero(np.abs(u[:, k]) > 1e-12)
        if len(nz) and u[nz[0], k] < 0:
            u[:, k] *= -1
            v[:, k] *= -1
    total = float(np.sum(s ** 2))
    shares = sv ** 2 / np.sum(sv ** 2) if len(sv) else np.zeros(0)
    rows = u / np.sqrt(r)[:, None] * sv
    cols = v / np.sqrt(c)[:, None] * sv
    return CaSolution(rows, cols, sv, shares, total, r, c,
                      list(row_labels) if row_labels is not None else list(range(n.shape[0])),
                      list(col_labels) if col_labels is not None else list(range(n.shape[1])))
