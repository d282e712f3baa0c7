"""Ground truth: brute-force RoA classification and measure utilities.

Every grid cell is integrated forward under the closed-loop map; a cell
counts as attracted when its trajectory enters a small ball around the origin
within the step budget and then stays inside twice that radius for a
confirmation window.  The work is embarrassingly parallel over cells and the
result does not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridDomain

__all__ = [
    "RoaMask",
    "true_roa",
    "mask_measure",
    "sym_diff_measure",
    "gap_growth_check",
    "save_mask_pgm",
    "load_mask_pgm",
    "save_mask_csv",
]


@dataclass
class RoaMask:
    """Boolean per grid cell, true = classified as converging."""

    values: np.ndarray                 # (n_cells,), bool
    n_theta: int
    n_omega: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.shape != (self.n_theta * self.n_omega,):
            raise ValueError("mask length must equal n_theta * n_omega")

    @property
    def fraction(self) -> float:
        return float(self.values.sum()) / self.values.size

    def boundary_cells(self) -> np.ndarray:
        """True cells with at least one false 4-neighbor (or on the rim)."""
        m = self.values.reshape(self.n_omega, self.n_theta)
        inner = np.zeros_like(m)
        inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                             & m[1:-1, :-2] & m[1:-1, 2:])
        return (m & ~inner).ravel()


def true_roa(f, grid: GridDomain, k_max: int = 8000, ball_radius: float = 0.1,
             confirm_steps: int = 100, box=None) -> RoaMask:
    """Classify every cell center by long forward integration under ``f``.

    A cell is attracted when its trajectory gets within ``ball_radius`` of the
    origin within ``k_max`` steps and stays within ``2 * ball_radius`` for the
    following ``confirm_steps`` steps.  Trajectories leaving the safety box
    are classified as not attracted.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if box is None:
        box = grid.safety_box()
    (tlo, thi), (wlo, whi) = box

    x = grid.centers().copy()
    n = len(x)
    converged = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    confirm = np.full(n, -1, dtype=int)        # >=0 once inside the ball
    confirm[np.hypot(x[:, 0], x[:, 1]) < ball_radius] = 0
    active = np.arange(n)

    for k in range(k_max + confirm_steps):
        if len(active) == 0:
            break
        xa = f(x[active])
        out = ((xa[:, 0] < tlo) | (xa[:, 0] > thi)
               | (xa[:, 1] < wlo) | (xa[:, 1] > whi))
        x[active[~out]] = xa[~out]
        failed[active[out]] = True

        live = active[~out]
        nrm = np.hypot(x[live, 0], x[live, 1])
        # confirmation first: rows that entered on an earlier step must stay
        # within twice the ball radius for confirm_steps further steps
        confirming = confirm[live] >= 0
        escaped = confirming & (nrm >= 2 * ball_radius)
        failed[live[escaped]] = True
        ok = confirming & ~escaped
        confirm[live[ok]] += 1
        converged[live[ok]] |= confirm[live[ok]] >= confirm_steps
        entering = (confirm[live] < 0) & (nrm < ball_radius) & (k + 1 <= k_max)
        confirm[live[entering]] = 0
        if k + 1 > k_max:
            # past the budget only confirmation may continue
            failed[live[confirm[live] < 0]] = True
        active = np.flatnonzero(~converged & ~failed)

    return RoaMask(converged, grid.n_theta, grid.n_omega)


def mask_measure(mask: RoaMask) -> float:
    """Grid-cell fraction, the working realization of the domain measure."""
    return mask.fraction


def sym_diff_measure(a: RoaMask, b: RoaMask) -> float:
    """Fraction of cells on which the two masks disagree."""
    if (a.n_theta, a.n_omega) != (b.n_theta, b.n_omega):
        raise ValueError("masks live on different grids")
    return float(np.logical_xor(a.values, b.values).sum()) / a.values.size


def gap_growth_check(c: float, alphas, grid: GridDomain) -> dict:
    """Desk-scale check of the sublevel-growth prediction for V = ||x||^2.

    The sublevel set of ||x||^2 at level c is a disk of radius sqrt(c), whose
    gradient-norm lower bound on the level set is G = 2 sqrt(c) and whose
    perimeter is 2 pi sqrt(c), so the predicted gap measure for a factor
    alpha is c (alpha - 1) * perimeter / G = pi c (alpha - 1).  Returns
    {alpha: (grid_measure, predicted, relative_error)}.
    """
    centers = grid.centers()
    v = centers[:, 0] ** 2 + centers[:, 1] ** 2
    half_t = 0.5 * (grid.theta_max - grid.theta_min)
    half_w = 0.5 * (grid.omega_max - grid.omega_min)
    out = {}
    for alpha in alphas:
        if not 1.0 <= alpha <= 1.1:
            raise ValueError("alpha must lie in [1, 1.1]; the prediction is "
                             "a first-order expansion around the level set")
        if np.sqrt(alpha * c) >= min(half_t, half_w):
            raise ValueError("level set touches the grid boundary")
        counted = float(((v >= c) & (v < alpha * c)).sum()) * grid.cell_area
        predicted = np.pi * c * (alpha - 1.0)
        rel = abs(counted - predicted) / predicted if predicted > 0 else 0.0
        out[alpha] = (counted, predicted, rel)
    return out


# -- mask serialization ------------------------------------------------------

def save_mask_pgm(mask: RoaMask, path):
    """Binary portable graymap, one byte per cell (255 = attracted).

    Bytes follow the mask's own layout: row-major with theta fastest, the
    first row at omega_min.
    """
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.n_theta} {mask.n_omega}\n255\n".encode("ascii"))
        fh.write((mask.values.astype(np.uint8) * 255).tobytes())


def load_mask_pgm(path) -> RoaMask:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    n_theta, n_omega = (int(t) for t in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=n_theta * n_omega)
    return RoaMask(data > 0, n_theta, n_omega)


def save_mask_csv(mask: RoaMask, path):
    """One line per omega row (omega_min first), 0/1 for each theta cell."""
    img = mask.values.reshape(mask.n_omega, mask.n_theta)
    with open(path, "w", encoding="ascii") as fh:
        for row in img:
            fh.write(",".join("1" if v else "0" for v in row) + "\n")
