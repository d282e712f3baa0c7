"""Uniform cell grid over the rectangular state-space domain.

Cells are indexed row-major with theta varying fastest: the flat index of
cell (i, j) is ``j * n_theta + i`` where ``i`` counts theta cells and ``j``
counts omega cells.  All set computations in the project (RoA masks, level
sets, gap rings) are carried out on the cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridDomain"]


@dataclass(frozen=True)
class GridDomain:
    theta_min: float = -np.pi / 2
    theta_max: float = np.pi / 2
    omega_min: float = -2 * np.pi
    omega_max: float = 2 * np.pi
    n_theta: int = 100
    n_omega: int = 100

    def __post_init__(self):
        if self.theta_min >= self.theta_max or self.omega_min >= self.omega_max:
            raise ValueError("domain bounds must be ordered")
        if self.n_theta < 2 or self.n_omega < 2:
            raise ValueError("need at least 2 cells per dimension")

    @property
    def n_cells(self) -> int:
        return self.n_theta * self.n_omega

    @property
    def cell_width_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.n_theta

    @property
    def cell_width_omega(self) -> float:
        return (self.omega_max - self.omega_min) / self.n_omega

    @property
    def cell_area(self) -> float:
        return self.cell_width_theta * self.cell_width_omega

    def centers(self) -> np.ndarray:
        """All cell centers, shape (n_cells, 2), theta fastest."""
        th = self.theta_min + (np.arange(self.n_theta) + 0.5) * self.cell_width_theta
        om = self.omega_min + (np.arange(self.n_omega) + 0.5) * self.cell_width_omega
        tt, oo = np.meshgrid(th, om)           # rows of constant omega
        return np.stack([tt.ravel(), oo.ravel()], axis=1)

    def boundary_mask(self) -> np.ndarray:
        """Cells in the outermost ring of the rectangle."""
        i = np.arange(self.n_cells) % self.n_theta
        j = np.arange(self.n_cells) // self.n_theta
        return (i == 0) | (i == self.n_theta - 1) | (j == 0) | (j == self.n_omega - 1)

    def origin_index(self) -> int:
        """Index of the cell whose center is nearest the origin."""
        c = self.centers()
        return int(np.argmin(c[:, 0] ** 2 + c[:, 1] ** 2))

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index of each point (clipped to the domain edges)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        i = np.floor((points[:, 0] - self.theta_min) / self.cell_width_theta)
        j = np.floor((points[:, 1] - self.omega_min) / self.cell_width_omega)
        i = np.clip(i.astype(int), 0, self.n_theta - 1)
        j = np.clip(j.astype(int), 0, self.n_omega - 1)
        return j * self.n_theta + i

    def jitter_within(self, cell_idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Uniform points inside the given cells."""
        base = self.centers()[cell_idx]
        off = rng.uniform(-0.5, 0.5, size=(len(cell_idx), 2))
        off[:, 0] *= self.cell_width_theta
        off[:, 1] *= self.cell_width_omega
        return base + off

    def safety_box(self, factor: float = 10.0):
        """Rectangle scaled about the domain center; rollouts leaving it
        are treated as diverged."""
        tc = 0.5 * (self.theta_min + self.theta_max)
        oc = 0.5 * (self.omega_min + self.omega_max)
        th = 0.5 * (self.theta_max - self.theta_min) * factor
        oh = 0.5 * (self.omega_max - self.omega_min) * factor
        return ((tc - th, tc + th), (oc - oh, oc + oh))
