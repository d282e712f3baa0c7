"""Growing inner estimate of the region of attraction (sublevel-set form).

One call of :func:`estimate_roa` runs the full growth loop for the current
policy: sample initial states from a gap ring around the running estimate,
label them by a short rollout, take SGD steps on the four-term training loss,
then line-search the level value so the decrease condition holds on the whole
estimated set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import rollout_batch
from .grid import GridDomain
from .lyapunov import PDLyapunovNet

__all__ = [
    "RoaEstHyper",
    "LevelSetEstimate",
    "LabeledBatch",
    "GrowthRecord",
    "DegenerateLevelError",
    "sample_mixture",
    "label_batch",
    "roa_loss",
    "line_search_level",
    "estimate_roa",
]

log = logging.getLogger(__name__)

# Level the classifier terms pull V values toward; the line-searched level
# converges to it as training stabilizes.
C_BAR = 1.0


class DegenerateLevelError(RuntimeError):
    """Line search has nothing to work with (V constant on the grid)."""


@dataclass(frozen=True)
class RoaEstHyper:
    gamma_r: float = 4.0               # gap ring multiplier
    beta_r: float = 0.6                # gap share of the sampling mixture
    batch_size: int = 10               # N, grows by 10 after each policy update
    growth_iters: int = 20             # M
    rollout_steps: int = 10            # L_r
    lambda_roa: float = 1000.0
    lambda_monot: float = 0.01
    lr: float = 0.01
    sgd_steps: int = 10_000            # total per estimate_roa call
    grad_clip: float = 0.0005          # cap on the batch-mean gradient norm

    def __post_init__(self):
        if self.gamma_r <= 1:
            raise ValueError("gamma_r must be > 1")
        if not 0 <= self.beta_r <= 1:
            raise ValueError("beta_r must lie in [0, 1]")
        if self.batch_size < 1 or self.rollout_steps < 1:
            raise ValueError("batch_size and rollout_steps must be >= 1")
        if self.growth_iters < 0 or self.sgd_steps < 0:
            raise ValueError("growth_iters and sgd_steps cannot be negative")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class LevelSetEstimate:
    """Pair (V, c): the sublevel set S_c(V) is the current RoA estimate."""

    net: PDLyapunovNet
    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("level value must be positive")

    def mask(self, grid: GridDomain) -> np.ndarray:
        return self.net.value(grid.centers()) < self.c

    def fraction(self, grid: GridDomain) -> float:
        return float(self.mask(grid).sum()) / grid.n_cells


@dataclass
class LabeledBatch:
    x_in: np.ndarray                   # rollout ended inside S_c
    x_out: np.ndarray                  # the rest of the batch


@dataclass
class GrowthRecord:
    iteration: int
    level: float
    est_fraction: float                # cells with V < line-searched c
    cbar_fraction: float               # cells with V < c_bar (drift monitor)
    loss: float
    gap_empty: bool


def sample_mixture(est: LevelSetEstimate, gamma: float, beta: float, n: int,
                   grid: GridDomain, rng: np.random.Generator):
    """Draw n states: with probability beta a uniform cell of the gap ring
    S_{gamma c} \\ S_c, otherwise a uniform cell of the domain, then jitter
    uniformly within the chosen cell.

    Returns ``(states, gap_empty)``; when the ring contains no grid cell the
    mixture degenerates to domain sampling and the flag is set.
    """
    v = est.net.value(grid.centers())
    gap_cells = np.flatnonzero((v >= est.c) & (v < gamma * est.c))
    gap_empty = bool(gap_cells.size == 0)
    if gap_empty:
        log.warning("gap ring is empty on the grid; sampling the whole domain")
    take_gap = rng.random(n) < beta
    if gap_empty:
        take_gap[:] = False
    idx = np.empty(n, dtype=int)
    n_gap = int(take_gap.sum())
    if n_gap:
        idx[take_gap] = gap_cells[rng.integers(0, gap_cells.size, size=n_gap)]
    idx[~take_gap] = rng.integers(0, grid.n_cells, size=n - n_gap)
    return grid.jitter_within(idx, rng), gap_empty


def label_batch(x0s: np.ndarray, f_pi, est: LevelSetEstimate,
                rollout_steps: int, box) -> LabeledBatch:
    """Split the batch by whether the rollout's final state lands in S_c.

    Divergence-flagged rollouts are always labeled out.
    """
    if rollout_steps < 1:
        raise ValueError("rollout_steps must be >= 1")
    finals, diverged = rollout_batch(f_pi, x0s, rollout_steps, box)
    inside = (est.net.value(finals) < est.c) & ~diverged
    return LabeledBatch(x_in=x0s[inside], x_out=x0s[~inside])


def _loss_pieces(net: PDLyapunovNet, x_in, x_out, xin_next, prev_vals, hyper):
    """Forward pass shared by the loss value and its parameter gradient.

    Returns (loss, v_in, v_out, v_next) where the v arrays come from a single
    evaluation of the current net.
    """
    n_in, n_out = len(x_in), len(x_out)
    stacked = [a for a in (x_in, x_out, xin_next) if len(a)]
    if stacked:
        v_all = net.value(np.concatenate(stacked, axis=0))
    else:
        v_all = np.zeros(0)
    v_in = v_all[:n_in]
    v_out = v_all[n_in:n_in + n_out]
    v_next = v_all[n_in + n_out:]
    loss = float(np.sum(v_in - C_BAR) - np.sum(v_out - C_BAR)
                 + hyper.lambda_roa * np.sum(v_next - v_in)
                 + hyper.lambda_monot * np.sum((v_in - prev_vals) ** 2))
    return loss, v_in, v_out, v_next


def roa_loss(net: PDLyapunovNet, x_in, x_out, f_pi,
             prev: LevelSetEstimate, prev_f, hyper: RoaEstHyper) -> float:
    """The four-term training objective.

    classifier terms: sum_in (V - c_bar) - sum_out (V - c_bar)
    decrease term:    lambda_roa * sum_in (V(f_pi(x)) - V(x))
    monotonicity:     lambda_monot * sum_in (V(x) - V_prev(f_prev(x)))^2

    ``prev`` and ``prev_f`` are frozen; no gradient reaches them.
    """
    x_in = np.atleast_2d(np.asarray(x_in, dtype=float)).reshape(-1, 2)
    x_out = np.atleast_2d(np.asarray(x_out, dtype=float)).reshape(-1, 2)
    xin_next = f_pi(x_in) if len(x_in) else x_in
    prev_vals = prev.net.value(prev_f(x_in)) if len(x_in) else np.zeros(0)
    loss, _, _, _ = _loss_pieces(net, x_in, x_out, xin_next, prev_vals, hyper)
    return loss


def _roa_loss_grad(net, x_in, x_out, xin_next, prev_vals, hyper):
    """Loss and its gradient w.r.t. the net's free blocks (single tape pass).

    The returned gradient is normalized by the batch size so the step size
    stays comparable across the growing sample schedule; the loss itself is
    the plain sum.
    """
    loss, v_in, v_out, v_next = _loss_pieces(net, x_in, x_out, xin_next,
                                             prev_vals, hyper)
    w_in = (1.0 - hyper.lambda_roa
            + 2.0 * hyper.lambda_monot * (v_in - prev_vals))
    w_out = np.full(len(x_out), -1.0)
    w_next = np.full(len(x_in), hyper.lambda_roa)
    stacked = [a for a in (x_in, x_out, xin_next) if len(a)]
    weights = np.concatenate([w for w in (w_in, w_out, w_next) if len(w)])
    n_batch = max(1, len(x_in) + len(x_out))
    tape = net.backward(np.concatenate(stacked, axis=0), weights / n_batch)
    d_params = tape.d_params
    norm = np.sqrt(sum(float((g1 ** 2).sum() + (g2 ** 2).sum())
                       for g1, g2 in d_params))
    if norm > hyper.grad_clip:
        scale = hyper.grad_clip / norm
        d_params = [(g1 * scale, g2 * scale) for g1, g2 in d_params]
    return loss, d_params


def line_search_level(net: PDLyapunovNet, f_pi, grid: GridDomain) -> float:
    """Largest grid V-value c such that S_c stays off the domain boundary and
    every cell of S_c except the nearest-to-origin one strictly decreases.

    Falls back to the smallest admissible grid value when no level works,
    which leaves an estimate with empty interior.
    """
    centers = grid.centers()
    v = net.value(centers)
    if float(v.max() - v.min()) < 1e-12:
        raise DegenerateLevelError("V is constant on the grid")
    dv = net.value(f_pi(centers)) - v
    violating = (dv >= 0) | grid.boundary_mask()
    violating[grid.origin_index()] = False
    bad = v[violating]
    # the level is capped by the first violating cell; sublevel sets are
    # strict, so that cell itself stays outside
    return float(bad.min()) if bad.size else float(v.max())


def estimate_roa(prev_est: LevelSetEstimate, prev_f, f_pi,
                 hyper: RoaEstHyper, grid: GridDomain,
                 rng: np.random.Generator, box=None):
    """Run the growth loop and return ``(estimate, records)``.

    Training starts from a copy of the previous phase's net; ``prev_est`` and
    ``prev_f`` stay frozen and only feed the monotonicity target.  Each growth
    iteration consumes an equal share of ``hyper.sgd_steps``.  The returned
    estimate is the iterate whose line-searched sublevel set covers the most
    grid cells, so a degraded late iteration cannot erase a good inner
    estimate found earlier in the phase.
    """
    if box is None:
        box = grid.safety_box()
    net = prev_est.net.copy()
    c = prev_est.c
    if hyper.growth_iters == 0:
        return LevelSetEstimate(net, c), []
    steps_per_iter = hyper.sgd_steps // hyper.growth_iters
    if hyper.sgd_steps > 0 and steps_per_iter == 0:
        steps_per_iter = 1
    records = []
    best = None
    best_frac = -1.0
    for m in range(1, hyper.growth_iters + 1):
        est = LevelSetEstimate(net, c)
        x0s, gap_empty = sample_mixture(est, hyper.gamma_r, hyper.beta_r,
                                        hyper.batch_size, grid, rng)
        labeled = label_batch(x0s, f_pi, est, hyper.rollout_steps, box)
        x_in, x_out = labeled.x_in, labeled.x_out
        xin_next = f_pi(x_in) if len(x_in) else x_in
        prev_vals = (prev_est.net.value(prev_f(x_in)) if len(x_in)
                     else np.zeros(0))
        loss = 0.0
        for _ in range(steps_per_iter):
            loss, d_params = _roa_loss_grad(net, x_in, x_out, xin_next,
                                            prev_vals, hyper)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite RoA loss at growth iteration {m}: "
                    f"|in|={len(x_in)} |out|={len(x_out)} c={c:.4g}")
            net.sgd_step(d_params, hyper.lr)
        c = line_search_level(net, f_pi, grid)
        v_grid = net.value(grid.centers())
        frac = float((v_grid < c).sum()) / grid.n_cells
        cbar_frac = float((v_grid < C_BAR).sum()) / grid.n_cells
        records.append(GrowthRecord(m, c, frac, cbar_frac, loss, gap_empty))
        if frac >= best_frac:
            best = LevelSetEstimate(net.copy(), c)
            best_frac = frac
    return best, records
