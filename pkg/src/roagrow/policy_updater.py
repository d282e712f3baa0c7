"""Policy update through differentiable rollouts.

The training objective weighs the Lyapunov value of each trajectory's final
state, with unstable endpoints (outside the estimated level set) amplified by
``lambda_u``.  Its gradient with respect to the saturation parameters is the
exact reverse accumulation through the rolled-out closed loop; the indicator
weights and the Lyapunov net are read from the frozen estimate and receive no
gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .grid import GridDomain
from .policy import SatPolicy, policy_grad_psi, sat_slope
from .roa_estimator import LevelSetEstimate

__all__ = [
    "PolicyUpdHyper",
    "SignalDiagnostics",
    "PolicyUpdateRecord",
    "sample_policy_batch",
    "policy_loss",
    "bptt_grad",
    "signal_diagnostics",
    "update_policy",
]

log = logging.getLogger(__name__)

WEAK_SIGNAL_TOL = 1e-6


@dataclass(frozen=True)
class PolicyUpdHyper:
    gamma_p: float = 4.0
    beta_p: float = 0.6
    batch_size: int = 10               # follows the same schedule as the RoA side
    rollout_steps: int = 10            # L_p
    lambda_u: float = 10.0
    lr: float = 0.01
    sgd_steps: int = 100

    def __post_init__(self):
        if self.gamma_p <= 1:
            raise ValueError("gamma_p must be > 1")
        if not 0 <= self.beta_p <= 1:
            raise ValueError("beta_p must lie in [0, 1]")
        if self.lambda_u < 1:
            raise ValueError("lambda_u must be >= 1")
        if self.batch_size < 1 or self.rollout_steps < 0 or self.sgd_steps < 0:
            raise ValueError("invalid counts")


@dataclass
class SignalDiagnostics:
    """The factors of the trajectory-gradient decomposition."""

    grad_norm_final: float             # || dL/dx_T ||
    per_step_jacobian_norms: np.ndarray  # entry k holds || dx_T / dx_k ||
    grad_norm_psi: float               # || dL/dpsi ||
    weak_signal: bool = False


@dataclass
class PolicyUpdateRecord:
    loss: float
    diagnostics: SignalDiagnostics
    gap_empty: bool


def sample_policy_batch(est: LevelSetEstimate, hyper: PolicyUpdHyper,
                        grid: GridDomain, rng: np.random.Generator):
    """Mixture of the gap ring (weight beta_p) and the estimate's interior."""
    v = est.net.value(grid.centers())
    gap_cells = np.flatnonzero((v >= est.c) & (v < hyper.gamma_p * est.c))
    in_cells = np.flatnonzero(v < est.c)
    gap_empty = gap_cells.size == 0
    if gap_empty:
        log.warning("policy sampling gap is empty; using interior cells only")
        gap_cells = in_cells
    if in_cells.size == 0:
        log.warning("estimate interior is empty on the grid")
        in_cells = gap_cells
    if gap_cells.size == 0:            # both empty: degenerate estimate
        gap_cells = in_cells = np.arange(grid.n_cells)
    n = hyper.batch_size
    take_gap = rng.random(n) < hyper.beta_p
    idx = np.empty(n, dtype=int)
    n_gap = int(take_gap.sum())
    if n_gap:
        idx[take_gap] = gap_cells[rng.integers(0, gap_cells.size, size=n_gap)]
    idx[~take_gap] = in_cells[rng.integers(0, in_cells.size, size=n - n_gap)]
    return grid.jitter_within(idx, rng), gap_empty


def _rollout_tape(clm, x0s: np.ndarray, steps: int, box):
    """Forward pass storing everything the reverse pass needs.

    Diverged rows freeze at their last in-box state; their remaining step
    Jacobians become the identity and their control sensitivities vanish, so
    the reverse products truncate there automatically.
    """
    (tlo, thi), (wlo, whi) = box
    n = len(x0s)
    x = np.array(x0s, dtype=float)
    alive = np.ones(n, dtype=bool)
    jacs = np.empty((steps, n, 2, 2))
    psi_push = np.empty((steps, n, 4))  # (dfdu . g) uses this via du/dpsi
    dfdu_dot = np.empty((steps, n, 2))
    eye = np.eye(2)
    pol = clm.policy
    for k in range(steps):
        dfdx, dfdu = clm.open_jacobians(x)
        z = -(x[:, 0] * pol.k[0] + x[:, 1] * pol.k[1])
        slope = sat_slope(z, pol.psi)
        du_dx = slope[:, None] * (-pol.k)[None, :]
        jac = dfdx + dfdu[None, :, None] * du_dx[:, None, :]
        du_dpsi = policy_grad_psi(x, pol)
        xn = clm(x)
        out = ((xn[:, 0] < tlo) | (xn[:, 0] > thi)
               | (xn[:, 1] < wlo) | (xn[:, 1] > whi))
        newly_dead = alive & out
        frozen = ~alive | newly_dead
        jac[frozen] = eye
        du_dpsi[frozen] = 0.0
        moved = ~frozen
        x[moved] = xn[moved]
        alive &= ~out
        jacs[k] = jac
        psi_push[k] = du_dpsi
        dfdu_dot[k] = np.where(frozen[:, None], 0.0, dfdu[None, :])
    return x, ~alive, jacs, psi_push, dfdu_dot


def _bptt(clm, est: LevelSetEstimate, x0s: np.ndarray, steps: int,
          lambda_u: float, box):
    """Loss, psi-gradient and the gradient tape in one pass."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float)).reshape(-1, 2)
    finals, diverged, jacs, psi_push, dfdu_dot = _rollout_tape(
        clm, x0s, steps, box)
    v_final = est.net.value(finals)
    weights = np.where(v_final < est.c, 1.0, lambda_u)
    weights[diverged] = lambda_u
    loss = float(np.sum(weights * v_final))
    g_final = weights[:, None] * est.net.grad_x(finals)   # dL/dx_T per sample
    grad = np.zeros(4)
    g = g_final.copy()
    for k in range(steps - 1, -1, -1):
        push = np.einsum("ni,ni->n", g, dfdu_dot[k])      # dL/du at step k
        grad += push @ psi_push[k]
        g = np.einsum("ni,nij->nj", g, jacs[k])
    grad *= clm.policy.psi.mask()
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(
            f"non-finite policy gradient: grad={grad}, "
            f"|dL/dx_T|={np.linalg.norm(g_final):.4g}, "
            f"diverged={int(diverged.sum())}/{len(diverged)}")
    return loss, grad, g_final, jacs


def policy_loss(clm, est: LevelSetEstimate, x0s, steps: int,
                lambda_u: float, box) -> float:
    """sum over the batch of [1 if V(x_T) < c else lambda_u] * V(x_T).

    x_T is the rollout endpoint under the closed-loop map ``clm``; the
    indicator weights are constants of the frozen estimate.  Divergence
    flagged rollouts contribute lambda_u * V at the last in-box state.
    """
    loss, _, _, _ = _bptt(clm, est, x0s, steps, lambda_u, box)
    return loss


def bptt_grad(clm, est: LevelSetEstimate, x0s, steps: int,
              lambda_u: float, box) -> np.ndarray:
    """Exact reverse-accumulated gradient of the loss over trainable psi.

    Equals dL/dx_T summed against the per-step products
    (dx_T/dx_k)(d+ x_k/dpsi); entries outside the trainable mask are zero.
    """
    _, grad, _, _ = _bptt(clm, est, x0s, steps, lambda_u, box)
    return grad


def signal_diagnostics(clm, est: LevelSetEstimate, x0s, steps: int,
                       lambda_u: float, box) -> SignalDiagnostics:
    """Report the strength of each factor of the learning signal.

    Warns when the final-state factor is negligible, which happens when the
    rollouts end too close to the equilibrium (the Lyapunov gradient vanishes
    there) and the policy stops receiving information.
    """
    _, grad, g_final, jacs = _bptt(clm, est, x0s, steps, lambda_u, box)
    n_steps = len(jacs)
    norms = np.empty(n_steps + 1)
    norms[n_steps] = 1.0
    prod = np.broadcast_to(np.eye(2), (len(x0s), 2, 2)).copy()
    for k in range(n_steps - 1, -1, -1):
        prod = np.einsum("nij,njk->nik", prod, jacs[k])
        norms[k] = float(np.mean(np.linalg.svd(prod, compute_uv=False)[:, 0]))
    grad_norm_final = float(np.linalg.norm(g_final))
    weak = grad_norm_final < WEAK_SIGNAL_TOL
    if weak:
        log.warning("vanishing learning signal: |dL/dx_T| = %.3g", grad_norm_final)
    return SignalDiagnostics(grad_norm_final, norms, float(np.linalg.norm(grad)),
                             weak)


def _project_psi(psi_vec: np.ndarray) -> np.ndarray:
    """Keep the saturation shape well formed during training."""
    out = psi_vec.copy()
    out[2] = max(out[2], 0.0)
    out[3] = max(out[3], 0.0)
    if out[1] > out[0]:
        out[1] = out[0]
    return out


def update_policy(pol: SatPolicy, est: LevelSetEstimate, f_builder,
                  hyper: PolicyUpdHyper, grid: GridDomain,
                  rng: np.random.Generator, box=None):
    """One policy phase: sample a batch, descend the loss, crop the change.

    Returns ``(new_policy, record)``.  The batch is drawn once per phase; the
    final parameters are cropped against the phase-start values so the induced
    RoA cannot jump.
    """
    from .policy import crop_update

    if box is None:
        box = grid.safety_box()
    x0s, gap_empty = sample_policy_batch(est, hyper, grid, rng)
    start_psi = pol.psi
    for _ in range(hyper.sgd_steps):
        clm = f_builder(pol)
        _, grad, _, _ = _bptt(clm, est, x0s, hyper.rollout_steps,
                              hyper.lambda_u, box)
        vec = _project_psi(pol.psi.as_array() - hyper.lr * grad)
        pol = replace(pol, psi=pol.psi.with_array(vec))
    pol = replace(pol, psi=crop_update(start_psi, pol.psi, pol.crop_radius))
    clm = f_builder(pol)
    loss, grad, g_final, jacs = _bptt(clm, est, x0s, hyper.rollout_steps,
                                      hyper.lambda_u, box)
    diag = signal_diagnostics(clm, est, x0s, hyper.rollout_steps,
                              hyper.lambda_u, box)
    return pol, PolicyUpdateRecord(loss, diag, gap_empty)
