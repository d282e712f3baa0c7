"""Full redesign runs: pretrain, alternate estimation and policy updates.

Everything a run writes lives under one output directory:

    config_used.cfg          exact configuration of the run
    metrics.csv              one row per growth iteration / policy update
    checkpoints/             Lyapunov net after pretraining and every phase
    masks/                   oracle RoA masks (PGM + CSV)
    heatmaps/                level-set overlays per phase (PPM) and V (PGM)
    timings.txt              wall-clock notes, excluded from determinism

A (config, seed) pair determines every byte of the outputs except
timings.txt.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RedesignConfig, dump_config
from .dynamics import closed_loop, dare_lqr, linearize, step_euler
from .grid import GridDomain
from .lyapunov import PDLyapunovNet, pretrain_quadratic, save_net
from .oracle import RoaMask, save_mask_csv, save_mask_pgm, true_roa
from .roa_estimator import LevelSetEstimate, estimate_roa, line_search_level
from .policy_updater import update_policy

__all__ = ["MetricsLog", "RunResult", "run_redesign", "emit_heatmap",
           "MaskOverlay", "write_report", "METRICS_COLUMNS"]

log = logging.getLogger(__name__)

METRICS_VERSION = 1
METRICS_COLUMNS = [
    "phase", "iter", "kind", "level_c", "est_fraction", "cbar_fraction",
    "oracle_fraction", "loss", "sat_a", "sat_b", "sat_ma", "sat_mb",
    "grad_norm_final", "grad_norm_psi", "unsound_fraction", "flags",
]

# Fixed overlay color code: estimate in blue, sampling ring in pink, the
# brute-force RoA boundary in green.
COLOR_BACKGROUND = (255, 255, 255)
COLOR_GAP = (255, 158, 196)
COLOR_ESTIMATE = (64, 106, 226)
COLOR_ORACLE_BOUNDARY = (0, 160, 70)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class MetricsLog:
    """Append-only CSV writer that also keeps rows in memory."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.rows = []
        if self.path is not None:
            with open(self.path, "w", encoding="ascii") as fh:
                fh.write(f"# roagrow-metrics v{METRICS_VERSION}\n")
                fh.write(",".join(METRICS_COLUMNS) + "\n")

    def add(self, **values):
        unknown = set(values) - set(METRICS_COLUMNS)
        if unknown:
            raise ValueError(f"unknown metrics columns: {sorted(unknown)}")
        row = {col: values.get(col) for col in METRICS_COLUMNS}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", encoding="ascii") as fh:
                fh.write(",".join(_fmt(row[col]) for col in METRICS_COLUMNS) + "\n")

    def select(self, kind: str):
        return [r for r in self.rows if r["kind"] == kind]


def read_metrics(path):
    """Parse a metrics CSV back into a list of row dicts (strings kept)."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# roagrow-metrics"):
        raise ValueError("not a roagrow metrics file")
    header = lines[1].split(",")
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        row = dict(zip(header, parts))
        for key in header:
            if key in ("kind", "flags"):
                continue
            row[key] = float(row[key]) if row[key] else None
        rows.append(row)
    return rows


@dataclass
class MaskOverlay:
    """Cell masks for the nested-set picture, one flag set per cell."""

    oracle_boundary: np.ndarray
    estimate: np.ndarray
    gap: np.ndarray


def emit_heatmap(domain_field, path, n_theta: int, n_omega: int):
    """Render per-cell data as a portable pixmap/graymap.

    A float array becomes a min-max normalized grayscale PGM; a
    :class:`MaskOverlay` becomes a PPM with the fixed color code.  Rows run
    from omega_max down, theta increases along each row.
    """
    path = Path(path)
    if isinstance(domain_field, MaskOverlay):
        img = np.empty((n_omega * n_theta, 3), dtype=np.uint8)
        img[:] = COLOR_BACKGROUND
        img[domain_field.gap] = COLOR_GAP
        img[domain_field.estimate] = COLOR_ESTIMATE
        img[domain_field.oracle_boundary] = COLOR_ORACLE_BOUNDARY
        img = img.reshape(n_omega, n_theta, 3)[::-1]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{n_theta} {n_omega}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    else:
        field_vals = np.asarray(domain_field, dtype=float)
        lo, hi = float(field_vals.min()), float(field_vals.max())
        scale = (hi - lo) if hi > lo else 1.0
        gray = np.round(255 * (field_vals - lo) / scale).astype(np.uint8)
        gray = gray.reshape(n_omega, n_theta)[::-1]
        with open(path, "wb") as fh:
            fh.write(f"P5\n{n_theta} {n_omega}\n255\n".encode("ascii"))
            fh.write(gray.tobytes())


@dataclass
class RunResult:
    out_dir: Path
    metrics: MetricsLog
    estimate: LevelSetEstimate | None
    policy: object
    oracle_fractions: list = field(default_factory=list)


def _design_lqr(cfg: RedesignConfig, params):
    model = linearize(lambda s, u: step_euler(s, u, params),
                      np.zeros(2), 0.0)
    q = cfg.lqr_q * np.eye(2)
    r = np.array([[cfg.lqr_r]])
    k, p_mat = dare_lqr(model, q, r)
    return k.reshape(2), p_mat


def pretrain_target_values(cfg: RedesignConfig, grid: GridDomain, p_mat):
    """Per-cell pretraining targets: either the isotropic quadratic or the
    LQR cost-to-go shape rescaled to the same overall magnitude."""
    pts = grid.centers()
    iso = cfg.pretrain_coeff * (pts[:, 0] ** 2 + pts[:, 1] ** 2)
    if cfg.pretrain_target == "isotropic":
        return iso
    v_p = np.einsum("ni,ij,nj->n", pts, p_mat, pts)
    return iso.mean() / v_p.mean() * v_p


def pretrain_net(cfg: RedesignConfig, grid: GridDomain, rng) -> tuple:
    """Initialize and pretrain the Lyapunov net per the configuration."""
    k_gain, p_mat = _design_lqr(cfg, cfg.pendulum_params())
    net = PDLyapunovNet.initialize(rng, cfg.net_widths(), cfg.pd_eps)
    stats = pretrain_quadratic(net, grid.centers(), rng,
                               coeff=cfg.pretrain_coeff,
                               lr=cfg.pretrain_lr,
                               steps=cfg.pretrain_steps,
                               batch=cfg.pretrain_batch,
                               target=pretrain_target_values(cfg, grid, p_mat))
    return net, stats, k_gain, p_mat


def _phase_overlay(grid: GridDomain, est: LevelSetEstimate,
                   gamma: float, mask: RoaMask) -> MaskOverlay:
    v = est.net.value(grid.centers())
    return MaskOverlay(oracle_boundary=mask.boundary_cells(),
                       estimate=v < est.c,
                       gap=(v >= est.c) & (v < gamma * est.c))


def run_redesign(cfg: RedesignConfig, out_dir=None) -> RunResult:
    """Execute the full loop and write all artifacts.

    Partial artifacts survive a failing phase: the metrics CSV is flushed row
    by row and checkpoints are written as soon as they exist.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    (out / "heatmaps").mkdir(exist_ok=True)
    (out / "config_used.cfg").write_text(dump_config(cfg), encoding="utf-8")

    timings = open(out / "timings.txt", "w", encoding="ascii")
    t_run = time.perf_counter()

    def note_time(label: str, t0: float):
        timings.write(f"{label} {time.perf_counter() - t0:.3f}s\n")
        timings.flush()

    rng = np.random.default_rng(cfg.seed)
    params = cfg.pendulum_params()
    grid = cfg.grid()
    box = grid.safety_box(cfg.safety_box_factor)
    metrics = MetricsLog(out / "metrics.csv")

    try:
        t0 = time.perf_counter()
        net, pre, k_gain, _ = pretrain_net(cfg, grid, rng)
        policy = cfg.initial_policy(k_gain)
        f_builder = lambda pol: closed_loop(pol, params)
        f_cur = f_builder(policy)
        note_time("pretrain", t0)
        log.info("pretraining MSE %.4g -> %.4g", pre["initial_mse"], pre["final_mse"])
        save_net(net, out / "checkpoints" / "net_phase_00.ckpt")
        emit_heatmap(net.value(grid.centers()), out / "heatmaps" / "pretrain_v.pgm",
                     grid.n_theta, grid.n_omega)

        c0 = line_search_level(net, f_cur, grid)
        est = LevelSetEstimate(net, c0)

        t0 = time.perf_counter()
        mask = true_roa(f_cur, grid, cfg.oracle_kmax, cfg.oracle_ball_radius,
                        cfg.oracle_confirm_steps, box)
        note_time("oracle_baseline", t0)
        save_mask_pgm(mask, out / "masks" / "oracle_baseline.pgm")
        save_mask_csv(mask, out / "masks" / "oracle_baseline.csv")
        oracle_fractions = [mask.fraction]
        metrics.add(phase=0, iter=0, kind="init", level_c=est.c,
                    est_fraction=est.fraction(grid),
                    oracle_fraction=mask.fraction,
                    sat_a=policy.psi.a, sat_b=policy.psi.b,
                    sat_ma=policy.psi.m_a, sat_mb=policy.psi.m_b, flags="")

        prev_est, prev_f = est, f_cur
        level_history = []
        for phase in range(1, cfg.phases + 1):
            t0 = time.perf_counter()
            est, growth = estimate_roa(prev_est, prev_f, f_cur,
                                       cfg.roa_hyper(phase), grid, rng, box)
            note_time(f"estimate_phase_{phase:02d}", t0)
            for rec in growth:
                metrics.add(phase=phase, iter=rec.iteration, kind="growth",
                            level_c=rec.level, est_fraction=rec.est_fraction,
                            cbar_fraction=rec.cbar_fraction, loss=rec.loss,
                            flags="gap_empty" if rec.gap_empty else "")
            level_history.append(est.c)
            save_net(est.net, out / "checkpoints" / f"net_phase_{phase:02d}.ckpt")

            # soundness of the fresh estimate against the matching oracle mask
            est_mask = est.mask(grid)
            unsound = float((est_mask & ~mask.values).sum()) / grid.n_cells
            emit_heatmap(_phase_overlay(grid, est, cfg.gamma_r, mask),
                         out / "heatmaps" / f"phase_{phase:02d}_roa.ppm",
                         grid.n_theta, grid.n_omega)

            t0 = time.perf_counter()
            policy, rec = update_policy(policy, est, f_builder,
                                        cfg.policy_hyper(phase), grid, rng, box)
            f_cur = f_builder(policy)
            note_time(f"policy_phase_{phase:02d}", t0)

            t0 = time.perf_counter()
            mask = true_roa(f_cur, grid, cfg.oracle_kmax, cfg.oracle_ball_radius,
                            cfg.oracle_confirm_steps, box)
            note_time(f"oracle_phase_{phase:02d}", t0)
            save_mask_pgm(mask, out / "masks" / f"oracle_phase_{phase:02d}.pgm")
            save_mask_csv(mask, out / "masks" / f"oracle_phase_{phase:02d}.csv")
            oracle_fractions.append(mask.fraction)

            metrics.add(phase=phase, iter=0, kind="policy", level_c=est.c,
                        est_fraction=est.fraction(grid),
                        oracle_fraction=mask.fraction, loss=rec.loss,
                        sat_a=policy.psi.a, sat_b=policy.psi.b,
                        sat_ma=policy.psi.m_a, sat_mb=policy.psi.m_b,
                        grad_norm_final=rec.diagnostics.grad_norm_final,
                        grad_norm_psi=rec.diagnostics.grad_norm_psi,
                        unsound_fraction=unsound,
                        flags="gap_empty" if rec.gap_empty else "")
            prev_est, prev_f = est, f_cur
            log.info("phase %d: c=%.4f est=%.4f oracle=%.4f psi=(%.3f, %.3f, %.3f, %.3f)",
                     phase, est.c, est.fraction(grid), mask.fraction,
                     policy.psi.a, policy.psi.b, policy.psi.m_a, policy.psi.m_b)

        if cfg.phases > 0:
            if abs(level_history[-1] - 1.0) >= abs(level_history[0] - 1.0):
                log.warning("level values did not move toward 1: first %.4f last %.4f",
                            level_history[0], level_history[-1])
        write_report(out)
        note_time("total", t_run)
    finally:
        timings.close()
    return RunResult(out, metrics, est, policy, oracle_fractions)


def write_report(out_dir):
    """Re-derive the figure source tables from an existing metrics CSV."""
    out = Path(out_dir)
    rows = read_metrics(out / "metrics.csv")
    growth = [r for r in rows if r["kind"] == "growth"]
    policy = [r for r in rows if r["kind"] == "policy"]
    init = [r for r in rows if r["kind"] == "init"]

    with open(out / "fractions.csv", "w", encoding="ascii") as fh:
        fh.write("global_iter,phase,iter,est_fraction,oracle_fraction\n")
        latest_oracle = init[0]["oracle_fraction"] if init else None
        by_phase = {}
        for r in policy:
            by_phase[int(r["phase"])] = r["oracle_fraction"]
        for g_idx, r in enumerate(growth, start=1):
            phase = int(r["phase"])
            if phase - 1 in by_phase:
                latest_oracle = by_phase[phase - 1]
            fh.write(f"{g_idx},{phase},{int(r['iter'])},"
                     f"{_fmt(r['est_fraction'])},{_fmt(latest_oracle)}\n")

    with open(out / "levels.csv", "w", encoding="ascii") as fh:
        fh.write("global_iter,phase,iter,level_c\n")
        for g_idx, r in enumerate(growth, start=1):
            fh.write(f"{g_idx},{int(r['phase'])},{int(r['iter'])},{_fmt(r['level_c'])}\n")

    with open(out / "policy_params.csv", "w", encoding="ascii") as fh:
        fh.write("phase,sat_a,sat_b,sat_ma,sat_mb\n")
        for r in init + policy:
            fh.write(f"{int(r['phase'])},{_fmt(r['sat_a'])},{_fmt(r['sat_b'])},"
                     f"{_fmt(r['sat_ma'])},{_fmt(r['sat_mb'])}\n")
