import numpy as np
import pytest

from roagrow.config import RedesignConfig
from roagrow.dynamics import closed_loop, dare_lqr, linearize, step_euler
from roagrow.experiment import pretrain_net
from roagrow.lyapunov import PDLyapunovNet


@pytest.fixture(scope="session")
def cfg():
    return RedesignConfig()


@pytest.fixture(scope="session")
def params(cfg):
    return cfg.pendulum_params()


@pytest.fixture(scope="session")
def grid(cfg):
    return cfg.grid()


@pytest.fixture(scope="session")
def lqr(cfg, params):
    model = linearize(lambda s, u: step_euler(s, u, params), np.zeros(2), 0.0)
    k, p = dare_lqr(model, cfg.lqr_q * np.eye(2), np.array([[cfg.lqr_r]]))
    return k.reshape(2), p


@pytest.fixture(scope="session")
def initial_policy(cfg, lqr):
    return cfg.initial_policy(lqr[0])


@pytest.fixture(scope="session")
def f_initial(initial_policy, params):
    return closed_loop(initial_policy, params)


@pytest.fixture(scope="session")
def small_net():
    """A fresh random net, cheap enough for gradient oracles."""
    return PDLyapunovNet.initialize(np.random.default_rng(7))


@pytest.fixture(scope="session")
def pretrained(cfg, grid):
    """Fully pretrained net (session-scoped, ~10 s)."""
    rng = np.random.default_rng(cfg.seed)
    net, stats, k, p = pretrain_net(cfg, grid, rng)
    return net, stats, k, p


# -- end-to-end runs shared by the acceptance suite and trend tests ----------

ACCEPT_SEED = 1
ACCEPT_PHASES = 7


@pytest.fixture(scope="session")
def run_thresholds(tmp_path_factory):
    from roagrow.experiment import run_redesign

    out = tmp_path_factory.mktemp("run_thresholds")
    run_cfg = RedesignConfig(phases=ACCEPT_PHASES, seed=ACCEPT_SEED,
                             out_dir=str(out))
    return run_cfg, run_redesign(run_cfg)


@pytest.fixture(scope="session")
def run_no_monot(tmp_path_factory):
    from roagrow.experiment import run_redesign

    out = tmp_path_factory.mktemp("run_no_monot")
    run_cfg = RedesignConfig(phases=ACCEPT_PHASES, seed=ACCEPT_SEED,
                             lambda_monot=0.0, out_dir=str(out))
    return run_cfg, run_redesign(run_cfg)


@pytest.fixture(scope="session")
def run_slopes(tmp_path_factory):
    from roagrow.experiment import run_redesign

    out = tmp_path_factory.mktemp("run_slopes")
    run_cfg = RedesignConfig(phases=ACCEPT_PHASES, seed=ACCEPT_SEED,
                             variant="slopes", out_dir=str(out))
    return run_cfg, run_redesign(run_cfg)
