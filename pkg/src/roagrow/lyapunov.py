"""Positive-definite Lyapunov candidate V(x) = ||v(x)||^2 and its gradients.

``v`` is a bias-free multilayer perceptron with tanh activations whose weight
matrices are built as a stack of G1'G1 + eps*I over a free block G2.  Both
blocks have trivial nullspace, so v(x) = 0 only at x = 0, which gives V(0) = 0
and V(x) > 0 elsewhere by construction rather than by training.

The reverse-mode pass here is special-purpose: it differentiates exactly the
compositions this project trains (weighted sums of V values over batches),
returning gradients with respect to the network input and to the free blocks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PDLayer",
    "PDLyapunovNet",
    "TapeGradient",
    "PretrainDivergence",
    "build_weight",
    "pretrain_quadratic",
    "save_net",
    "load_net",
]

CHECKPOINT_MAGIC = "ROAGROW-LYAPNET"
CHECKPOINT_VERSION = 1


class PretrainDivergence(RuntimeError):
    """Pretraining MSE blew up instead of decreasing."""


@dataclass
class PDLayer:
    """Free parameters of one layer; the effective weight is derived.

    ``g1`` is (q, d_in) and ``g2`` is (d_out - d_in, d_in); d_out >= d_in so
    widths never contract and the stacked weight keeps a trivial nullspace.
    """

    g1: np.ndarray
    g2: np.ndarray
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.g1.ndim != 2 or self.g2.ndim != 2:
            raise ValueError("G1 and G2 must be matrices")
        if self.g1.shape[1] != self.g2.shape[1]:
            raise ValueError("G1 and G2 must share the input dimension")

    @property
    def d_in(self) -> int:
        return self.g1.shape[1]

    @property
    def d_out(self) -> int:
        return self.d_in + self.g2.shape[0]


def build_weight(layer: PDLayer) -> np.ndarray:
    """Effective weight: [G1'G1 + eps*I ; G2], shape (d_out, d_in)."""
    top = layer.g1.T @ layer.g1 + layer.eps * np.eye(layer.d_in)
    return np.vstack([top, layer.g2])


@dataclass
class TapeGradient:
    """Result of one reverse pass.

    ``d_input`` holds the per-sample gradient of the weighted output sum with
    respect to the network input; ``d_params`` holds (dG1, dG2) per layer.
    """

    d_input: np.ndarray
    d_params: list


class PDLyapunovNet:
    """Three bias-free tanh layers with trivial-nullspace weights.

    V(x) is the squared norm of the final hidden activation.  Widths default
    to 2 -> 64 -> 64 -> 64 with q = d_in for every G1 block.
    """

    def __init__(self, layers: list):
        self.layers = layers
        dims = [layers[0].d_in] + [l.d_out for l in layers]
        for prev, layer in zip(dims, layers):
            if layer.d_in != prev:
                raise ValueError("layer input dims must chain")

    @classmethod
    def initialize(cls, rng: np.random.Generator, widths=(2, 64, 64, 64),
                   eps: float = 0.01) -> "PDLyapunovNet":
        """Uniform init in [-s, s] with s = 1/sqrt(fan_in) for both blocks."""
        layers = []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            if d_out < d_in:
                raise ValueError("widths must be non-contracting")
            s = 1.0 / np.sqrt(d_in)
            g1 = rng.uniform(-s, s, size=(d_in, d_in))
            g2 = rng.uniform(-s, s, size=(d_out - d_in, d_in))
            layers.append(PDLayer(g1, g2, eps))
        return cls(layers)

    def copy(self) -> "PDLyapunovNet":
        return PDLyapunovNet([PDLayer(l.g1.copy(), l.g2.copy(), l.eps)
                              for l in self.layers])

    # -- forward -----------------------------------------------------------

    def weights(self) -> list:
        return [build_weight(l) for l in self.layers]

    def _forward(self, x: np.ndarray):
        """Returns the activation stack [x, h1, ..., hL]."""
        acts = [x]
        h = x
        for w in self.weights():
            h = np.tanh(h @ w.T)
            acts.append(h)
        return acts

    def features(self, x) -> np.ndarray:
        """v(x): the final hidden activation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._forward(x)[-1]

    def value(self, x) -> np.ndarray:
        """V(x) = ||v(x)||^2 for a batch (n, 2); returns (n,)."""
        v = self.features(x)
        return np.einsum("ij,ij->i", v, v)

    def value_at(self, x) -> float:
        return float(self.value(np.asarray(x, dtype=float).reshape(1, -1))[0])

    # -- reverse mode ------------------------------------------------------

    def backward(self, x: np.ndarray, out_weights: np.ndarray) -> TapeGradient:
        """Reverse pass for S = sum_i out_weights[i] * V(x[i]).

        Returns per-sample input gradients (row i is the gradient of
        ``out_weights[i] * V(x[i])``) and parameter gradients of S.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out_weights = np.asarray(out_weights, dtype=float)
        acts = self._forward(x)
        ws = self.weights()
        delta = 2.0 * out_weights[:, None] * acts[-1]      # dS/dh_L
        d_weights = [None] * len(ws)
        for ell in range(len(ws) - 1, -1, -1):
            dz = delta * (1.0 - acts[ell + 1] ** 2)        # through tanh
            d_weights[ell] = dz.T @ acts[ell]
            delta = dz @ ws[ell]
        d_params = []
        for layer, dw in zip(self.layers, d_weights):
            d_top = dw[: layer.d_in, :]
            d_g1 = layer.g1 @ (d_top + d_top.T)
            d_g2 = dw[layer.d_in:, :]
            d_params.append((d_g1, d_g2))
        return TapeGradient(d_input=delta, d_params=d_params)

    def grad_x(self, x) -> np.ndarray:
        """Per-sample gradient of V w.r.t. the input, shape (n, 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.backward(x, np.ones(len(x))).d_input

    def grad_x_at(self, x) -> np.ndarray:
        return self.grad_x(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def grad_params(self, x) -> list:
        """Gradient of V(x) (summed over the batch) w.r.t. the free blocks."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.backward(x, np.ones(len(x))).d_params

    # -- parameter vector utilities -----------------------------------------

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.g1.ravel(), l.g2.ravel()])
                               for l in self.layers])

    def set_flat_params(self, vec: np.ndarray):
        pos = 0
        for layer in self.layers:
            n1 = layer.g1.size
            layer.g1 = vec[pos:pos + n1].reshape(layer.g1.shape).copy()
            pos += n1
            n2 = layer.g2.size
            layer.g2 = vec[pos:pos + n2].reshape(layer.g2.shape).copy()
            pos += n2
        if pos != len(vec):
            raise ValueError("parameter vector length mismatch")

    def flatten_grads(self, d_params: list) -> np.ndarray:
        return np.concatenate([np.concatenate([dg1.ravel(), dg2.ravel()])
                               for dg1, dg2 in d_params])

    def sgd_step(self, d_params: list, lr: float):
        """In-place plain SGD update; the caller owns the single-writer lock."""
        for layer, (d_g1, d_g2) in zip(self.layers, d_params):
            layer.g1 -= lr * d_g1
            layer.g2 -= lr * d_g2


def quadratic_target(x: np.ndarray, coeff: float = 0.1) -> np.ndarray:
    """The pretraining target coeff * (theta^2 + omega^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return coeff * (x[:, 0] ** 2 + x[:, 1] ** 2)


def pretrain_quadratic(net: PDLyapunovNet, grid_points: np.ndarray,
                       rng: np.random.Generator, coeff: float = 0.1,
                       lr: float = 0.001, steps: int = 10_000,
                       batch: int = 256, target=None) -> dict:
    """Fit V to a quadratic target by mini-batch SGD on the grid points.

    The default target is coeff * (theta^2 + omega^2); pass ``target`` (per
    grid point values or a callable) to fit a different shape, e.g. the LQR
    cost-to-go.  Mutates ``net`` and returns {initial_mse, final_mse}; raises
    :class:`PretrainDivergence` if the grid MSE grows 10x over its initial
    value at any checkpoint.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if target is None:
        target_all = quadratic_target(grid_points, coeff)
    elif callable(target):
        target_all = np.asarray(target(grid_points), dtype=float)
    else:
        target_all = np.asarray(target, dtype=float)
    if target_all.shape != (len(grid_points),):
        raise ValueError("target must provide one value per grid point")

    def grid_mse() -> float:
        return float(np.mean((net.value(grid_points) - target_all) ** 2))

    initial = grid_mse()
    n = len(grid_points)
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        xb = grid_points[idx]
        err = net.value(xb) - target_all[idx]
        # d/dtheta mean(err^2) via weights 2*err/m on each sample's V
        tape = net.backward(xb, 2.0 * err / len(xb))
        net.sgd_step(tape.d_params, lr)
        if (step + 1) % 1000 == 0:
            mse = grid_mse()
            if not np.isfinite(mse) or mse > 10.0 * initial:
                raise PretrainDivergence(
                    f"pretraining diverged at step {step + 1}: "
                    f"mse {mse:.4g} vs initial {initial:.4g}")
    final = grid_mse()
    if steps > 0 and final >= initial:
        raise PretrainDivergence(
            f"pretraining failed to reduce the grid MSE ({initial:.4g} -> {final:.4g})")
    return {"initial_mse": initial, "final_mse": final}


# -- checkpoint format -------------------------------------------------------
#
# ASCII header, one field per line, terminated by a blank line, followed by
# the raw little-endian float64 payload: for each layer, G1 then G2 in
# row-major order.
#
#   ROAGROW-LYAPNET 1
#   eps <float>
#   widths <d0> <d1> ... <dL>
#   <blank line>
#
# q = d_in for every G1 block, so all shapes follow from the widths.


def save_net(net: PDLyapunovNet, path):
    widths = [net.layers[0].d_in] + [l.d_out for l in net.layers]
    header = io.StringIO()
    header.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
    header.write(f"eps {net.layers[0].eps!r}\n")
    header.write("widths " + " ".join(str(w) for w in widths) + "\n\n")
    payload = net.flat_params().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(payload)


def load_net(path) -> PDLyapunovNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, payload = blob.partition(b"\n\n")
    lines = head.decode("ascii").splitlines()
    magic, version = lines[0].rsplit(" ", 1)
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"not a version-{CHECKPOINT_VERSION} {CHECKPOINT_MAGIC} file")
    eps = float(lines[1].split()[1])
    widths = [int(t) for t in lines[2].split()[1:]]
    layers = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        layers.append(PDLayer(np.zeros((d_in, d_in)), np.zeros((d_out - d_in, d_in)), eps))
    net = PDLyapunovNet(layers)
    vec = np.frombuffer(payload, dtype="<f8", count=len(net.flat_params()))
    net.set_flat_params(vec.astype(float))
    return net
