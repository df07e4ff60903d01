"""Learnable tone curves mapping log-domain exposure to LDR color.

Two mappers share one calling convention: a fixed sigmoid used during the
coarse phase, and a per-channel piecewise-linear grid with leaky tails used
during the fine phase. The grid is asymmetric: its domain [x_lo, x_hi] is
split at x_mid into a densely sampled left region (shadows compress there
after log scaling) and a sparser right region. Outside the domain two small
monotone tails keep gradients alive: a linear ramp below, and a saturating
reciprocal-sqrt branch above that rises from 1 toward 1 + leak_beta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AsymmetricGrid",
    "GridConfig",
    "grid_eval",
    "grid_backward",
    "sigmoid_eval",
    "sigmoid_backward",
    "smoothness_loss",
    "unit_exposure_loss",
    "init_grid_from_sigmoid",
]


def sigmoid_eval(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_backward(x, upstream=1.0):
    """d sigmoid(x)/dx times upstream."""
    s = np.asarray(sigmoid_eval(x))
    return s * (1.0 - s) * upstream


def _count_segments(lo, hi, density, side):
    n = (hi - lo) * density
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-9:
        raise ValueError(
            f"{side} region span {hi - lo} times density {density} "
            f"must be a positive integer, got {n}"
        )
    return n_int


@dataclass
class AsymmetricGrid:
    """Per-channel piecewise-linear curve on [x_lo, x_hi] with pinned endpoints.

    node_values has shape (3, n_nodes). The first and last node of every
    channel are pinned to 0 and 1 and are not learnable; gradient helpers
    always return zeros there.
    """

    x_lo: float
    x_mid: float
    x_hi: float
    dense_density: int
    sparse_density: int
    leak_beta: float
    node_values: np.ndarray
    positions: np.ndarray = field(init=False, repr=False, compare=False)
    n_dense: int = field(init=False, repr=False, compare=False)
    n_sparse: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.x_lo < self.x_mid < self.x_hi):
            raise ValueError("grid bounds must satisfy x_lo < x_mid < x_hi")
        if self.leak_beta <= 0:
            raise ValueError("leak_beta must be positive")
        self.n_dense = _count_segments(self.x_lo, self.x_mid, self.dense_density, "dense")
        self.n_sparse = _count_segments(self.x_mid, self.x_hi, self.sparse_density, "sparse")
        n_nodes = self.n_dense + self.n_sparse + 1
        dense_pos = self.x_lo + np.arange(self.n_dense) / self.dense_density
        sparse_pos = self.x_mid + np.arange(self.n_sparse + 1) / self.sparse_density
        self.positions = np.concatenate([dense_pos, sparse_pos])
        self.positions[self.n_dense] = self.x_mid
        self.positions[-1] = self.x_hi
        self.node_values = np.array(self.node_values, dtype=np.float64)
        if self.node_values.shape != (3, n_nodes):
            raise ValueError(
                f"node_values must have shape (3, {n_nodes}), got {self.node_values.shape}"
            )
        self.node_values[:, 0] = 0.0
        self.node_values[:, -1] = 1.0

    @property
    def n_nodes(self) -> int:
        return self.node_values.shape[1]

    def copy(self) -> "AsymmetricGrid":
        return AsymmetricGrid(
            self.x_lo, self.x_mid, self.x_hi,
            self.dense_density, self.sparse_density, self.leak_beta,
            self.node_values.copy(),
        )

    def _locate(self, x):
        """Segment index and fractional offset for in-domain samples."""
        dense = x <= self.x_mid
        t = np.where(
            dense,
            (x - self.x_lo) * self.dense_density,
            (x - self.x_mid) * self.sparse_density,
        )
        seg = np.floor(t).astype(np.int64)
        limit = np.where(dense, self.n_dense - 1, self.n_sparse - 1)
        seg = np.clip(seg, 0, limit)
        frac = t - seg
        seg = seg + np.where(dense, 0, self.n_dense)
        return seg, frac

    def eval_channel(self, x, channel: int):
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        v = self.node_values[channel]
        out = np.empty_like(x)

        lo = x < self.x_lo
        hi = x > self.x_hi
        mid = ~(lo | hi)
        out[lo] = self.leak_beta * (x[lo] - self.x_lo)
        out[hi] = -self.leak_beta / np.sqrt(x[hi] - self.x_hi + 1.0) + self.leak_beta + 1.0
        seg, frac = self._locate(x[mid])
        out[mid] = v[seg] * (1.0 - frac) + v[seg + 1] * frac
        # endpoint pins must hold bit-exactly regardless of float segment math
        out[x == self.x_lo] = v[0]
        out[x == self.x_hi] = v[-1]
        return float(out[0]) if scalar else out

    def eval_rgb(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != 3:
            raise ValueError("eval_rgb expects trailing dimension 3")
        out = np.empty_like(x)
        for c in range(3):
            out[..., c] = self.eval_channel(x[..., c], c)
        return out

    def backward_channel(self, x, channel: int, upstream=1.0, node_grad_out=None):
        """Gradients of sum(upstream * g(x)) w.r.t. x and node values.

        Returns (dx, node_grads). Pinned endpoint nodes always get zero.
        When node_grad_out (shape (n_nodes,)) is given, grads accumulate
        into it and it is returned as node_grads.
        """
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), x.shape)
        v = self.node_values[channel]
        dx = np.empty_like(x)
        ng = node_grad_out if node_grad_out is not None else np.zeros(self.n_nodes)

        lo = x < self.x_lo
        hi = x > self.x_hi
        mid = ~(lo | hi)
        dx[lo] = self.leak_beta * up[lo]
        dx[hi] = 0.5 * self.leak_beta * (x[hi] - self.x_hi + 1.0) ** -1.5 * up[hi]
        seg, frac = self._locate(x[mid])
        density = np.where(seg < self.n_dense, self.dense_density, self.sparse_density)
        dx[mid] = (v[seg + 1] - v[seg]) * density * up[mid]
        np.add.at(ng, seg, (1.0 - frac) * up[mid])
        np.add.at(ng, seg + 1, frac * up[mid])
        ng[0] = 0.0
        ng[-1] = 0.0
        return (float(dx[0]) if scalar else dx), ng

    def backward_rgb(self, x, upstream):
        """Vector form of backward_channel over a trailing RGB axis."""
        x = np.asarray(x, dtype=np.float64)
        dx = np.empty_like(x)
        node_grads = np.zeros_like(self.node_values)
        for c in range(3):
            dx[..., c], _ = self.backward_channel(
                x[..., c], c, upstream[..., c], node_grad_out=node_grads[c]
            )
        return dx, node_grads

    def non_monotone_segments(self):
        """Per-channel count of interior segments with negative slope."""
        dv = np.diff(self.node_values, axis=1)
        return (dv < 0).sum(axis=1)


@dataclass
class GridConfig:
    x_lo: float = -6.0
    x_mid: float = 0.0
    x_hi: float = 3.0
    dense_density: int = 128
    sparse_density: int = 64
    leak_beta: float = 0.01

    def build(self) -> AsymmetricGrid:
        """Grid with a linear 0-to-1 ramp over the domain."""
        n_dense = _count_segments(self.x_lo, self.x_mid, self.dense_density, "dense")
        n_sparse = _count_segments(self.x_mid, self.x_hi, self.sparse_density, "sparse")
        dense_pos = self.x_lo + np.arange(n_dense) / self.dense_density
        sparse_pos = self.x_mid + np.arange(n_sparse + 1) / self.sparse_density
        pos = np.concatenate([dense_pos, sparse_pos])
        ramp = (pos - self.x_lo) / (self.x_hi - self.x_lo)
        values = np.tile(ramp, (3, 1))
        return AsymmetricGrid(
            self.x_lo, self.x_mid, self.x_hi,
            self.dense_density, self.sparse_density, self.leak_beta,
            values,
        )


def grid_eval(grid: AsymmetricGrid, x, channel: int):
    return grid.eval_channel(x, channel)


def grid_backward(grid: AsymmetricGrid, x, channel: int, upstream=1.0):
    return grid.backward_channel(x, channel, upstream)


def init_grid_from_sigmoid(grid: AsymmetricGrid) -> AsymmetricGrid:
    """Overwrite learnable nodes with sigmoid(position); endpoints stay pinned."""
    grid.node_values[:, :] = sigmoid_eval(grid.positions)[None, :]
    grid.node_values[:, 0] = 0.0
    grid.node_values[:, -1] = 1.0
    return grid


def smoothness_loss(grid: AsymmetricGrid):
    """Sum over channels and interior nodes of the squared second difference.

    The stencil is the classic response-curve regularizer: for uniform
    spacing it is v[i-1] - 2 v[i] + v[i+1], which keeps the penalty on the
    same scale as the node values themselves regardless of grid density.
    Across the density junction the weights are spacing-corrected so that
    any affine run of nodes still costs exactly zero.
    """
    if grid.n_nodes < 3:
        raise ValueError("smoothness needs at least 3 nodes")
    h = np.diff(grid.positions)
    h1 = h[:-1]
    h2 = h[1:]
    c_prev = 2.0 * h2 / (h1 + h2)
    c_mid = np.full_like(h1, -2.0)
    c_next = 2.0 * h1 / (h1 + h2)
    v = grid.node_values
    sec = c_prev * v[:, :-2] + c_mid * v[:, 1:-1] + c_next * v[:, 2:]
    loss = float(np.sum(sec * sec))
    g = 2.0 * sec
    grads = np.zeros_like(v)
    grads[:, :-2] += g * c_prev
    grads[:, 1:-1] += g * c_mid
    grads[:, 2:] += g * c_next
    grads[:, 0] = 0.0
    grads[:, -1] = 0.0
    return loss, grads


UNIT_SIGNAL_TARGET = 0.73


def unit_exposure_loss(grid: AsymmetricGrid, target: float = UNIT_SIGNAL_TARGET):
    """Squared deviation of g(0) from the mid-gray anchor, summed over channels.

    Pins the global scale freedom left by jointly learnable radiance and
    tone curve: anchoring the curve at unit exposure fixes the HDR scale.
    """
    if not (grid.x_lo <= 0.0 <= grid.x_hi):
        raise ValueError("unit exposure anchor 0 lies outside the grid domain")
    loss = np.float64(0.0)
    grads = np.zeros_like(grid.node_values)
    for c in range(3):
        # numpy scalars overflow to inf instead of raising, so a diverging
        # grid surfaces as a non-finite loss upstream
        diff = np.float64(grid.eval_channel(0.0, c)) - target
        loss += diff * diff
        _, ng = grid.backward_channel(0.0, c, float(2.0 * diff))
        grads[c] += ng
    return float(loss), grads
