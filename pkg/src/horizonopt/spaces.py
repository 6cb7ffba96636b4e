"""Time grids, trajectories, and exponentially weighted space-time norms.

A trajectory stores nodal coefficients at the times of a uniform grid on
[0, T].  Time quadrature is the right-rectangle rule (weight dt at
t_1..t_N, none at t_0), which is the quadrature induced by implicit Euler
and makes the discrete adjoint an exact transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*step, i = 0..n_steps, with horizon = n_steps*step."""

    horizon: float
    step: float

    def __post_init__(self):
        if self.step <= 0 or self.horizon <= 0:
            raise ValueError("horizon and step must be positive")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"horizon {self.horizon} is not an integer multiple of step {self.step}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)


@dataclass
class Trajectory:
    """Time-indexed nodal values: ``values[i]`` holds the coefficients at t_i.

    ``kind`` is one of "state", "adjoint", "control", "generic"; control
    trajectories hold values on the control-subdomain nodes only.
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise ValueError("trajectory length must be n_steps + 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory contains non-finite entries")
        if self.kind not in ("state", "adjoint", "control", "generic"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "Trajectory":
        return Trajectory(self.grid, self.values.copy(), self.kind)

    def restrict(self, grid: TimeGrid) -> "Trajectory":
        """Truncate to a shorter grid with the same step."""
        if abs(grid.step - self.grid.step) > 1e-12 * self.grid.step:
            raise ValueError("restriction requires an identical time step")
        n = grid.n_steps
        if n > self.grid.n_steps:
            raise ValueError("restriction target is longer than the trajectory")
        return Trajectory(grid, self.values[: n + 1].copy(), self.kind)

    def to_csv(self, path) -> None:
        """Write as CSV with columns ``t, node_0..node_{w-1}`` at 17 significant digits."""
        header = f"# horizonopt trajectory v1 kind={self.kind} columns={self.width}\n"
        cols = ",".join(["t"] + [f"node_{k}" for k in range(self.width)])
        t = self.grid.times
        with open(path, "w") as fh:
            fh.write(header)
            fh.write(cols + "\n")
            for i in range(self.values.shape[0]):
                row = [FLOAT_FMT % t[i]] + [FLOAT_FMT % v for v in self.values[i]]
                fh.write(",".join(row) + "\n")

    @staticmethod
    def from_csv(path, kind: str | None = None) -> "Trajectory":
        meta = {}
        with open(path) as fh:
            first = fh.readline()
            if first.startswith("#"):
                for tok in first.split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                fh.readline()  # column names
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        t, vals = data[:, 0], data[:, 1:]
        step = t[1] - t[0]
        grid = TimeGrid(t[-1], step)
        return Trajectory(grid, vals, kind or meta.get("kind", "generic"))


def zeros_like(traj: Trajectory, kind: str | None = None) -> Trajectory:
    return Trajectory(traj.grid, np.zeros_like(traj.values), kind or traj.kind)


def quad_energies(values: np.ndarray, form) -> np.ndarray:
    """Per-time quadratic form values v_i' X v_i.

    ``form`` is a sparse/dense matrix or a 1D array interpreted as a diagonal.
    """
    if isinstance(form, np.ndarray) and form.ndim == 1:
        return np.einsum("ij,j,ij->i", values, form, values)
    prod = form @ values.T
    if sps.issparse(prod):
        prod = prod.toarray()
    return np.einsum("ij,ji->i", values, np.asarray(prod))


def _quad_weights(grid: TimeGrid, rate: float) -> np.ndarray:
    t = grid.times[1:]
    return grid.step * np.exp(-rate * t)


def weighted_l2_norm(traj: Trajectory, rate: float, form) -> float:
    """Right-rectangle discretization of (int_0^T e^{-rate t} |y(t)|_X^2 dt)^{1/2}."""
    e = quad_energies(traj.values[1:], form)
    return float(np.sqrt(np.sum(_quad_weights(traj.grid, rate) * np.maximum(e, 0.0))))


def weighted_lp_norm(traj: Trajectory, rate: float, p: float, form) -> float:
    """Same quadrature with p-th powers of the spatial norm."""
    if p <= 0:
        raise ValueError("p must be positive")
    e = np.sqrt(np.maximum(quad_energies(traj.values[1:], form), 0.0))
    s = np.sum(_quad_weights(traj.grid, rate) * e**p)
    return float(s ** (1.0 / p))


def weighted_sup_norm(traj: Trajectory, rate: float, form) -> float:
    """max_i e^{-rate t_i / 2} |y_i|_X over the whole grid, including t_0."""
    e = np.sqrt(np.maximum(quad_energies(traj.values, form), 0.0))
    return float(np.max(np.exp(-0.5 * rate * traj.grid.times) * e))


def weighted_inner(a: Trajectory, b: Trajectory, rate: float, form) -> float:
    """Discrete weighted pairing sum_i dt e^{-rate t_i} a_i' X b_i (i >= 1)."""
    if a.values.shape != b.values.shape:
        raise ValueError("trajectory shapes do not match")
    if isinstance(form, np.ndarray) and form.ndim == 1:
        cross = np.einsum("ij,j,ij->i", a.values[1:], form, b.values[1:])
    else:
        prod = form @ b.values[1:].T
        if sps.issparse(prod):
            prod = prod.toarray()
        cross = np.einsum("ij,ji->i", a.values[1:], np.asarray(prod))
    return float(np.sum(_quad_weights(a.grid, rate) * cross))


def trajectory_norm(ops, traj: Trajectory, rate: float, metric: str = "mass",
                    p: float | None = None) -> float:
    """Weighted norm with the metric resolved from assembled operators.

    metric: "mass" | "h1" (mass + stiffness) | "control".  Control
    trajectories must use the control metric and vice versa.
    """
    if metric == "control":
        if traj.kind != "control":
            raise ValueError("control metric requires a control trajectory")
        form = ops.control_weights
    elif metric in ("mass", "h1"):
        if traj.kind == "control":
            raise ValueError(f"metric {metric!r} is not defined for control trajectories")
        form = ops.mass if metric == "mass" else ops.h1
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if p is None or p == 2:
        return weighted_l2_norm(traj, rate, form)
    return weighted_lp_norm(traj, rate, p, form)
