"""Admissible control sets and their pointwise-in-time projections.

Two geometries are supported: a ball of given radius in the (lumped)
L2 norm over the control subdomain, applied at every time step, and a
nodal box [lower, upper].  Both projections act independently per time
step, so they commute with any permutation of the steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spaces import Trajectory, weighted_l2_norm


@dataclass(frozen=True)
class AdmissibleSet:
    """Ball {v : |v|_{L2(control)} <= radius} or box {lower <= v <= upper}."""

    kind: str
    radius: float = 0.0
    lower: float = 0.0
    upper: float = 0.0

    def __post_init__(self):
        if self.kind == "ball":
            if not np.isfinite(self.radius) or self.radius <= 0:
                raise ValueError("ball radius must be positive and finite")
        elif self.kind == "box":
            if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
                raise ValueError("box bounds must be finite")
            if self.lower >= self.upper:
                raise ValueError("box requires lower < upper")
        else:
            raise ValueError(f"unknown admissible set kind {self.kind!r}")

    def bound_norm(self, control_weights: np.ndarray) -> float:
        """sup of |v|_{L2(control)} over the set."""
        if self.kind == "ball":
            return self.radius
        vol = float(np.sum(control_weights))
        return max(abs(self.lower), abs(self.upper)) * np.sqrt(vol)


def project_values(admissible: AdmissibleSet, values: np.ndarray,
                   control_weights: np.ndarray) -> np.ndarray:
    """Project per-time-step control values onto the admissible set."""
    if admissible.kind == "box":
        return np.clip(values, admissible.lower, admissible.upper)
    norms = np.sqrt(np.einsum("ij,j,ij->i", values, control_weights, values))
    scale = np.ones_like(norms)
    over = norms > admissible.radius
    scale[over] = admissible.radius / norms[over]
    return values * scale[:, None]


def project_pointwise(admissible: AdmissibleSet, traj: Trajectory,
                      control_weights: np.ndarray) -> Trajectory:
    """Pointwise-in-time projection of a control trajectory onto the set."""
    return Trajectory(traj.grid, project_values(admissible, traj.values, control_weights),
                      "control")


def contains(admissible: AdmissibleSet, traj: Trajectory, control_weights: np.ndarray,
             tol: float = 1e-12) -> bool:
    if admissible.kind == "box":
        return bool(np.all(traj.values >= admissible.lower - tol)
                    and np.all(traj.values <= admissible.upper + tol))
    norms = np.sqrt(np.einsum("ij,j,ij->i", traj.values, control_weights, traj.values))
    return bool(np.all(norms <= admissible.radius * (1.0 + tol) + tol))


def stationarity_residual(spec, u: Trajectory, grad: Trajectory,
                          step: float | None = None) -> float:
    """Norm of the projected-gradient fixed-point gap.

    Returns |u - P(u - step*grad)| in the control-discounted metric.  The
    default step 1/control_weight makes the projected point coincide with
    the closed-form projection of the scaled adjoint, so the residual
    vanishes exactly at first-order stationary points.
    """
    if step is None:
        step = 1.0 / spec.control_weight
    ops = spec.operators
    moved = project_values(spec.admissible, u.values - step * grad.values, ops.control_weights)
    gap = Trajectory(u.grid, u.values - moved, "control")
    return weighted_l2_norm(gap, spec.discounts.control_rate, ops.control_weights)


@dataclass
class StepFormulaRecord:
    time: float
    case: str
    residual: float

    def to_dict(self):
        return {"t": self.time, "case": self.case, "residual": self.residual}


@dataclass
class FormulaReport:
    """Per-time-step residuals of the closed-form first-order relations."""

    records: list
    max_residual: float
    worst_time: float

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "worst_time": self.worst_time,
            "steps": [r.to_dict() for r in self.records],
        }


def check_projection_formulas(spec, u: Trajectory, adjoint: Trajectory,
                              active_tol: float | None = None) -> FormulaReport:
    """Evaluate the pointwise optimality relations at a claimed stationary pair.

    Ball sets: at inactive times the combined density
    adjoint + weight*e^{-rate t} u must vanish; at active times the control
    must be the negatively scaled adjoint of norm ``radius``.  Box sets: the
    control must equal the clamped scaled adjoint; the sup-norm gap per step
    is recorded.
    """
    ops = spec.operators
    nu = spec.control_weight
    rate_c = spec.discounts.control_rate
    t = spec.grid.times
    w = ops.control_weights
    phi = adjoint.values[:, ops.control_index]
    records = []
    adm = spec.admissible
    if adm.kind == "ball":
        if active_tol is None:
            active_tol = 1e-8 * adm.radius
        for i in range(1, spec.grid.n_steps + 1):
            ui = u.values[i]
            unorm = np.sqrt(float(np.dot(ui * w, ui)))
            density = phi[i] + nu * np.exp(-rate_c * t[i]) * ui
            if unorm < adm.radius - active_tol:
                res = np.sqrt(float(np.dot(density * w, density)))
                case = "interior"
            else:
                pnorm = np.sqrt(float(np.dot(phi[i] * w, phi[i])))
                if pnorm <= 1e-300:
                    res = np.sqrt(float(np.dot(density * w, density)))
                    case = "active-degenerate"
                else:
                    gap = ui + adm.radius * phi[i] / pnorm
                    res = np.sqrt(float(np.dot(gap * w, gap)))
                    case = "active"
            records.append(StepFormulaRecord(float(t[i]), case, float(res)))
    else:
        for i in range(1, spec.grid.n_steps + 1):
            target = np.clip(-np.exp(rate_c * t[i]) / nu * phi[i], adm.lower, adm.upper)
            res = float(np.max(np.abs(u.values[i] - target))) if target.size else 0.0
            records.append(StepFormulaRecord(float(t[i]), "box", res))
    worst = max(records, key=lambda r: r.residual)
    return FormulaReport(records, worst.residual, worst.time)
