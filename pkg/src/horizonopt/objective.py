"""Discrete cost functional, adjoint-based gradient, and second-order forms.

The gradient is returned as the Riesz representative in the
control-discounted inner product, so a projected step with length
1/control_weight reproduces the closed-form projection of the scaled
adjoint.  All quadratures are right-rectangle in time, matching the
implicit-Euler discretization; the adjoint is the exact transpose of the
linearized dynamics, so the gradient and Hessian forms are exact
derivatives of the discrete cost up to Newton tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec
from .solvers import (NewtonConfig, solve_adjoint, solve_forward,
                      solve_linearized)
from .spaces import Trajectory, quad_energies


@dataclass(frozen=True)
class CostBreakdown:
    tracking: float
    control: float

    @property
    def total(self) -> float:
        return self.tracking + self.control

    def to_dict(self):
        return {"tracking": self.tracking, "control": self.control, "total": self.total}


def _masked(values: np.ndarray, mask) -> np.ndarray:
    return values if mask is None else values * mask


def cost_from_state(spec: ProblemSpec, u: Trajectory, state: Trajectory) -> CostBreakdown:
    """Evaluate the discrete cost given an already-computed state."""
    ops = spec.operators
    d = spec.discounts
    t = spec.grid.times[1:]
    dt = spec.grid.step
    resid = _masked(state.values[1:] - spec.target_samples[1:], spec.observation_mask)
    track_e = quad_energies(resid, ops.mass)
    tracking = 0.5 * dt * float(np.sum(np.exp(-d.state_rate * t) * track_e))
    ctrl_e = np.einsum("ij,j,ij->i", u.values[1:], ops.control_weights, u.values[1:])
    control = 0.5 * spec.control_weight * dt * float(
        np.sum(np.exp(-d.control_rate * t) * ctrl_e))
    return CostBreakdown(tracking, control)


def cost(spec: ProblemSpec, u: Trajectory,
         newton: NewtonConfig | None = None) -> CostBreakdown:
    return cost_from_state(spec, u, solve_forward(spec, u, newton))


def riesz_gradient(spec: ProblemSpec, u: Trajectory, adjoint: Trajectory) -> Trajectory:
    """Gradient representative: weight*u + e^{rate t} adjoint on the control nodes.

    The t_0 row carries no quadrature weight and is set to zero.
    """
    ops = spec.operators
    t = spec.grid.times
    vals = spec.control_weight * u.values \
        + np.exp(spec.discounts.control_rate * t)[:, None] * adjoint.values[:, ops.control_index]
    vals[0] = 0.0
    return Trajectory(spec.grid, vals, "control")


def gradient_with_state(spec: ProblemSpec, u: Trajectory,
                        newton: NewtonConfig | None = None):
    """Return (gradient, state, adjoint) for one control."""
    state = solve_forward(spec, u, newton)
    adj = solve_adjoint(spec, state)
    return riesz_gradient(spec, u, adj), state, adj


def gradient(spec: ProblemSpec, u: Trajectory,
             newton: NewtonConfig | None = None) -> Trajectory:
    return gradient_with_state(spec, u, newton)[0]


def first_order_density(spec: ProblemSpec, u: Trajectory, adjoint: Trajectory) -> np.ndarray:
    """Integrand of the variational inequality on the control nodes:
    adjoint + weight * e^{-rate t} * u, per time step."""
    ops = spec.operators
    t = spec.grid.times
    return adjoint.values[:, ops.control_index] \
        + spec.control_weight * np.exp(-spec.discounts.control_rate * t)[:, None] * u.values


def directional_derivative(spec: ProblemSpec, u: Trajectory, adjoint: Trajectory,
                           v: Trajectory) -> float:
    """J'(u) v through the unweighted control pairing."""
    density = first_order_density(spec, u, adjoint)
    w = spec.operators.control_weights
    per_step = np.einsum("ij,j,ij->i", density[1:], w, v.values[1:])
    return float(spec.grid.step * np.sum(per_step))


class SecondOrderModel:
    """Caches the state/adjoint pair at a control and evaluates quadratic forms.

    ``quadratic_form`` implements the exact second derivative of the
    discrete cost; ``lagrangian_form`` adds the multiplier term of the
    norm-ball constraint.
    """

    def __init__(self, spec: ProblemSpec, u: Trajectory,
                 newton: NewtonConfig | None = None,
                 state: Trajectory | None = None,
                 adjoint: Trajectory | None = None):
        self.spec = spec
        self.control = u
        self.state = state if state is not None else solve_forward(spec, u, newton)
        self.adjoint = adjoint if adjoint is not None else solve_adjoint(spec, self.state)

    def response(self, v: Trajectory) -> Trajectory:
        return solve_linearized(self.spec, self.state, v, rhs_on_omega=True)

    def quadratic_form(self, v1: Trajectory, v2: Trajectory,
                       z1: Trajectory | None = None, z2: Trajectory | None = None) -> float:
        spec = self.spec
        ops = spec.operators
        d = spec.discounts
        dt = spec.grid.step
        t = spec.grid.times[1:]
        if z1 is None:
            z1 = self.response(v1)
        if z2 is None:
            z2 = self.response(v2) if v2 is not v1 else z1
        m1 = _masked(z1.values[1:], spec.observation_mask)
        m2 = _masked(z2.values[1:], spec.observation_mask)
        track = np.einsum("ij,ji->i", m1, np.asarray(ops.mass @ m2.T))
        first = dt * float(np.sum(np.exp(-d.state_rate * t) * track))
        curv = self.adjoint.values[1:] * spec.nonlinearity.second_derivative(
            self.state.values[1:]) * z1.values[1:] * z2.values[1:]
        second = -dt * float(np.sum(ops.lumped_mass * curv))
        ctrl = np.einsum("ij,j,ij->i", v1.values[1:], ops.control_weights, v2.values[1:])
        third = spec.control_weight * dt * float(np.sum(np.exp(-d.control_rate * t) * ctrl))
        return first + second + third

    def lagrangian_form(self, v: Trajectory, multiplier: "Multiplier",
                        z: Trajectory | None = None) -> float:
        spec = self.spec
        if spec.admissible.kind != "ball":
            raise ValueError("the multiplier-augmented form is defined for ball constraints")
        base = self.quadratic_form(v, v, z1=z, z2=z)
        w = spec.operators.control_weights
        e = np.einsum("ij,j,ij->i", v.values[1:], w, v.values[1:])
        extra = spec.grid.step * float(np.sum(multiplier.values[1:] * e)) / spec.admissible.radius
        return base + extra


def hessian_vec(spec: ProblemSpec, u: Trajectory, v1: Trajectory, v2: Trajectory,
                newton: NewtonConfig | None = None) -> float:
    """Second derivative of the discrete cost applied to a pair of directions."""
    return SecondOrderModel(spec, u, newton).quadratic_form(v1, v2)


# ---------------------------------------------------------------------------
# norm-ball multiplier and critical directions

INACTIVE, ACTIVE_DEGENERATE, ACTIVE_STRICT = 0, 1, 2


@dataclass
class Multiplier:
    """Per-time-step multiplier of the norm-ball constraint with activity codes.

    Codes: 0 inactive, 1 active with vanishing multiplier, 2 active with a
    positive multiplier.  The multiplier can only be positive where the
    control-norm constraint is active (within tolerance).
    """

    values: np.ndarray
    activity: np.ndarray
    active_tol: float
    strict_tol: float

    def active_steps(self) -> np.ndarray:
        return np.flatnonzero(self.activity > 0)

    def strict_steps(self) -> np.ndarray:
        return np.flatnonzero(self.activity == ACTIVE_STRICT)

    def to_dict(self):
        return {"values": self.values.tolist(), "activity": self.activity.tolist(),
                "active_tol": self.active_tol, "strict_tol": self.strict_tol}


def multiplier_and_cone(spec: ProblemSpec, u: Trajectory, adjoint: Trajectory,
                        active_tol: float | None = None,
                        strict_tol: float | None = None) -> Multiplier:
    """Multiplier value and active-set classification (ball constraint only).

    The multiplier at a step is the control-space norm of the first-order
    density; activity is classified against the ball radius with a relative
    tolerance.
    """
    adm = spec.admissible
    if adm.kind != "ball":
        raise ValueError("multiplier is defined for ball-constrained problems")
    if active_tol is None:
        active_tol = 1e-8 * adm.radius
    if strict_tol is None:
        strict_tol = 1e-8 * spec.control_weight * adm.radius
    w = spec.operators.control_weights
    density = first_order_density(spec, u, adjoint)
    mu = np.sqrt(np.einsum("ij,j,ij->i", density, w, density))
    unorm = np.sqrt(np.einsum("ij,j,ij->i", u.values, w, u.values))
    active = np.abs(unorm - adm.radius) <= active_tol
    mu = np.where(active, mu, 0.0)
    activity = np.zeros(u.values.shape[0], dtype=int)
    activity[active] = ACTIVE_DEGENERATE
    activity[active & (mu > strict_tol)] = ACTIVE_STRICT
    return Multiplier(mu, activity, active_tol, strict_tol)


def lagrangian_hessian_vec(spec: ProblemSpec, u: Trajectory, multiplier: Multiplier,
                           v: Trajectory, newton: NewtonConfig | None = None) -> float:
    """Quadratic form of the constraint-augmented cost at (u, multiplier)."""
    return SecondOrderModel(spec, u, newton).lagrangian_form(v, multiplier)


def sample_critical_directions(spec: ProblemSpec, u: Trajectory, adjoint: Trajectory,
                               multiplier: Multiplier | None = None, count: int = 10,
                               seed: int = 0, density_tol: float = 1e-7):
    """Seeded random directions satisfying the active-set compatibility conditions.

    Ball case: directions are orthogonalized (in the control inner product)
    against the control at strictly active steps, and their radial component
    is removed where it points outward at degenerate active steps.  Box
    case: directions vanish on strictly active nodes (nonzero first-order
    density) and are sign-clipped on active bounds.  Every returned
    direction is re-verified against the defining conditions; an empty list
    means only the zero direction is compatible.
    """
    rng = np.random.default_rng(seed)
    ops = spec.operators
    w = ops.control_weights
    n = spec.grid.n_steps
    adm = spec.admissible
    out = []
    if adm.kind == "ball":
        if multiplier is None:
            multiplier = multiplier_and_cone(spec, u, adjoint)
        for _ in range(count):
            v = rng.standard_normal((n + 1, spec.control_count))
            v[0] = 0.0
            for i in range(1, n + 1):
                code = multiplier.activity[i]
                if code == INACTIVE:
                    continue
                uu = float(np.dot(u.values[i] * w, u.values[i]))
                if uu <= 1e-300:
                    continue
                uv = float(np.dot(u.values[i] * w, v[i]))
                if code == ACTIVE_STRICT or uv > 0.0:
                    v[i] -= (uv / uu) * u.values[i]
            traj = Trajectory(spec.grid, v, "control")
            if _verify_ball_direction(u, traj, multiplier, w):
                out.append(traj)
    else:
        # at a stationary control the vanishing-derivative condition is the
        # nodal statement density * v = 0, so directions vanish wherever the
        # density is away from zero and are sign-clipped on the active bounds
        density = first_order_density(spec, u, adjoint)
        tol = 1e-8 * (adm.upper - adm.lower)
        at_lower = u.values <= adm.lower + tol
        at_upper = u.values >= adm.upper - tol
        nonzero_density = np.abs(density) > density_tol
        for _ in range(count):
            v = rng.standard_normal((n + 1, spec.control_count))
            v[0] = 0.0
            v = np.where(at_lower, np.abs(v), v)
            v = np.where(at_upper, -np.abs(v), v)
            v[nonzero_density] = 0.0
            if not np.any(v):
                continue
            ok = (np.all(v[at_lower] >= 0) and np.all(v[at_upper] <= 0)
                  and np.all(v[nonzero_density] == 0.0))
            if ok:
                out.append(Trajectory(spec.grid, v, "control"))
    return out


def _verify_ball_direction(u, v, multiplier, w) -> bool:
    vals = v.values
    if not np.any(vals):
        return False
    for i in multiplier.active_steps():
        uv = float(np.dot(u.values[i] * w, vals[i]))
        scale = np.sqrt(float(np.dot(u.values[i] * w, u.values[i]))
                        * float(np.dot(vals[i] * w, vals[i]))) + 1e-300
        if multiplier.activity[i] == ACTIVE_STRICT:
            if abs(uv) > 1e-12 * scale:
                return False
        elif uv > 1e-12 * scale:
            return False
    return True
