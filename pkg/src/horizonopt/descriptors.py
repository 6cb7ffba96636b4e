"""Closed-form space-time fields for problem data.

Fields are separable: amplitude * s(x) * tau(t).  They can be sampled at
mesh nodes and grid times, and their discounted L2 tail over (T, infinity)
has a closed form or is obtained by adaptive quadrature on (T, T_cut),
where T_cut is chosen so the integrand has decayed below 1e-16 relative to
its value at T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spaces import quad_energies


class DivergenceError(ValueError):
    """Discounted tail integral does not converge."""


@dataclass(frozen=True)
class SpaceProfile:
    """Spatial factor: constant, axis-separable gaussian/cosine, or nodal values."""

    kind: str
    value: float = 1.0
    center: tuple = (0.0,)
    width: float = 1.0
    mode: int = 1
    nodal: tuple = ()

    def values(self, mesh) -> np.ndarray:
        x = mesh.coords
        if self.kind == "constant":
            return np.full(mesh.n_nodes, float(self.value))
        if self.kind == "gaussian":
            c = np.broadcast_to(np.asarray(self.center, dtype=float), (mesh.dimension,))
            r2 = np.sum(((x - c) / self.width) ** 2, axis=1)
            return np.exp(-r2)
        if self.kind == "cosine":
            lengths = x.max(axis=0)
            out = np.ones(mesh.n_nodes)
            for d in range(mesh.dimension):
                out = out * np.cos(self.mode * np.pi * x[:, d] / lengths[d])
            return out
        if self.kind == "nodal":
            vals = np.asarray(self.nodal, dtype=float)
            if vals.shape != (mesh.n_nodes,):
                raise ValueError("nodal profile length does not match the mesh")
            return vals
        raise ValueError(f"unknown space profile {self.kind!r}")


@dataclass(frozen=True)
class TimeProfile:
    """tau(t) = exp(-decay*t - gauss_decay*t^2), optionally cut off at support_end."""

    decay: float = 0.0
    gauss_decay: float = 0.0
    support_end: float | None = None

    def values(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        out = np.exp(-self.decay * t - self.gauss_decay * t * t)
        if self.support_end is not None:
            out = np.where(t <= self.support_end + 1e-12, out, 0.0)
        return out

    def squared_tail(self, rate: float, t_start: float) -> float:
        """Integral of e^{-rate*t} * tau(t)^2 over (t_start, infinity)."""
        end = self.support_end
        if end is not None and t_start >= end:
            return 0.0
        mu = rate + 2.0 * self.decay
        if self.gauss_decay > 0:
            def integrand(t):
                return np.exp(-mu * t - 2.0 * self.gauss_decay * t * t)
            t_cut = t_start
            ref = integrand(t_start)
            span = max(1.0, 1.0 / np.sqrt(2.0 * self.gauss_decay))
            while integrand(t_cut) > 1e-16 * max(ref, 1e-300):
                t_cut += span
            if end is not None:
                t_cut = min(t_cut, end)
            val, _ = integrate.quad(integrand, t_start, t_cut, epsabs=1e-15, epsrel=1e-12)
            return float(val)
        if end is not None:
            if abs(mu) < 1e-14:
                return float(end - t_start)
            return float((np.exp(-mu * t_start) - np.exp(-mu * end)) / mu)
        if mu <= 0:
            raise DivergenceError(
                f"time profile does not decay fast enough for rate {rate:g}")
        return float(np.exp(-mu * t_start) / mu)


@dataclass(frozen=True)
class Field:
    """Separable space-time field amplitude * s(x) * tau(t)."""

    space: SpaceProfile
    time: TimeProfile
    amplitude: float = 1.0

    def sample(self, mesh, times) -> np.ndarray:
        s = self.space.values(mesh)
        tau = self.time.values(np.asarray(times, dtype=float))
        return self.amplitude * np.outer(tau, s)

    def tail_l2(self, mesh, mass, rate: float, t_start: float) -> float:
        """Discounted L2 norm over space x (t_start, infinity)."""
        if self.amplitude == 0.0:
            return 0.0
        s = self.space.values(mesh)
        energy = float(quad_energies(s[None, :], mass)[0])
        return abs(self.amplitude) * np.sqrt(max(energy, 0.0) * self.time.squared_tail(rate, t_start))


def zero_field() -> Field:
    return Field(SpaceProfile("constant", value=0.0), TimeProfile(), amplitude=0.0)


def field_from_config(cfg: dict) -> Field:
    """Build a field from a named template description."""
    template = cfg.get("template")
    if template is None:
        raise ValueError("field description requires a 'template' name")
    amp = float(cfg.get("amplitude", 1.0))
    decay = float(cfg.get("rate", 0.0))
    end = cfg.get("support_end")
    end = None if end is None else float(end)
    time = TimeProfile(decay=decay, support_end=end)
    if template == "zero":
        return zero_field()
    if template == "constant":
        space = SpaceProfile("constant", value=float(cfg.get("value", 1.0)))
        return Field(space, time, amplitude=amp)
    if template == "gauss_decay":
        center = cfg.get("center", 0.5)
        if np.isscalar(center):
            center = (float(center),)
        space = SpaceProfile("gaussian", center=tuple(float(c) for c in center),
                             width=float(cfg.get("width", 0.2)))
        return Field(space, time, amplitude=amp)
    if template in ("cosine_decay", "cosine_compact"):
        space = SpaceProfile("cosine", mode=int(cfg.get("mode", 1)))
        return Field(space, time, amplitude=amp)
    if template == "nodal":
        space = SpaceProfile("nodal", nodal=tuple(float(v) for v in cfg["values"]))
        return Field(space, time, amplitude=amp)
    if template == "separable":
        sp = cfg["space"]
        kind = sp["kind"]
        space = SpaceProfile(
            kind,
            value=float(sp.get("value", 1.0)),
            center=tuple(np.atleast_1d(np.asarray(sp.get("center", 0.5), dtype=float))),
            width=float(sp.get("width", 0.2)),
            mode=int(sp.get("mode", 1)),
            nodal=tuple(float(v) for v in sp.get("values", ())),
        )
        tp = cfg.get("time", {})
        time = TimeProfile(decay=float(tp.get("rate", 0.0)),
                           gauss_decay=float(tp.get("gauss_rate", 0.0)),
                           support_end=None if tp.get("support_end") is None
                           else float(tp["support_end"]))
        return Field(space, time, amplitude=amp)
    raise ValueError(f"unknown field template {template!r}")


def tail_norm(spec, which: str, rate: float, t_start: float) -> float:
    """Discounted tail norm of the problem's source or target beyond t_start.

    Requires the field to be stored as a closed-form descriptor; sampled
    arrays carry no information beyond the grid horizon.
    """
    obj = spec.source if which == "source" else spec.target
    if not hasattr(obj, "tail_l2"):
        raise ValueError(f"{which} is not a closed-form descriptor; tail norm unavailable")
    return obj.tail_l2(spec.mesh, spec.operators.mass, rate, t_start)
