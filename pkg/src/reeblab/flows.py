"""Reeb and Hamiltonian flows: RK4 integration, time-one maps, transport.

The integrator is fixed-step classical RK4 with a manifold projection after
every accepted step (torus wrap, sphere renormalization); stage values use
the smooth off-manifold extension of the fields.  A step-doubling error
estimate controls step halving; DarbouxBox trajectories stop with a
``boundary_exit`` status when they leave the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ReebLabError
from .contact import hamiltonian_field_batch, reeb_field_batch
from .geometry import Point, tangent_frame_batch

FIXED_POINT_TOL = 1e-6


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4"
    step: float = 1e-3
    tolerance: float = 1e-10     # step-doubling error gate per step
    max_steps: int = 2_000_000

    def __post_init__(self):
        if self.step <= 0 or self.tolerance <= 0:
            raise ConfigError("integrator step and tolerance must be positive")
        if self.scheme != "rk4":
            raise ConfigError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class FieldTag:
    """Which flow generates a trajectory: Reeb, or Hamiltonian with H."""

    kind: str            # "reeb" | "hamiltonian"
    H: object = None     # ScalarField for the Hamiltonian case

    def __post_init__(self):
        if self.kind not in ("reeb", "hamiltonian"):
            raise ConfigError(f"unknown field {self.kind!r}")
        if self.kind == "hamiltonian" and self.H is None:
            raise ConfigError("hamiltonian field needs H")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray           # (len(times), ambient_dim)
    tag: FieldTag
    status: str = "ok"           # "ok" | "boundary_exit"
    transports: np.ndarray = None  # optional (len(times), dim, dim)

    @property
    def end(self):
        return self.points[-1]


def _rhs(spec, tag):
    if tag.kind == "reeb":
        return lambda C: reeb_field_batch(spec, C)
    return lambda C: hamiltonian_field_batch(spec, tag.H, C)


def _rk4_increment(f, C, h):
    """Classical RK4 increment; stages evaluate the smooth field extension."""
    k1 = f(C)
    k2 = f(C + 0.5 * h * k1)
    k3 = f(C + 0.5 * h * k2)
    k4 = f(C + h * k3)
    return (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(spec, tag, x0, T, cfg=IntegratorConfig()):
    """Integrate the flow of ``tag`` from ``x0`` over time ``T``.

    The step-doubling estimate |one step - two half steps| must stay below
    ``cfg.tolerance`` or the step is halved (at most 20 times).  Darboux
    trajectories that leave the box return early with partial data.
    """
    model = spec.manifold
    f = _rhs(spec, tag)
    project = model.project
    h = cfg.step if T >= 0 else -cfg.step
    t, C = 0.0, np.asarray(x0.coords, dtype=float)[None, :]
    ts, pts = [0.0], [C[0].copy()]
    steps = 0
    while abs(T - t) > 1e-15 and abs(t) < abs(T):
        h_try = np.sign(h) * min(abs(h), abs(T - t))
        for _ in range(20):
            full = project(C + _rk4_increment(f, C, h_try))
            mid = project(C + _rk4_increment(f, C, h_try / 2))
            half = project(mid + _rk4_increment(f, mid, h_try / 2))
            err = float(model.distance(full[0], half[0]))
            if err <= cfg.tolerance:
                break
            h_try /= 2
        else:
            raise ReebLabError("step halving failed to reach the error tolerance")
        C = half
        t += h_try
        steps += 1
        ts.append(t)
        pts.append(C[0].copy())
        if steps > cfg.max_steps:
            raise ReebLabError(f"exceeded max_steps = {cfg.max_steps}")
        if model.kind == "darboux" and not model.contains(C[0]):
            return Trajectory(np.array(ts), np.array(pts), tag, status="boundary_exit")
    return Trajectory(np.array(ts), np.array(pts), tag, status="ok")


def flow_map(spec, tag, T, cfg=IntegratorConfig()):
    """The time-T flow as a point map ``Point -> Point``."""
    def psi(x):
        traj = integrate_flow(spec, tag, x, T, cfg)
        if traj.status != "ok":
            raise ReebLabError("flow left the Darboux box")
        return Point(spec.manifold, traj.end)
    return psi


def time_one_map(spec, H, x, cfg=IntegratorConfig()):
    """Endpoint of the contact Hamiltonian flow of H at T = 1."""
    traj = integrate_flow(spec, FieldTag("hamiltonian", H), x, 1.0, cfg)
    if traj.status != "ok":
        raise ReebLabError("flow left the Darboux box before T = 1")
    return Point(spec.manifold, traj.end)


def flow_map_batch(spec, tag, T, nsteps=200):
    """The time-T flow as a map on coordinate rows (N, a) -> (N, a).

    Fixed-step RK4 without per-step error control; meant for stencil and
    quadrature workloads where many nearby points flow together.
    """
    def psi(C):
        out, _ = integrate_flow_batch(spec, tag, C, T, nsteps)
        return out
    return psi


def point_map_batch(fn, model):
    """Adapt a Point -> Point function to the coordinate-rows convention."""
    def psi(C):
        return np.stack([fn(Point(model, model.project(c))).coords for c in np.atleast_2d(C)])
    return psi


def memoize_map(psi):
    """Cache a coordinate-rows map on its input bytes.

    Useful when a frozen map is re-evaluated on identical stencils, e.g.
    while the contact form varies around it.
    """
    cache = {}
    def wrapped(C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        key = C.tobytes()
        if key not in cache:
            cache[key] = psi(C)
        return cache[key]
    return wrapped


# ---------------------------------------------------------------------------
# batched propagation (internal plumbing for quadrature-scale workloads)
# ---------------------------------------------------------------------------

def integrate_flow_batch(spec, tag, C0, T, nsteps, payoff=None, rhs_payoff=None):
    """Fixed-step RK4 on a batch of initial coordinates.

    When ``payoff`` (a function of coordinate rows) or ``rhs_payoff`` (a
    fused evaluator ``C -> (field, payoff)``) is given, the running integral
    of the payoff accumulates inside the same RK4 stages (fourth-order
    quadrature coupled to the flow).  Returns (endpoints, integrals or None).
    """
    model = spec.manifold
    if rhs_payoff is None:
        field = _rhs(spec, tag)
        if payoff is None:
            fp = lambda C: (field(C), None)
            track = False
        else:
            fp = lambda C: (field(C), payoff(C))
            track = True
    else:
        fp = rhs_payoff
        track = True
    C = model.project(np.atleast_2d(np.asarray(C0, dtype=float)).copy())
    g = np.zeros(C.shape[0]) if track else None
    h = T / nsteps
    for _ in range(nsteps):
        k1, p1 = fp(C)
        C2 = C + 0.5 * h * k1
        k2, p2 = fp(C2)
        C3 = C + 0.5 * h * k2
        k3, p3 = fp(C3)
        C4 = C + h * k3
        k4, p4 = fp(C4)
        if track:
            g += (h / 6.0) * (p1 + 2 * p2 + 2 * p3 + p4)
        C = model.project(C + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    return C, g


# ---------------------------------------------------------------------------
# linearized transport
# ---------------------------------------------------------------------------

def _field_jacobian(spec, tag, C, fd_step=1e-5):
    """Ambient Jacobian of the generating field by central differences."""
    f = _rhs(spec, tag)
    a = C.shape[1]
    J = np.empty((C.shape[0], a, a))
    for j in range(a):
        e = np.zeros(a)
        e[j] = fd_step
        J[:, :, j] = (f(C + e) - f(C - e)) / (2 * fd_step)
    return J


def linearized_transport(spec, tag, x0, T, cfg=IntegratorConfig(), fd_step=1e-5):
    """Transport matrix of the linearized flow, frame at x0 -> frame at the endpoint.

    Integrates eta' = DV(gamma) eta alongside the trajectory with the same
    RK4 stepping; DV is a central finite difference of the field.
    """
    model = spec.manifold
    f = _rhs(spec, tag)
    a = model.ambient_dim
    C = np.asarray(x0.coords, dtype=float)[None, :]
    Phi = np.eye(a)
    nsteps = max(1, int(round(abs(T) / cfg.step)))
    h = T / nsteps
    for _ in range(nsteps):
        k1 = f(C)
        C2 = C + 0.5 * h * k1
        k2 = f(C2)
        C3 = C + 0.5 * h * k2
        k3 = f(C3)
        C4 = C + h * k3
        k4 = f(C4)
        J1 = _field_jacobian(spec, tag, C, fd_step)[0]
        J2 = _field_jacobian(spec, tag, C2, fd_step)[0]
        J3 = _field_jacobian(spec, tag, C3, fd_step)[0]
        J4 = _field_jacobian(spec, tag, C4, fd_step)[0]
        m1 = J1 @ Phi
        m2 = J2 @ (Phi + 0.5 * h * m1)
        m3 = J3 @ (Phi + 0.5 * h * m2)
        m4 = J4 @ (Phi + h * m3)
        Phi = Phi + (h / 6.0) * (m1 + 2 * m2 + 2 * m3 + m4)
        C = model.project(C + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    E0 = tangent_frame_batch(model, x0.coords[None, :])[0]
    E1 = tangent_frame_batch(model, C)[0]
    return E1.T @ Phi @ E0


def fixed_point_distance(model, psi_x, x):
    """Model-metric distance used by the fixed-point test psi(x) = x."""
    a = psi_x.coords if isinstance(psi_x, Point) else psi_x
    b = x.coords if isinstance(x, Point) else x
    return model.distance(a, b)
