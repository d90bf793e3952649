"""Conformal exponents, cocycle checks, and discriminant scans.

The exponent of a contactomorphism psi is the function g with
psi^* lambda = e^g lambda.  Two routes are implemented:

* ``conformal_exponent``        -- integrates the running payoff -R_lambda[H]
  along the Hamiltonian trajectory (payoff-integral route);
* ``conformal_exponent_direct`` -- measures the pullback ratio of lambda
  through a finite-difference differential of an arbitrary point map.

Point maps in this module act on coordinate rows, ``(N, a) -> (N, a)``; see
``flows.flow_map_batch`` and ``flows.point_map_batch``.

The discriminant scan samples g on a grid, locates zero crossings by
bisection along grid edges, and classifies each zero against the critical
set of g and the fixed set of the time-one map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotAContactomorphismError, NotCoorientationPreservingError
from .contact import hamiltonian_with_payoff_batch
from .flows import (
    FIXED_POINT_TOL,
    FieldTag,
    IntegratorConfig,
    integrate_flow,
    integrate_flow_batch,
    linearized_transport,
)
from .geometry import Point, tangent_frame_batch

TOL_ZERO = 1e-8        # bisection gate on |g|
TOL_REG = 1e-4         # ||dg|| above this counts as a regular direction
PULLBACK_GATE = 1e-5   # consistency residual gate for the direct method


@dataclass(frozen=True)
class ExponentRecord:
    x: Point
    T: float
    g: float
    method: str                       # "integral" | "pullback"
    trajectory: object = None


@dataclass(frozen=True)
class DiscriminantSample:
    x: np.ndarray
    g: float
    dg: np.ndarray
    fixed: bool
    regular: bool
    critical: bool
    nondegenerate_fixed: bool


# ---------------------------------------------------------------------------
# exponent computation
# ---------------------------------------------------------------------------

def conformal_exponent(spec, H, x, T=1.0, cfg=IntegratorConfig(), keep_trajectory=False):
    """g of the time-T Hamiltonian map at x via the payoff integral.

    Accumulates the running payoff -R_lambda[H] along the trajectory of X_H
    inside the same RK4 stages as the flow.
    """
    nsteps = max(1, int(round(abs(T) / cfg.step)))
    traj = None
    if keep_trajectory:
        traj = integrate_flow(spec, FieldTag("hamiltonian", H), x, T, cfg)
    _, g = conformal_exponent_batch(spec, H, x.coords[None, :], T, nsteps)
    return ExponentRecord(x=x, T=T, g=float(g[0]), method="integral", trajectory=traj)


def conformal_exponent_batch(spec, H, C0, T=1.0, nsteps=100):
    """Payoff-integral exponents for a batch of coordinate rows.

    The flow field X_H and the integrand -R[H] come out of one shared solve
    per RK4 stage.  Returns (flow endpoints, exponents).
    """
    fused = lambda C: hamiltonian_with_payoff_batch(spec, H, C)
    return integrate_flow_batch(spec, FieldTag("hamiltonian", H), C0, T, nsteps,
                                rhs_payoff=fused)


def pullback_oneform(spec, psi, x, fd_step=1e-4):
    """(psi^* lambda)_x on the tangent frame at x.

    The differential of psi comes from fourth-order central differences on
    displaced points, all pushed through ``psi`` in one batch; differences
    on the torus use the minimal image.
    """
    model = spec.manifold
    xc = np.asarray(x.coords, dtype=float)
    E = tangent_frame_batch(model, xc[None, :])[0]
    d = model.dim
    offsets = (2 * fd_step, fd_step, -fd_step, -2 * fd_step)
    stencil = [xc]
    for j in range(d):
        for off in offsets:
            stencil.append(model.project(xc + off * E[:, j]))
    images = psi(np.stack(stencil))
    psix = images[0]
    images = images[1:].reshape(d, 4, -1)
    if model.kind == "torus":
        per = np.asarray(model.periods)
        ref = images[:, 1:2, :]
        images = ref + np.mod(images - ref + per / 2, per) - per / 2
    dpsi = (-images[:, 0] + 8 * images[:, 1] - 8 * images[:, 2] + images[:, 3]) / (12 * fd_step)
    lam_f, _, _ = spec.form_frame_batch(psix[None, :])
    Epsi = tangent_frame_batch(model, psix[None, :])[0]
    # lambda_{psi x}(dpsi E_j), each image vector read in the frame at psi(x)
    return dpsi @ Epsi @ lam_f[0], psix


def conformal_exponent_direct(spec, psi, x, fd_step=1e-4, gate=PULLBACK_GATE):
    """g(x) from the pullback ratio (psi^* lambda)_x = e^g lambda_x.

    The ratio is read off on the frame direction where |lambda_x| is largest;
    the residual of the remaining components against e^g lambda_x is gated.
    Returns (g, residual).
    """
    pb, _ = pullback_oneform(spec, psi, x, fd_step)
    lam_f, _, _ = spec.form_frame_batch(x.coords[None, :])
    lam_f = lam_f[0]
    j = int(np.argmax(np.abs(lam_f)))
    ratio = pb[j] / lam_f[j]
    if ratio <= 0:
        raise NotCoorientationPreservingError(
            f"pullback ratio {ratio:.3e} is not positive at the sampled point")
    g = float(np.log(ratio))
    residual = float(np.max(np.abs(pb - np.exp(g) * lam_f)) / max(1.0, np.linalg.norm(lam_f)))
    if residual > gate:
        raise NotAContactomorphismError(
            f"pullback is not proportional to lambda (residual {residual:.3e})",
            residual=residual)
    return g, residual


def compose_maps(phi, psi):
    """Composition phi o psi of coordinate-rows maps."""
    return lambda C: phi(psi(C))


def cocycle_residual(spec, phi, psi, points, fd_step=1e-4):
    """max over points of |g_{phi o psi}(x) - g_phi(psi x) - g_psi(x)|."""
    model = spec.manifold
    worst = 0.0
    for x in points:
        g_comp, _ = conformal_exponent_direct(spec, compose_maps(phi, psi), x, fd_step)
        g_psi, _ = conformal_exponent_direct(spec, psi, x, fd_step)
        psix = Point(model, model.project(psi(x.coords[None, :])[0]))
        g_phi, _ = conformal_exponent_direct(spec, phi, psix, fd_step)
        worst = max(worst, abs(g_comp - g_phi - g_psi))
    return worst


# ---------------------------------------------------------------------------
# discriminant scan
# ---------------------------------------------------------------------------

def _grid_coords(model, per_axis):
    if model.kind == "torus":
        axes = [np.arange(per_axis) * (p / per_axis) for p in model.periods]
    elif model.kind == "darboux":
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in model.bounds]
    else:
        raise NotImplementedError("grids are defined for torus and darboux models")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), [len(a) for a in axes]


def _grid_edges(shape, wrap):
    """Index pairs of nearest neighbours along each axis of a flat grid."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []
    for ax in range(len(shape)):
        rolled = np.roll(idx, -1, axis=ax)
        take = idx if wrap else np.take(idx, range(shape[ax] - 1), axis=ax)
        other = rolled if wrap else np.take(rolled, range(shape[ax] - 1), axis=ax)
        pairs.append(np.stack([take.ravel(), other.ravel()], axis=1))
    return np.concatenate(pairs, axis=0)


def _chunked(fn, C, threads):
    """Apply a batch function over row chunks on a thread pool, order kept."""
    C = np.atleast_2d(C)
    if threads <= 1 or len(C) < 2 * threads:
        return fn(C)
    from concurrent.futures import ThreadPoolExecutor
    chunks = np.array_split(C, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(fn, chunks)))


def discriminant_scan(spec, H, per_axis=8, T=1.0, nsteps=100,
                      tol_zero=TOL_ZERO, tol_reg=TOL_REG,
                      fixed_tol=FIXED_POINT_TOL, cfg=IntegratorConfig(),
                      classify_limit=64, threads=1):
    """Sample g on a grid, bisect zero crossings, classify the zeros.

    Returns ``(samples, crossings)``: one DiscriminantSample per grid point
    (dg left unset there) and located zero crossings carrying the full
    regular / critical / fixed classification.  An empty crossing list is a
    valid outcome.
    """
    model = spec.manifold
    coords, shape = _grid_coords(model, per_axis)
    g_one = lambda C: conformal_exponent_batch(spec, H, C, T=T, nsteps=nsteps)[1]
    g_of = lambda C: _chunked(g_one, C, threads)
    ends, gvals = conformal_exponent_batch(spec, H, coords, T=T, nsteps=nsteps)
    fixed_d = model.distance(ends, coords)

    samples = [
        DiscriminantSample(
            x=xc, g=float(gx), dg=np.full(model.dim, np.nan),
            fixed=bool(fd < fixed_tol), regular=False, critical=False,
            nondegenerate_fixed=False)
        for xc, gx, fd in zip(coords, gvals, fixed_d)
    ]

    edges = _grid_edges(shape, wrap=(model.kind == "torus"))
    signs = np.sign(gvals)
    pairs = edges[signs[edges[:, 0]] * signs[edges[:, 1]] < 0][:classify_limit]
    if not len(pairs):
        return samples, []

    # bisection along all crossing edges at once
    XA = coords[pairs[:, 0]].copy()
    XB = coords[pairs[:, 1]].copy()
    if model.kind == "torus":
        per = np.asarray(model.periods)
        XB = XA + np.mod(XB - XA + per / 2, per) - per / 2
    GA = gvals[pairs[:, 0]].copy()
    XM = 0.5 * (XA + XB)
    GM = g_of(model.project(XM))
    for _ in range(60):
        done = np.abs(GM) < tol_zero
        if done.all():
            break
        same = (np.sign(GM) == np.sign(GA)) & ~done
        other = ~same & ~done
        XA[same] = XM[same]
        GA[same] = GM[same]
        XB[other] = XM[other]
        XM = np.where(done[:, None], XM, 0.5 * (XA + XB))
        GM = np.where(done, GM, g_of(model.project(XM)))
    zeros = model.project(XM)
    gz = g_of(zeros)

    # classification, stencils batched across all zeros
    d = model.dim
    stencil = []
    for xc in zeros:
        E = tangent_frame_batch(model, xc[None, :])[0]
        for j in range(d):
            for off in (2e-3, 1e-3, -1e-3, -2e-3):
                stencil.append(model.project(xc + off * E[:, j]))
    vals = g_of(np.stack(stencil)).reshape(len(zeros), d, 4)
    DG = (-vals[..., 0] + 8 * vals[..., 1] - 8 * vals[..., 2] + vals[..., 3]) / (12 * 1e-3)
    ends, _ = integrate_flow_batch(spec, FieldTag("hamiltonian", H), zeros, T, nsteps)
    fixed_all = model.distance(ends, zeros) < fixed_tol

    crossings = []
    for i, xc in enumerate(zeros):
        fixed = bool(fixed_all[i])
        nondeg = False
        if fixed:
            Phi = linearized_transport(spec, FieldTag("hamiltonian", H),
                                       Point(model, xc), T, cfg)
            smin = np.linalg.svd(Phi - np.eye(d), compute_uv=False)[-1]
            nondeg = bool(smin > 1e-6)
        critical = bool(np.linalg.norm(DG[i]) <= tol_reg)
        regular = bool(abs(gz[i]) < tol_zero and not critical and not fixed)
        crossings.append(DiscriminantSample(
            x=xc, g=float(gz[i]), dg=DG[i], fixed=fixed, regular=regular,
            critical=critical, nondegenerate_fixed=nondeg))
    return samples, crossings
