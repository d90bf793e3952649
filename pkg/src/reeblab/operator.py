"""Liouville quadrature, integral identities, operator assembly, solver.

The contact Liouville density relative to the frame volume is read off a
bordered antisymmetric matrix: with lambda_f and M_f the frame values of
lambda and d-lambda,

    Q = [[M_f, lambda_f], [-lambda_f^T, 0]],
    |lambda ^ (d lambda)^n (frame)| = n! * sqrt(det Q).

Sphere sampling is Monte Carlo symmetrized over a finite subgroup of the
circle action generated by the round Reeb field: each seed point carries its
orbit under rotations by 2 pi k / K.  Every orbit point is still marginally
round-uniform (the rotations preserve the round measure), so estimates stay
unbiased, while the discrete pairing becomes exactly invariant for
band-limited integrands; that keeps the assembled operator's skewness at
rounding level in the degree-preserving cases.  Standard errors are computed
over orbit blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import BasisRankError, ConfigError, DegenerateFormError
from .contact import reeb_field_batch
from .conformal import conformal_exponent_batch
from .geometry import sample_coords

GRAM_TRUNCATION = 1e-10
KERNEL_REL_TOL = 1e-6
GAP_WARN_RATIO = 10.0


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureScheme:
    spec: object
    points: np.ndarray            # (N, ambient_dim)
    weights: np.ndarray           # (N,), positive
    base_volume: float            # coordinate / round volume represented
    method: str                   # "monte_carlo" | "analytic"
    mass: float = 0.0             # total weight
    mass_se: float = 0.0          # standard error of the mass (MC only)
    block: int = 1                # orbit block size for error estimates

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise DegenerateFormError("quadrature weights must be positive")
        object.__setattr__(self, "mass", float(self.weights.sum()))
        if self.method == "monte_carlo":
            object.__setattr__(self, "mass_se", self._se(np.ones(len(self.weights))))

    def _se(self, values):
        """Standard error of sum(w * values) over orbit blocks."""
        contrib = self.weights * np.asarray(values, dtype=float)
        if self.block > 1:
            contrib = contrib.reshape(self.block, -1).sum(axis=0)
        n = len(contrib)
        if n < 2:
            return 0.0
        return float(np.std(contrib, ddof=1) * np.sqrt(n))

    def integrate(self, f):
        """Integral of f d mu_lambda with its standard error.

        ``f`` is a callable on coordinate rows or an array of values at the
        scheme's points.  Returns (value, standard error); the error is zero
        for analytic (grid) schemes.
        """
        vals = f(self.points) if callable(f) else np.asarray(f, dtype=float)
        total = float(np.sum(self.weights * vals))
        se = self._se(vals) if self.method == "monte_carlo" else 0.0
        return total, se


def integrate(scheme, f):
    """Module-level alias for ``scheme.integrate``."""
    return scheme.integrate(f)


def liouville_density(spec, C):
    """|lambda ^ (d lambda)^n| relative to the frame volume, pointwise."""
    lam_f, M_f, _ = spec.form_frame_batch(C)
    d = lam_f.shape[1]
    Q = np.zeros((lam_f.shape[0], d + 1, d + 1))
    Q[:, :d, :d] = M_f
    Q[:, :d, d] = lam_f
    Q[:, d, :d] = -lam_f
    det = np.linalg.det(Q)
    if np.any(det < -1e-12):
        raise DegenerateFormError("bordered determinant went negative")
    dens = math.factorial(spec.manifold.n) * np.sqrt(np.maximum(det, 0.0))
    if np.any(dens <= 1e-12):
        raise DegenerateFormError("Liouville density vanished at a sample point",
                                  diagnostic=float(dens.min()))
    return dens


def _hopf_orbit(C, k, K):
    """Rotate sphere points by angle 2 pi k / K in every complex plane."""
    t = 2 * np.pi * k / K
    c, s = np.cos(t), np.sin(t)
    out = np.empty_like(C)
    out[:, 0::2] = c * C[:, 0::2] - s * C[:, 1::2]
    out[:, 1::2] = s * C[:, 0::2] + c * C[:, 1::2]
    return out


def base_volume(model):
    """Coordinate volume (box, torus) or round volume (sphere)."""
    if model.kind == "torus":
        return float(np.prod(model.periods))
    if model.kind == "darboux":
        return float(np.prod([hi - lo for lo, hi in model.bounds]))
    m = model.ambient_dim            # surface area of S^{m-1}
    return float(2 * np.pi ** (m / 2) / math.gamma(m / 2))


def liouville_quadrature(spec, N, seed, method="monte_carlo", orbit=8):
    """Weighted samples of the contact Liouville measure mu_lambda.

    ``monte_carlo`` draws N seeded points (sphere points carry their
    ``orbit``-fold circle-action orbit); ``analytic`` builds the exact
    product trapezoid grid (torus only) with about N nodes.
    """
    model = spec.manifold
    if N < 1:
        raise ConfigError("quadrature needs at least one point")
    if method == "analytic":
        if model.kind != "torus":
            raise ConfigError("the analytic grid scheme is defined on the torus")
        per_axis = max(4, int(round(N ** (1.0 / model.dim))))
        axes = [np.arange(per_axis) * (p / per_axis) for p in model.periods]
        mesh = np.meshgrid(*axes, indexing="ij")
        P = np.stack([m.ravel() for m in mesh], axis=1)
        cell = np.prod([p / per_axis for p in model.periods])
        w = liouville_density(spec, P) * cell
        return QuadratureScheme(spec, P, w, base_volume(model), "analytic")
    rng = np.random.default_rng(seed)
    if model.kind == "sphere":
        base = max(1, N // orbit)
        seeds = sample_coords(model, base, rng)
        P = np.concatenate([_hopf_orbit(seeds, k, orbit) for k in range(orbit)])
        block = orbit
    else:
        P = sample_coords(model, N, rng)
        block = 1
    w = liouville_density(spec, P) * (base_volume(model) / len(P))
    return QuadratureScheme(spec, P, w, base_volume(model), "monte_carlo", block=block)


# ---------------------------------------------------------------------------
# integral identities
# ---------------------------------------------------------------------------

def integral_identity_residual(spec, kind, args, scheme, nsteps=100):
    """Residual of one of the three compact-model integral identities.

    ``kind``: ``compatibility`` (args: f) checks int R[f] d mu = 0;
    ``skew`` (args: (H, l)) checks int R[H] l + H R[l] d mu = 0;
    ``volume`` (args: H) checks int e^{(n+1) g} d mu = vol(lambda) for the
    time-one map of H.  Returns (residual, sigma).
    """
    P = scheme.points
    R = reeb_field_batch(spec, P)
    if kind == "compatibility":
        f = args
        vals = np.einsum("ni,ni->n", f.gradient(P), R)
        return scheme.integrate(vals)
    if kind == "skew":
        H, ell = args
        vals = (np.einsum("ni,ni->n", H.gradient(P), R) * ell(P)
                + H(P) * np.einsum("ni,ni->n", ell.gradient(P), R))
        return scheme.integrate(vals)
    if kind == "volume":
        H = args
        _, g = conformal_exponent_batch(spec, H, P, T=1.0, nsteps=nsteps)
        vals = np.exp((spec.manifold.n + 1) * g) - 1.0
        return scheme.integrate(vals)     # subtracting the mass pointwise
    raise ConfigError(f"unknown identity kind {kind!r}")


# ---------------------------------------------------------------------------
# function bases
# ---------------------------------------------------------------------------

class SphereMonomialBasis:
    """Ambient monomials of total degree <= d restricted to the sphere."""

    def __init__(self, model, degree):
        if model.kind != "sphere":
            raise ConfigError("monomial basis lives on the sphere model")
        self.model = model
        self.degree = int(degree)
        a = model.ambient_dim
        exps = []
        def rec(prefix, remaining, budget):
            if remaining == 0:
                exps.append(tuple(prefix))
                return
            for e in range(budget + 1):
                rec(prefix + [e], remaining - 1, budget - e)
        rec([], a, self.degree)
        self.exponents = sorted(exps)

    def __len__(self):
        return len(self.exponents)

    @property
    def expected_rank(self):
        """Independent functions on the sphere: relations come from |x|^2 = 1."""
        a = self.model.ambient_dim
        if self.degree < 2:
            return len(self)
        lower = SphereMonomialBasis(self.model, self.degree - 2)
        return len(self) - len(lower)

    def evaluate(self, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        cols = [np.prod(C ** np.asarray(e), axis=1) for e in self.exponents]
        return np.stack(cols, axis=1)

    def reeb_derivative_values(self, C, R):
        """Exact R[b] per element given the Reeb components at C."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        out = np.zeros((C.shape[0], len(self)))
        for col, e in enumerate(self.exponents):
            for i, ei in enumerate(e):
                if ei == 0:
                    continue
                shifted = list(e)
                shifted[i] -= 1
                out[:, col] += ei * np.prod(C ** np.asarray(shifted), axis=1) * R[:, i]
        return out


class TorusModeBasis:
    """Real trigonometric tensor modes with |k|_inf <= K on the torus."""

    def __init__(self, model, K):
        if model.kind != "torus":
            raise ConfigError("mode basis lives on the torus model")
        self.model = model
        self.K = int(K)
        d = model.dim
        half = []
        for idx in np.ndindex(*(2 * self.K + 1,) * d):
            k = tuple(i - self.K for i in idx)
            if k == (0,) * d:
                continue
            first = next(v for v in k if v != 0)
            if first > 0:
                half.append(k)
        self.wavevectors = np.array(sorted(half), dtype=float)
        self.freq = self.wavevectors * (2 * np.pi / np.asarray(model.periods))

    def __len__(self):
        return 1 + 2 * len(self.wavevectors)

    @property
    def expected_rank(self):
        return len(self)

    def _phases(self, C):
        return np.atleast_2d(np.asarray(C, dtype=float)) @ self.freq.T

    def evaluate(self, C):
        ph = self._phases(C)
        one = np.ones((ph.shape[0], 1))
        return np.concatenate([one, np.cos(ph), np.sin(ph)], axis=1)

    def reeb_derivative_values(self, C, R):
        ph = self._phases(C)
        kR = np.atleast_2d(np.asarray(R, dtype=float)) @ self.freq.T
        zero = np.zeros((ph.shape[0], 1))
        return np.concatenate([zero, -kR * np.sin(ph), kR * np.cos(ph)], axis=1)


def make_basis(spec, degree=None, K=None):
    """The default basis family for the spec's model."""
    if spec.manifold.kind == "sphere":
        return SphereMonomialBasis(spec.manifold, 2 if degree is None else degree)
    if spec.manifold.kind == "torus":
        return TorusModeBasis(spec.manifold, 3 if K is None else K)
    raise ConfigError("operator bases are defined on compact models")


# ---------------------------------------------------------------------------
# operator assembly and kernel estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorMatrix:
    matrix: np.ndarray            # A on the orthonormalized basis
    singular_values: np.ndarray
    transform: np.ndarray         # raw basis -> orthonormal basis, (nb, rank)
    gram_singular_values: np.ndarray
    basis: object
    scheme: object

    @property
    def skewness(self):
        A = self.matrix
        return float(np.linalg.norm(A + A.T) / max(np.linalg.norm(A), 1e-300))

    def kernel_functions(self, rel_tol=KERNEL_REL_TOL):
        """Raw-basis coefficient vectors spanning the numerical kernel of A."""
        U, s, Vt = np.linalg.svd(self.matrix)
        cut = rel_tol * s[0] if len(s) else 0.0
        vecs = Vt[s < cut] if len(s) else np.zeros((0, 0))
        return (self.transform @ vecs.T).T


def assemble_operator(spec, basis, scheme):
    """Galerkin matrix A_ij = <b_i, R_lambda[b_j]> on the orthonormalized basis.

    The sampled basis is orthonormalized against the scheme's inner product
    through an SVD of the Gram matrix, truncating singular values below
    1e-10 of the largest (this removes the radial relation on the sphere).
    """
    P, w = scheme.points, scheme.weights
    B = basis.evaluate(P)
    R = reeb_field_batch(spec, P)
    RB = basis.reeb_derivative_values(P, R)
    G = B.T @ (w[:, None] * B)
    U, s, _ = np.linalg.svd(G)
    keep = s > GRAM_TRUNCATION * s[0]
    rank = int(keep.sum())
    if rank < basis.expected_rank:
        raise BasisRankError(
            f"Gram rank {rank} fell below the independent-function count "
            f"{basis.expected_rank}")
    T = U[:, keep] / np.sqrt(s[keep])
    A = T.T @ (B.T @ (w[:, None] * RB)) @ T
    return OperatorMatrix(
        matrix=A,
        singular_values=np.linalg.svd(A, compute_uv=False),
        transform=T,
        gram_singular_values=s,
        basis=basis,
        scheme=scheme,
    )


def kernel_dimensions(opmat, rel_tol=KERNEL_REL_TOL):
    """(dim H0 estimate, dim H1 estimate, spectral gap report).

    dim H0 counts singular values below rel_tol * sigma_max; dim H1 comes
    from the adjoint matrix A^T, which has the same singular values on an
    orthonormal basis, so the two estimates agree by construction (asserted).
    The report carries the kept/cut singular values around the threshold and
    an ambiguity warning when their ratio is below 10.
    """
    s = opmat.singular_values
    s_adj = np.linalg.svd(opmat.matrix.T, compute_uv=False)
    cut = rel_tol * s[0] if len(s) else 0.0
    h0 = int(np.sum(s < cut))
    h1 = int(np.sum(s_adj < cut))
    assert h0 == h1, "adjoint singular values diverged from the direct ones"
    kept = s[s >= cut]
    dropped = s[s < cut]
    ratio = float(kept[-1] / dropped[0]) if len(kept) and len(dropped) and dropped[0] > 0 else np.inf
    report = {
        "sigma_max": float(s[0]) if len(s) else 0.0,
        "threshold": float(cut),
        "smallest_kept": float(kept[-1]) if len(kept) else 0.0,
        "largest_cut": float(dropped[0]) if len(dropped) else 0.0,
        "gap_ratio": ratio,
        "ambiguous": bool(ratio < GAP_WARN_RATIO),
    }
    return h0, h1, report


def validate_kernel_pointwise(spec, opmat, rel_tol=KERNEL_REL_TOL, gate=1e-5):
    """Check kernel vectors as functions: max |R[f]| <= gate * ||f||_inf.

    Returns (validated count, per-vector residual list).  A direction whose
    compressed image is small but whose pointwise Reeb derivative is large is
    a truncation ghost, not a projectable function.
    """
    vecs = opmat.kernel_functions(rel_tol)
    P = opmat.scheme.points
    B = opmat.basis.evaluate(P)
    R = reeb_field_batch(spec, P)
    RB = opmat.basis.reeb_derivative_values(P, R)
    residuals = []
    good = 0
    for v in vecs:
        fvals = B @ v
        rvals = RB @ v
        rel = float(np.max(np.abs(rvals)) / max(np.max(np.abs(fvals)), 1e-300))
        residuals.append(rel)
        if rel <= gate:
            good += 1
    return good, residuals


# ---------------------------------------------------------------------------
# characteristic solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharacteristicSolution:
    axes: tuple                  # per-coordinate sample grids
    samples: np.ndarray          # f on the grid, z along the last axis
    solvable: bool
    fiber_means: np.ndarray = None
    mode: str = "darboux"


def solve_characteristic(spec, u, f0=None, grid=64):
    """Solve R_lambda[f] = u in the Darboux normal form R = d/dz.

    Darboux box: f(q, p, z) = f0(q, p) + int_0^z u by cumulative composite
    Simpson per fiber.  Torus (periodic z-fiber model): solvable iff every
    fiber integral of u over the period vanishes within 1e-8 * ||u||_inf;
    the mean-zero antiderivative is returned, otherwise the result is
    flagged unsolvable (the fiber instance of the mean-zero obstruction).
    """
    model = spec.manifold
    if model.dim != 3:
        raise ConfigError("the characteristic solver is implemented for n = 1")
    if model.kind == "darboux":
        axes = tuple(np.linspace(lo, hi, grid) for lo, hi in model.bounds)
    elif model.kind == "torus":
        axes = tuple(np.arange(grid) * (p / grid) for p in model.periods)
    else:
        raise ConfigError("the characteristic solver needs a darboux or torus model")
    Q, P_, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([Q.ravel(), P_.ravel(), Z.ravel()], axis=1)
    uvals = np.broadcast_to(np.asarray(u(pts), dtype=float), (pts.shape[0],))
    ugrid = uvals.reshape(grid, grid, grid)

    if model.kind == "darboux":
        z = axes[2]
        F = cumulative_simpson(ugrid, x=z, axis=2, initial=0.0)
        if f0 is not None:
            base = pts.copy()
            base[:, 2] = z[0]
            fb = np.broadcast_to(np.asarray(f0(base), dtype=float), (pts.shape[0],))
            F = F + fb.reshape(grid, grid, grid)[:, :, :1]
        return CharacteristicSolution(axes=axes, samples=F, solvable=True, mode="darboux")

    # periodic fiber: close the fiber with the wrapped node for the means
    period = model.periods[2]
    h = period / grid
    closed = np.concatenate([ugrid, ugrid[:, :, :1]], axis=2)
    fiber_integrals = np.trapezoid(closed, dx=h, axis=2)
    sup = max(float(np.max(np.abs(uvals))), 1e-300)
    solvable = bool(np.max(np.abs(fiber_integrals)) / period <= 1e-8 * sup)
    zc = np.arange(grid + 1) * h
    F = cumulative_simpson(closed, x=zc, axis=2, initial=0.0)[:, :, :grid]
    F = F - F.mean(axis=2, keepdims=True)
    return CharacteristicSolution(axes=axes, samples=F, solvable=solvable,
                                  fiber_means=fiber_integrals / period, mode="periodic")
