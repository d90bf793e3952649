"""Model manifolds, points, tangent frames, and chart motion.

Three models of dimension 2n+1 are supported:

* ``DarbouxBox``  -- a bounded coordinate box (local model, non-compact);
* ``Torus``       -- flat torus, coordinates reduced to [0, period) per axis;
* ``Sphere``      -- S^{2n+1} stored in ambient R^{2n+2} coordinates with
  post-operation renormalization.

All types are immutable and all operations pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ConfigError

SPHERE_NORM_TOL = 1e-12
TANGENCY_TOL = 1e-10


def _darboux_names(n):
    if n == 1:
        return ("q", "p", "z")
    return tuple(f"q{i}" for i in range(1, n + 1)) + tuple(f"p{i}" for i in range(1, n + 1)) + ("z",)


def _torus_names(n):
    if n == 1:
        return ("x", "y", "z")
    return tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"y{i}" for i in range(1, n + 1)) + ("z",)


def _sphere_names(n):
    if n == 1:
        return ("x", "y", "u", "v")
    names = []
    for i in range(1, n + 2):
        names += [f"x{i}", f"y{i}"]
    return tuple(names)


@dataclass(frozen=True)
class ManifoldModel:
    """One of the three model manifolds; ``dim = 2n + 1``."""

    kind: str                      # "darboux" | "torus" | "sphere"
    n: int = 1
    bounds: tuple = ()             # darboux: ((lo, hi),) * dim
    periods: tuple = ()            # torus: (period,) * dim

    def __post_init__(self):
        if self.kind not in ("darboux", "torus", "sphere"):
            raise ConfigError(f"unknown manifold kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError("half-dimension n must be >= 1")
        if self.kind == "darboux":
            b = self.bounds or ((0.0, 1.0),) * self.dim
            if len(b) != self.dim or any(lo >= hi for lo, hi in b):
                raise ConfigError("darboux bounds must be one (lo, hi) pair per coordinate")
            object.__setattr__(self, "bounds", tuple(map(tuple, b)))
        if self.kind == "torus":
            p = self.periods or (2 * np.pi,) * self.dim
            if np.isscalar(p):
                p = (float(p),) * self.dim
            if len(p) != self.dim or any(x <= 0 for x in p):
                raise ConfigError("torus needs one positive period per coordinate")
            object.__setattr__(self, "periods", tuple(float(x) for x in p))

    @property
    def dim(self):
        """Intrinsic dimension 2n+1."""
        return 2 * self.n + 1

    @property
    def ambient_dim(self):
        """Number of stored coordinates per point."""
        return 2 * self.n + 2 if self.kind == "sphere" else self.dim

    @property
    def coord_names(self):
        if self.kind == "darboux":
            return _darboux_names(self.n)
        if self.kind == "torus":
            return _torus_names(self.n)
        return _sphere_names(self.n)

    @property
    def compact(self):
        return self.kind in ("torus", "sphere")

    # -- coordinate hygiene -------------------------------------------------
    def project(self, coords):
        """Reduce coordinates to the canonical chart (wrap / renormalize)."""
        C = np.asarray(coords, dtype=float)
        if self.kind == "torus":
            return np.mod(C, np.asarray(self.periods))
        if self.kind == "sphere":
            nrm = np.linalg.norm(C, axis=-1, keepdims=True)
            if np.any(nrm == 0):
                raise DomainError("cannot project the origin to the sphere")
            return C / nrm
        return C

    def contains(self, coords, tol=1e-9):
        C = np.asarray(coords, dtype=float)
        if C.shape[-1] != self.ambient_dim:
            return False
        if self.kind == "sphere":
            return bool(np.all(np.abs(np.linalg.norm(C, axis=-1) - 1.0) <= max(tol, SPHERE_NORM_TOL)))
        if self.kind == "darboux":
            lo = np.array([b[0] for b in self.bounds])
            hi = np.array([b[1] for b in self.bounds])
            return bool(np.all(C >= lo - tol) and np.all(C <= hi + tol))
        return True

    def distance(self, a, b):
        """Model metric: minimal image (torus), chordal (sphere), Euclidean (darboux)."""
        A, B = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if self.kind == "torus":
            d = np.abs(A - B)
            per = np.asarray(self.periods)
            d = np.minimum(d, per - d)
            return float(np.linalg.norm(d)) if d.ndim == 1 else np.linalg.norm(d, axis=-1)
        diff = np.linalg.norm(A - B, axis=-1)
        return float(diff) if np.ndim(diff) == 0 else diff


@dataclass(frozen=True)
class Point:
    """A point on a model manifold, in intrinsic or ambient coordinates."""

    manifold: ManifoldModel
    coords: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.coords, dtype=float)
        if C.shape != (self.manifold.ambient_dim,):
            raise DomainError(
                f"expected {self.manifold.ambient_dim} coordinates, got shape {C.shape}")
        if self.manifold.kind == "sphere" and abs(np.linalg.norm(C) - 1.0) > 1e-9:
            raise DomainError(f"sphere point has |x| = {np.linalg.norm(C):.12f}")
        if not self.manifold.contains(C):
            raise DomainError("point lies outside the manifold model")
        object.__setattr__(self, "coords", C)
        self.coords.setflags(write=False)


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector with components in the base point's coordinates."""

    base: Point
    comps: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.comps, dtype=float)
        if V.shape != self.base.coords.shape:
            raise DomainError("tangent components must match the point's coordinate count")
        if self.base.manifold.kind == "sphere" and abs(V @ self.base.coords) > TANGENCY_TOL:
            raise DomainError(
                f"sphere tangency violated: <v, x> = {V @ self.base.coords:.3e}")
        object.__setattr__(self, "comps", V)
        self.comps.setflags(write=False)

    @property
    def norm(self):
        return float(np.linalg.norm(self.comps))


@dataclass(frozen=True)
class CovectorValue:
    """A covector at a point, coefficients relative to the dual tangent frame."""

    base: Point
    coeffs: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.coeffs, dtype=float)
        if C.shape != (self.base.manifold.dim,):
            raise DomainError("covector needs one coefficient per frame vector")
        object.__setattr__(self, "coeffs", C)
        self.coeffs.setflags(write=False)


@dataclass(frozen=True)
class BilinearValue:
    """An antisymmetric bilinear form at a point, matrix in the tangent frame."""

    base: Point
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        d = self.base.manifold.dim
        if M.shape != (d, d):
            raise DomainError(f"expected a {d}x{d} matrix")
        if np.max(np.abs(M + M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
            raise DomainError("bilinear value is not antisymmetric")
        object.__setattr__(self, "matrix", M)
        self.matrix.setflags(write=False)


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

def tangent_frame_batch(model, coords):
    """Orthonormal tangent frames at a batch of coordinate rows.

    Returns an array of shape (N, ambient_dim, dim) whose columns are the
    frame vectors.  Flat models use the coordinate frame; the sphere uses a
    deterministic Gram-Schmidt completion of the orthogonal complement of x
    (the axis closest to x is dropped, the rest kept in index order).
    """
    C = np.atleast_2d(np.asarray(coords, dtype=float))
    N = C.shape[0]
    if model.kind != "sphere":
        return np.broadcast_to(np.eye(model.dim), (N, model.dim, model.dim)).copy()
    a = model.ambient_dim
    drop = np.argmax(np.abs(C), axis=1)
    frames = np.zeros((N, a, a - 1))
    # axes in index order with the one closest to x removed
    all_idx = np.broadcast_to(np.arange(a), (N, a))
    keep = all_idx[all_idx != drop[:, None]].reshape(N, a - 1)
    for j in range(a - 1):
        v = (keep[:, j][:, None] == np.arange(a)[None, :]).astype(float)
        v = v - (np.sum(v * C, axis=1, keepdims=True)) * C
        for i in range(j):
            prev = frames[:, :, i]
            v = v - np.sum(v * prev, axis=1, keepdims=True) * prev
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(nrm < 1e-13):
            raise DomainError("frame construction degenerated")
        frames[:, :, j] = v / nrm
    return frames


def tangent_frame(model, point):
    """Orthonormal basis of the tangent space at ``point``, deterministic."""
    if not model.contains(point.coords):
        raise DomainError("point is off the manifold")
    F = tangent_frame_batch(model, point.coords[None, :])[0]
    return [TangentVector(point, F[:, j]) for j in range(model.dim)]


# ---------------------------------------------------------------------------
# chart motion and sampling
# ---------------------------------------------------------------------------

def displace(model, point, vector, t):
    """First-order chart move x + t v followed by wrap / renormalization."""
    if vector.base is not point and not np.array_equal(vector.base.coords, point.coords):
        raise DomainError("vector is not based at the given point")
    return Point(model, model.project(point.coords + t * vector.comps))


def displace_coords(model, coords, vecs, t):
    """Batch form of :func:`displace` on raw coordinate arrays."""
    return model.project(np.asarray(coords, dtype=float) + t * np.asarray(vecs, dtype=float))


def sample_points(model, count, seed):
    """Deterministic sample of ``count`` points, uniform for the model measure.

    Darboux/Torus points are uniform in coordinates; sphere points are
    normalized Gaussian vectors (round measure).
    """
    if count < 0:
        raise ConfigError("sample count must be nonnegative")
    rng = np.random.default_rng(seed)
    coords = sample_coords(model, count, rng)
    return [Point(model, c) for c in coords]


def sample_coords(model, count, rng):
    """Coordinate rows for :func:`sample_points`; accepts a Generator."""
    if model.kind == "sphere":
        g = rng.standard_normal((count, model.ambient_dim))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    if model.kind == "torus":
        return rng.uniform(0.0, 1.0, (count, model.dim)) * np.asarray(model.periods)
    lo = np.array([b[0] for b in model.bounds])
    hi = np.array([b[1] for b in model.bounds])
    return lo + rng.uniform(0.0, 1.0, (count, model.dim)) * (hi - lo)


# ---------------------------------------------------------------------------
# CLI manifold strings
# ---------------------------------------------------------------------------

def parse_manifold(text):
    """Parse strings like ``darboux:n=1,box=0..1`` / ``t3:period=6.28`` / ``s3``."""
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    opts = {}
    if rest:
        for item in rest.split(","):
            if not item.strip():
                continue
            k, _, v = item.partition("=")
            if not _:
                raise ConfigError(f"malformed manifold option {item!r}")
            opts[k.strip()] = v.strip()
    known = {"n", "box", "period"}
    unknown = set(opts) - known
    if unknown:
        raise ConfigError(f"unknown manifold options {sorted(unknown)}")
    n = int(opts.get("n", 1))
    if head in ("darboux", "box"):
        bounds = ()
        if "box" in opts:
            lo, _, hi = opts["box"].partition("..")
            bounds = ((float(lo), float(hi)),) * (2 * n + 1)
        return ManifoldModel("darboux", n=n, bounds=bounds)
    if head in ("t3", "torus"):
        per = (float(opts["period"]),) * (2 * n + 1) if "period" in opts else ()
        return ManifoldModel("torus", n=n, periods=per)
    if head in ("s3", "sphere"):
        return ManifoldModel("sphere", n=n)
    raise ConfigError(f"unknown manifold {head!r}")
