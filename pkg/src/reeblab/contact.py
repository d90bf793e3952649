"""Pointwise contact-form evaluation, Reeb and Hamiltonian fields, splittings.

A contact form is described by a base family on a model manifold plus an
optional stack of perturbations:

* ``darboux``        lambda = dz - sum_i p_i dq_i
* ``torus_tight(m)`` lambda = cos(m z) dx + sin(m z) dy   (n = 1)
* ``sphere_std``     lambda = sum_i (x_i dy_i - y_i dx_i) restricted to S^{2n+1}

Perturbations: ``conformal(f, s)`` -> e^{s f} lambda, ``scaled_form(h, s)``
-> (1 + s h) lambda (both keep ker lambda; small phase space), and
``additive(alpha, s)`` -> lambda + s alpha (big phase space).

The defining linear systems for the Reeb field, the Hamiltonian field, and
the one-form splitting are solved by least squares in an orthonormal tangent
frame, with an explicit residual gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateFormError, DomainError, ExpressionError
from .fields import OneFormField, ScalarField, parse_scalar_field, parse_oneform_field
from .geometry import (
    BilinearValue,
    CovectorValue,
    ManifoldModel,
    Point,
    TangentVector,
    parse_manifold,
    sample_coords,
    tangent_frame_batch,
)

RESIDUAL_TOL = 1e-9
KERNEL_RANK_TOL = 1e-8


@dataclass(frozen=True)
class Perturbation:
    """One layer on top of the base form."""

    kind: str                    # "conformal" | "scaled_form" | "additive"
    size: float
    scalar: ScalarField = None   # f (conformal) or h (scaled_form)
    oneform: OneFormField = None  # alpha (additive)

    def __post_init__(self):
        if self.kind in ("conformal", "scaled_form") and self.scalar is None:
            raise ConfigError(f"{self.kind} perturbation needs a scalar field")
        if self.kind == "additive" and self.oneform is None:
            raise ConfigError("additive perturbation needs a one-form")
        if self.kind not in ("conformal", "scaled_form", "additive"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")


class ContactFormSpec:
    """Analytic description of a contact form on a model manifold.

    Nondegeneracy (full rank of d-lambda on ker lambda) is checked on a
    seeded point sample at construction; failure is a hard error.
    """

    def __init__(self, manifold, base, m=1, perturbations=(), check_seed=12345,
                 check_count=64):
        self.manifold = manifold
        self.base = base
        self.m = int(m)
        self.perturbations = tuple(perturbations)
        if base == "darboux" and manifold.kind != "darboux":
            raise ConfigError("darboux form lives on a DarbouxBox model")
        if base == "torus_tight":
            if manifold.kind != "torus" or manifold.n != 1:
                raise ConfigError("torus_tight form needs the Torus model with n = 1")
            for per in manifold.periods[2:]:
                if abs(self.m * per / (2 * np.pi) - round(self.m * per / (2 * np.pi))) > 1e-12:
                    raise ConfigError("torus_tight needs m * z-period to be a multiple of 2 pi")
        if base == "sphere_std" and manifold.kind != "sphere":
            raise ConfigError("sphere_std form lives on the Sphere model")
        if base not in ("darboux", "torus_tight", "sphere_std"):
            raise ConfigError(f"unknown base form {base!r}")
        self._check_nondegenerate(check_seed, check_count)

    # -- construction helpers ---------------------------------------------
    @property
    def coords(self):
        return self.manifold.coord_names

    def scalar(self, expr):
        """Build a ScalarField over this form's coordinates."""
        return ScalarField(expr, self.coords)

    def oneform(self, coefficients):
        return OneFormField(coefficients, self.coords)

    def perturbed(self, kind, size, scalar=None, oneform=None):
        """A new spec with one more perturbation layer."""
        extra = Perturbation(kind, float(size), scalar=scalar, oneform=oneform)
        return ContactFormSpec(self.manifold, self.base, m=self.m,
                               perturbations=self.perturbations + (extra,))

    def _check_nondegenerate(self, seed, count):
        rng = np.random.default_rng(seed)
        C = sample_coords(self.manifold, count, rng)
        lam_f, M_f, _ = self.form_frame_batch(C)
        sv = np.linalg.svd(_restrict_to_kernel(lam_f, M_f), compute_uv=False)
        worst = float(sv[..., -1].min())
        if worst <= KERNEL_RANK_TOL:
            raise DegenerateFormError(
                f"d-lambda degenerates on ker lambda (smallest singular value {worst:.3e})",
                diagnostic=worst)

    # -- ambient coefficient evaluation -------------------------------------
    def base_coefficients(self, C):
        """Base form coefficients c with lambda0 = sum c_i dx_i, shape (N, a)."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        N, a = C.shape
        if self.base == "darboux":
            n = self.manifold.n
            c = np.zeros((N, a))
            c[:, :n] = -C[:, n:2 * n]
            c[:, -1] = 1.0
            return c
        if self.base == "torus_tight":
            z = C[:, 2]
            c = np.zeros((N, 3))
            c[:, 0] = np.cos(self.m * z)
            c[:, 1] = np.sin(self.m * z)
            return c
        # sphere_std: pairs (x_i, y_i) contribute x_i dy_i - y_i dx_i
        c = np.empty((N, a))
        c[:, 0::2] = -C[:, 1::2]
        c[:, 1::2] = C[:, 0::2]
        return c

    def base_exterior_matrix(self, C):
        """M0 with (d lambda0)(u, w) = u^T M0 w in ambient coordinates."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        N, a = C.shape
        M = np.zeros((N, a, a))
        if self.base == "darboux":
            n = self.manifold.n
            for i in range(n):                        # d(-p_i dq_i) = dq_i ^ dp_i
                M[:, i, n + i] = 1.0
                M[:, n + i, i] = -1.0
        elif self.base == "torus_tight":
            z = C[:, 2]
            M[:, 2, 0] = -self.m * np.sin(self.m * z)  # -m sin(mz) dz ^ dx
            M[:, 0, 2] = self.m * np.sin(self.m * z)
            M[:, 2, 1] = self.m * np.cos(self.m * z)   # +m cos(mz) dz ^ dy
            M[:, 1, 2] = -self.m * np.cos(self.m * z)
        else:                                          # sphere: 2 sum dx_i ^ dy_i
            for i in range(0, a, 2):
                M[:, i, i + 1] = 2.0
                M[:, i + 1, i] = -2.0
        return M

    def coefficients(self, C):
        """Perturbed form: ambient coefficients and exterior-derivative matrix.

        Multiplicative layers compose as lambda = F * lambda0 with
        d(F lambda0) = dF ^ lambda0 + F d lambda0; additive layers append
        s * alpha with exact (or FD) d alpha.
        """
        C = np.atleast_2d(np.asarray(C, dtype=float))
        c0 = self.base_coefficients(C)
        M0 = self.base_exterior_matrix(C)
        F = np.ones(C.shape[0])
        dF = np.zeros_like(C)
        add_c = np.zeros_like(c0)
        add_M = np.zeros_like(M0)
        for pert in self.perturbations:
            if pert.kind == "conformal":
                f = pert.scalar(C)
                g = pert.scalar.gradient(C)
                factor = np.exp(pert.size * f)
                dfactor = factor[:, None] * (pert.size * g)
                dF = dF * factor[:, None] + F[:, None] * dfactor
                F = F * factor
            elif pert.kind == "scaled_form":
                h = pert.scalar(C)
                g = pert.scalar.gradient(C)
                factor = 1.0 + pert.size * h
                if np.any(factor <= 0):
                    raise DegenerateFormError("scaled_form factor 1 + s h crossed zero")
                dF = dF * factor[:, None] + F[:, None] * (pert.size * g)
                F = F * factor
            else:
                add_c = add_c + pert.size * pert.oneform.values(C)
                add_M = add_M + pert.size * pert.oneform.exterior_derivative_matrix(C)
        c = F[:, None] * c0 + add_c
        wedge = dF[:, :, None] * c0[:, None, :] - c0[:, :, None] * dF[:, None, :]
        M = wedge + F[:, None, None] * M0 + add_M
        return c, M

    # -- frame-level evaluation ---------------------------------------------
    def frame_data(self, C):
        """(lambda_f, M_f, frames) with ``frames is None`` on flat models.

        Flat models use the coordinate frame, so the frame contraction is an
        identity and is skipped; the sphere contracts through its orthonormal
        frames (columns of the returned array).
        """
        C = np.atleast_2d(np.asarray(C, dtype=float))
        c, M = self.coefficients(C)
        if self.manifold.kind != "sphere":
            return c, M, None
        frames = tangent_frame_batch(self.manifold, C)
        Ft = np.swapaxes(frames, 1, 2)
        lam_f = (c[:, None, :] @ frames)[:, 0, :]
        M_f = Ft @ M @ frames
        return lam_f, M_f, frames

    def form_frame_batch(self, C):
        """(lambda_f, M_f, frames) at coordinate rows C.

        lambda_f[k] = lambda(E_k); M_f[k, l] = d lambda(E_k, E_l); frames
        always holds the orthonormal frame vectors as columns.
        """
        C = np.atleast_2d(np.asarray(C, dtype=float))
        lam_f, M_f, frames = self.frame_data(C)
        if frames is None:
            frames = np.broadcast_to(np.eye(self.manifold.dim),
                                     (C.shape[0], self.manifold.dim, self.manifold.dim))
        return lam_f, M_f, frames

    def __repr__(self):
        tag = self.base if self.base != "torus_tight" else f"torus_tight(m={self.m})"
        if self.perturbations:
            tag += " + " + ", ".join(p.kind for p in self.perturbations)
        return f"ContactFormSpec({tag} on {self.manifold.kind}, n={self.manifold.n})"


@dataclass(frozen=True)
class FormValue:
    """Pointwise lambda and d-lambda in an orthonormal tangent frame."""

    lam: CovectorValue
    dlam: BilinearValue
    frame: np.ndarray      # columns are the frame vectors (ambient components)

    @property
    def base(self):
        return self.lam.base


def _restrict_to_kernel(lam_f, M_f):
    """Restriction of d-lambda to ker lambda, batched.

    Builds an orthonormal basis of ker(lambda_f) by projecting out the
    lambda direction from the frame and returns the (2n) x (2n) matrices.
    """
    lam_f = np.atleast_2d(lam_f)
    d = lam_f.shape[-1]
    unit = lam_f / np.linalg.norm(lam_f, axis=-1, keepdims=True)
    # Householder-style completion: an orthonormal basis of unit^perp
    sign = np.where(unit[..., :1] >= 0, 1.0, -1.0)
    w = unit.copy()
    w[..., 0] += sign[..., 0]
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    Hfull = np.broadcast_to(np.eye(d), lam_f.shape[:-1] + (d, d)).copy()
    Hfull -= 2.0 * w[..., :, None] * w[..., None, :]
    K = Hfull[..., :, 1:]          # columns orthogonal to unit
    return np.einsum("...ia,...ij,...jb->...ab", K, M_f, K)


# ---------------------------------------------------------------------------
# pointwise operations
# ---------------------------------------------------------------------------

def eval_form(spec, x):
    """Evaluate lambda_x and (d lambda)_x in the tangent frame at x."""
    if not spec.manifold.contains(x.coords):
        raise DomainError("point is off the manifold")
    lam_f, M_f, frames = spec.form_frame_batch(x.coords[None, :])
    sv = np.linalg.svd(_restrict_to_kernel(lam_f, M_f)[0], compute_uv=False)
    if sv[-1] <= KERNEL_RANK_TOL:
        raise DegenerateFormError(
            f"form degenerates at the point (singular value {sv[-1]:.3e})",
            diagnostic=float(sv[-1]))
    return FormValue(
        lam=CovectorValue(x, lam_f[0]),
        dlam=BilinearValue(x, 0.5 * (M_f[0] - M_f[0].T)),
        frame=frames[0],
    )


def _solve_frame_systems(lam_f, M_f, rhs):
    """Least-squares solve of {lambda(X) = b0, dlam(X, E_j) = b_j} batched.

    rhs has shape (N, 1 + dim, k) for k right-hand sides; returns
    (solutions (N, dim, k), worst residual per point).
    """
    A = np.concatenate([lam_f[:, None, :], np.swapaxes(M_f, 1, 2)], axis=1)
    At = np.swapaxes(A, 1, 2)
    sol = np.linalg.solve(At @ A, At @ rhs)
    res = np.linalg.norm(A @ sol - rhs, axis=1).max(axis=-1)
    return sol, res


def _to_ambient(frames, sol):
    return sol if frames is None else (frames @ sol[..., None])[..., 0]


def reeb_field_batch(spec, C, gate=RESIDUAL_TOL):
    """Reeb vector components at coordinate rows C, shape (N, ambient_dim)."""
    lam_f, M_f, frames = spec.frame_data(C)
    rhs = np.zeros((lam_f.shape[0], 1 + lam_f.shape[1], 1))
    rhs[:, 0, 0] = 1.0
    sol, res = _solve_frame_systems(lam_f, M_f, rhs)
    if res.max() > gate:
        raise DegenerateFormError(
            f"Reeb system residual {res.max():.3e} exceeds {gate:.1e}",
            diagnostic=float(res.max()))
    return _to_ambient(frames, sol[..., 0])


def reeb_field(spec, x):
    """The unique vector with lambda(R) = 1 and R -| d lambda = 0."""
    comps = reeb_field_batch(spec, x.coords[None, :])[0]
    return TangentVector(x, comps)


def _hamiltonian_solve(spec, H, C, gate):
    """Shared-matrix solve of the Reeb and Hamiltonian systems.

    Returns (X components, R components, R[H]) at coordinate rows C.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    lam_f, M_f, frames = spec.frame_data(C)
    d = lam_f.shape[1]
    Hval = np.broadcast_to(np.asarray(H(C), dtype=float), (C.shape[0],))
    grad = H.gradient(C)
    dH_f = grad if frames is None else (grad[:, None, :] @ frames)[:, 0, :]
    rhs_R = np.zeros((C.shape[0], 1 + d, 1))
    rhs_R[:, 0, 0] = 1.0
    Rsol, res_R = _solve_frame_systems(lam_f, M_f, rhs_R)
    RH = np.sum(dH_f * Rsol[..., 0], axis=1)
    rhs_X = np.concatenate([-Hval[:, None], dH_f - RH[:, None] * lam_f],
                           axis=1)[..., None]
    Xsol, res_X = _solve_frame_systems(lam_f, M_f, rhs_X)
    worst = max(res_R.max(), res_X.max())
    if worst > gate:
        raise DegenerateFormError(
            f"Hamiltonian system residual {worst:.3e} exceeds {gate:.1e}",
            diagnostic=float(worst))
    return _to_ambient(frames, Xsol[..., 0]), _to_ambient(frames, Rsol[..., 0]), RH


def hamiltonian_field_batch(spec, H, C, gate=RESIDUAL_TOL):
    """Contact Hamiltonian field of H at coordinate rows C."""
    X, _, _ = _hamiltonian_solve(spec, H, C, gate)
    return X


def hamiltonian_with_payoff_batch(spec, H, C, gate=RESIDUAL_TOL):
    """(X_H, -R[H]) in one pass; the flow rhs plus the exponent integrand."""
    X, _, RH = _hamiltonian_solve(spec, H, C, gate)
    return X, -RH


def hamiltonian_field(spec, H, x):
    """The unique contact field with X -| lambda = -H, X -| dlam = dH - R[H] lambda."""
    comps = hamiltonian_field_batch(spec, H, x.coords[None, :])[0]
    return TangentVector(x, comps)


def reeb_derivative_batch(spec, f, C):
    """R_lambda[f] at coordinate rows C using the exact gradient of f."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = reeb_field_batch(spec, C)
    return np.sum(f.gradient(C) * R, axis=1)


def reeb_derivative(spec, f, x):
    """df_x(R_lambda(x))."""
    return float(reeb_derivative_batch(spec, f, x.coords[None, :])[0])


def decompose_vector(spec, x, v):
    """Split v = v_pi + a R_lambda with a = lambda(v) and lambda(v_pi) = 0."""
    form = eval_form(spec, x)
    R = reeb_field(spec, x)
    v_frame = form.frame.T @ v.comps
    a = float(form.lam.coeffs @ v_frame)
    v_pi = TangentVector(x, v.comps - a * R.comps)
    check = abs(form.lam.coeffs @ (form.frame.T @ v_pi.comps))
    if check > 1e-10 * max(1.0, v.norm):
        raise DegenerateFormError(f"pi-part not in ker lambda (lambda(v_pi) = {check:.3e})")
    return v_pi, a


def decompose_oneform(spec, x, beta, gate=RESIDUAL_TOL):
    """Split beta = V_pi -| dlam + h lambda with h = beta(R), V_pi in ker lambda.

    ``beta`` is a CovectorValue with coefficients in the frame at x.
    """
    form = eval_form(spec, x)
    R = reeb_field(spec, x)
    R_frame = form.frame.T @ R.comps
    h = float(beta.coeffs @ R_frame)
    target = beta.coeffs - h * form.lam.coeffs
    # rows: dlam(V, E_j) = target_j for all j, plus lambda(V) = 0
    M_f = form.dlam.matrix
    A = np.vstack([M_f.T, form.lam.coeffs[None, :]])
    b = np.concatenate([target, [0.0]])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.linalg.norm(A @ sol - b))
    if res > gate:
        raise DegenerateFormError(
            f"one-form splitting residual {res:.3e} exceeds {gate:.1e}", diagnostic=res)
    return TangentVector(x, form.frame @ sol), h


# ---------------------------------------------------------------------------
# CLI form strings
# ---------------------------------------------------------------------------

_BASE_BY_MODEL = {"darboux": "darboux", "torus": "torus_tight", "sphere": "sphere_std"}


def parse_form(form_text, perturb_text=None):
    """Build a ContactFormSpec from CLI strings.

    ``form_text``: ``darboux[:n=..,box=a..b]`` | ``t3[:m=..,period=..]`` | ``s3``.
    ``perturb_text``: ``conformal:f=<expr>,s=0.1`` | ``scaled:h=<expr>,s=0.1``
    | ``additive:alpha=<e;e;e>,s=0.1``; may be ``None``.
    """
    head, _, rest = form_text.partition(":")
    head = head.strip().lower()
    opts = {}
    if rest:
        for item in rest.split(","):
            k, sep, v = item.partition("=")
            if not sep:
                raise ConfigError(f"malformed form option {item!r}")
            opts[k.strip()] = v.strip()
    m = int(opts.pop("m", 1))
    manifold = parse_manifold(head if not opts else head + ":" + ",".join(f"{k}={v}" for k, v in opts.items()))
    spec = ContactFormSpec(manifold, _BASE_BY_MODEL[manifold.kind], m=m)
    if perturb_text:
        spec = _apply_perturb_string(spec, perturb_text)
    return spec


def _apply_perturb_string(spec, text):
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    names = {"conformal": "conformal", "scaled": "scaled_form",
             "scaled_form": "scaled_form", "additive": "additive"}
    if kind not in names:
        raise ConfigError(f"unknown perturbation {kind!r}")
    fields = {}
    # split on commas not inside the expression value for s=
    for item in rest.split(","):
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"malformed perturbation option {item!r}")
        fields[k.strip()] = v.strip()
    size = float(fields.pop("s", 0.1))
    kind = names[kind]
    if kind == "additive":
        alpha = parse_oneform_field(fields.pop("alpha"), spec.coords)
        if fields:
            raise ConfigError(f"unknown perturbation options {sorted(fields)}")
        return spec.perturbed("additive", size, oneform=alpha)
    key = "f" if kind == "conformal" else "h"
    expr = fields.pop(key, None)
    if expr is None or fields:
        raise ConfigError(f"{kind} perturbation needs exactly '{key}=<expr>' and 's=<num>'")
    return spec.perturbed(kind, size, scalar=parse_scalar_field(expr, spec.coords))
