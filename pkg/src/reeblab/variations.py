"""First variations of the Reeb field, Hamiltonian fields, and exponents.

Perturbation directions come in two classes mirroring the two phase spaces:
``scaled_form(h)`` keeps the kernel of lambda (alpha = h lambda) and
``additive(alpha)`` is an arbitrary one-form.  The defining linear systems

    Y -| lambda = -R -| alpha,        Y -| dlam = -R -| d alpha
    Z -| lambda = -X_H -| alpha,      Z -| dlam = -X_H -| d alpha - Y[H] lambda - R[H] alpha

are the source of truth; the printed closed forms are cross-checks.  Every
variation has an independent central-difference oracle over the explicit
perturbation family lambda_s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateFormError
from .contact import (
    RESIDUAL_TOL,
    eval_form,
    hamiltonian_field,
    hamiltonian_field_batch,
    reeb_field,
    reeb_field_batch,
)
from .conformal import conformal_exponent_direct
from .fields import OneFormField, ScalarField
from .geometry import Point, TangentVector, tangent_frame_batch

FD_S_LIST = (1e-2, 5e-3)


@dataclass(frozen=True)
class PerturbationDirection:
    """A tangent direction in the space of contact forms."""

    kind: str                     # "scaled_form" | "additive"
    h: ScalarField = None         # scaled_form: alpha = h lambda
    alpha: OneFormField = None    # additive: arbitrary one-form

    def __post_init__(self):
        if self.kind == "scaled_form" and self.h is None:
            raise ConfigError("scaled_form direction needs h")
        if self.kind == "additive" and self.alpha is None:
            raise ConfigError("additive direction needs a one-form")
        if self.kind not in ("scaled_form", "additive"):
            raise ConfigError(f"unknown direction {self.kind!r}")

    def ambient_values(self, spec, C):
        """alpha coefficients at coordinate rows, shape (N, a)."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if self.kind == "additive":
            return self.alpha.values(C)
        lam_c, _ = spec.coefficients(C)
        return np.broadcast_to(np.asarray(self.h(C), dtype=float), (C.shape[0],))[:, None] * lam_c

    def ambient_exterior(self, spec, C):
        """d alpha as ambient antisymmetric matrices, shape (N, a, a)."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if self.kind == "additive":
            return self.alpha.exterior_derivative_matrix(C)
        lam_c, M = spec.coefficients(C)
        h = np.broadcast_to(np.asarray(self.h(C), dtype=float), (C.shape[0],))
        dh = self.h.gradient(C)
        wedge = dh[:, :, None] * lam_c[:, None, :] - lam_c[:, :, None] * dh[:, None, :]
        return wedge + h[:, None, None] * M

    def h_alpha(self, spec, C):
        """Reeb component alpha(R_lambda) of the direction."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if self.kind == "scaled_form":
            return np.broadcast_to(np.asarray(self.h(C), dtype=float), (C.shape[0],))
        R = reeb_field_batch(spec, C)
        return np.einsum("ni,ni->n", self.alpha.values(C), R)

    def perturbed_spec(self, spec, s):
        """The contact form lambda + s alpha as a new spec."""
        if self.kind == "scaled_form":
            return spec.perturbed("scaled_form", s, scalar=self.h)
        return spec.perturbed("additive", s, oneform=self.alpha)


# ---------------------------------------------------------------------------
# defining-system solves
# ---------------------------------------------------------------------------

def _variation_solve(spec, C, rhs0, rhs_cov, gate=RESIDUAL_TOL):
    """Solve {V -| lambda = rhs0, V -| dlam = rhs_cov} least squares, batched."""
    lam_f, M_f, frames = spec.form_frame_batch(C)
    rhs = np.concatenate([rhs0[:, None], rhs_cov], axis=1)
    A = np.concatenate([lam_f[:, None, :], np.swapaxes(M_f, 1, 2)], axis=1)
    AtA = np.einsum("nri,nrj->nij", A, A)
    Atb = np.einsum("nri,nr->ni", A, rhs)
    sol = np.linalg.solve(AtA, Atb[..., None])[..., 0]
    res = np.linalg.norm(np.einsum("nrj,nj->nr", A, sol) - rhs, axis=1)
    if res.max() > gate:
        raise DegenerateFormError(
            f"variation system residual {res.max():.3e} exceeds {gate:.1e}",
            diagnostic=float(res.max()))
    return np.einsum("nik,nk->ni", frames, sol)


def reeb_variation_batch(spec, direction, C):
    """Y_alpha at coordinate rows from its defining linear system."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    _, _, frames = spec.form_frame_batch(C)
    R = reeb_field_batch(spec, C)
    a_vals = direction.ambient_values(spec, C)
    dA = direction.ambient_exterior(spec, C)
    rhs0 = -np.einsum("ni,ni->n", a_vals, R)
    contraction = np.einsum("ni,nij->nj", R, dA)          # R -| d alpha, ambient covector
    rhs_cov = -np.einsum("ni,nik->nk", contraction, frames)
    return _variation_solve(spec, C, rhs0, rhs_cov)


def reeb_variation(spec, direction, x):
    """delta_lambda R_lambda in the direction alpha, as a tangent vector."""
    return TangentVector(x, reeb_variation_batch(spec, direction, x.coords[None, :])[0])


def hamiltonian_field_variation(spec, H, direction, x, agreement_gate=1e-9):
    """Z_alpha = delta_lambda X_(H;lambda) in the given direction.

    Solves the general linearized defining system; for scaled_form
    directions the closed form

        Z = -(h X_H^pi + H X_h^pi) + h H R_lambda

    is evaluated as well and the two must agree within ``agreement_gate``.
    """
    C = x.coords[None, :]
    lam_f, M_f, frames = spec.form_frame_batch(C)
    XH = hamiltonian_field_batch(spec, H, C)
    R = reeb_field_batch(spec, C)
    Y = reeb_variation_batch(spec, direction, C)
    a_vals = direction.ambient_values(spec, C)
    dA = direction.ambient_exterior(spec, C)
    RH = float(np.einsum("ni,ni->n", H.gradient(C), R)[0])
    YH = float(np.einsum("ni,ni->n", H.gradient(C), Y)[0])
    rhs0 = -np.einsum("ni,ni->n", a_vals, XH)
    XdA = np.einsum("ni,nij->nj", XH, dA)
    alpha_f = np.einsum("ni,nik->nk", a_vals, frames)
    rhs_cov = -np.einsum("ni,nik->nk", XdA, frames) - YH * lam_f - RH * alpha_f
    Z = _variation_solve(spec, C, rhs0, rhs_cov)[0]
    if direction.kind == "scaled_form":
        Zc = _z_closed_form(spec, H, direction.h, x)
        if np.max(np.abs(Z - Zc)) > agreement_gate:
            raise DegenerateFormError(
                f"closed-form Z disagrees with the linear system by "
                f"{np.max(np.abs(Z - Zc)):.3e}")
    return TangentVector(x, Z)


def _z_closed_form(spec, H, h, x):
    """Z = -(h X_H^pi + H X_h^pi) + h H R for alpha = h lambda."""
    C = x.coords[None, :]
    R = reeb_field_batch(spec, C)[0]
    lam_f, _, frames = spec.form_frame_batch(C)
    XH = hamiltonian_field_batch(spec, H, C)[0]
    Xh = hamiltonian_field_batch(spec, h, C)[0]
    lam_of = lambda V: float(lam_f[0] @ (frames[0].T @ V))
    XH_pi = XH - lam_of(XH) * R
    Xh_pi = Xh - lam_of(Xh) * R
    hx = float(h(C)[0])
    Hx = float(H(C)[0])
    return -(hx * XH_pi + Hx * Xh_pi) + hx * Hx * R


def exponent_variation(spec, psi, direction, x):
    """delta_lambda g_(psi;lambda)(alpha) = h_alpha(psi x) - h_alpha(x).

    ``psi`` is held fixed as a map on coordinate rows while lambda varies.
    """
    xc = np.asarray(x.coords, dtype=float)[None, :]
    psix = spec.manifold.project(psi(xc))
    h_here = direction.h_alpha(spec, xc)
    h_there = direction.h_alpha(spec, psix)
    return float(h_there[0] - h_here[0])


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FDEstimate:
    value: object               # vector (fields) or float (exponent)
    observed_order: float
    raw: tuple                  # central-difference values per step size


def finite_difference_oracle(spec, direction, quantity, x, s_list=FD_S_LIST,
                             H=None, psi=None):
    """Central-difference derivative of a lambda-dependent quantity at s = 0.

    ``quantity`` is one of ``"reeb"``, ``"ham_field"`` (needs H), or
    ``"exponent"`` (needs the frozen map psi).  The estimate is the Richardson
    combination of the central differences over ``s_list``; the observed
    convergence order is measured on an extra coarse size 2 * max(s_list).
    Degenerate perturbed forms trigger one retry with halved sizes.
    """
    if quantity == "reeb":
        Q = lambda sp: reeb_field_batch(sp, x.coords[None, :])[0]
    elif quantity == "ham_field":
        if H is None:
            raise ConfigError("ham_field oracle needs H")
        Q = lambda sp: hamiltonian_field_batch(sp, H, x.coords[None, :])[0]
    elif quantity == "exponent":
        if psi is None:
            raise ConfigError("exponent oracle needs the frozen map psi")
        Q = lambda sp: conformal_exponent_direct(sp, psi, x)[0]
    else:
        raise ConfigError(f"unknown oracle quantity {quantity!r}")

    sizes = sorted(s_list, reverse=True)
    sizes = [2 * sizes[0]] + sizes     # coarse size only feeds the order estimate

    def centrals(scale):
        out = []
        for s in sizes:
            plus = Q(direction.perturbed_spec(spec, scale * s))
            minus = Q(direction.perturbed_spec(spec, -scale * s))
            out.append((np.asarray(plus, dtype=float) - np.asarray(minus, dtype=float))
                       / (2 * scale * s))
        return out

    try:
        D = centrals(1.0)
    except DegenerateFormError:
        D = centrals(0.5)

    # Richardson over the two finest sizes (ratio from the actual list)
    r = (sizes[-2] / sizes[-1]) ** 2
    rich = (r * D[-1] - D[-2]) / (r - 1.0)
    errs = [float(np.linalg.norm(np.atleast_1d(d - rich))) for d in D]
    if errs[1] > 0 and errs[0] > 0:
        order = float(np.log(errs[0] / errs[1]) / np.log(sizes[0] / sizes[1]))
    else:
        order = 2.0   # differences vanished below rounding; quantity is linear in s
    return FDEstimate(value=rich, observed_order=order, raw=tuple(D))


# ---------------------------------------------------------------------------
# printed closed-form variants of delta R_lambda
# ---------------------------------------------------------------------------

def reeb_variation_variants(spec, h, x):
    """The three printed closed forms of delta R for alpha = h lambda.

    Returns a dict name -> vector:
      ``minus_pi``   -X_h^pi - h R
      ``minus_full`` -X_h   - h R
      ``plus_pi``    +X_h^pi - h R
    """
    C = x.coords[None, :]
    R = reeb_field_batch(spec, C)[0]
    lam_f, _, frames = spec.form_frame_batch(C)
    Xh = hamiltonian_field_batch(spec, h, C)[0]
    lam_Xh = float(lam_f[0] @ (frames[0].T @ Xh))
    Xh_pi = Xh - lam_Xh * R
    hx = float(h(C)[0])
    return {
        "minus_pi": -Xh_pi - hx * R,
        "minus_full": -Xh - hx * R,
        "plus_pi": Xh_pi - hx * R,
    }


def score_reeb_variation_variants(spec, h, points):
    """Score the printed variants against the FD oracle over sample points.

    Returns (winner name, mean absolute error per variant).
    """
    errors = {k: [] for k in ("minus_pi", "minus_full", "plus_pi")}
    for x in points:
        direction = PerturbationDirection("scaled_form", h=h)
        fd = finite_difference_oracle(spec, direction, "reeb", x)
        variants = reeb_variation_variants(spec, h, x)
        for k, v in variants.items():
            errors[k].append(float(np.max(np.abs(v - fd.value))))
    means = {k: float(np.mean(v)) for k, v in errors.items()}
    winner = min(means, key=means.get)
    return winner, means
