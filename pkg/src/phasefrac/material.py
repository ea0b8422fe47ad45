"""Constitutive laws: isotropic elasticity, degradation and the spectral split.

All tensor routines accept Voigt strains ``[..., 3] = [e_xx, e_yy, 2 e_xy]``
and return Voigt stresses ``[s_xx, s_yy, s_xy]``; tangents are ``[..., 3, 3]``
maps from Voigt strain to Voigt stress.  ``sym`` / ``voigt`` convert from and
to 2x2 tensors for single-point use.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np


class Variant(str, enum.Enum):
    FULL = "full"
    SPLIT = "split"


@dataclass(frozen=True)
class MaterialParams:
    """Material and solver-stabilization parameters (kN, mm)."""

    mu_s: float
    lambda_s: float
    G_c: float
    kappa: float
    eps: float
    gamma: float | None = None
    L_u: float = 0.0
    L_phi: float = 0.0
    variant: Variant = Variant.FULL

    def __post_init__(self):
        if self.mu_s <= 0 or self.lambda_s < 0:
            raise ValueError("need mu_s > 0 and lambda_s >= 0")
        if self.G_c <= 0 or self.eps <= 0:
            raise ValueError("need G_c > 0 and eps > 0")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("need 0 < kappa < 1")
        if self.L_u < 0 or self.L_phi < 0:
            raise ValueError("stabilization parameters must be >= 0")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def penalty(self) -> float:
        """Penalization parameter; defaults to ``1e4 * G_c / eps``."""
        return 1.0e4 * self.G_c / self.eps if self.gamma is None else self.gamma

    def with_(self, **changes) -> "MaterialParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class TensorBounds:
    lambda_min: float
    lambda_max: float


def degradation(phi, kappa):
    return (1.0 - kappa) * np.square(phi) + kappa


def positive_part(x):
    return np.maximum(x, 0.0)


def voigt(e):
    """2x2 symmetric strain tensor(s) -> Voigt strain."""
    e = np.asarray(e, dtype=float)
    return np.stack([e[..., 0, 0], e[..., 1, 1], e[..., 0, 1] + e[..., 1, 0]], axis=-1)


def sym(s):
    """Voigt stress -> 2x2 symmetric tensor."""
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape[:-1] + (2, 2))
    out[..., 0, 0] = s[..., 0]
    out[..., 1, 1] = s[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = s[..., 2]
    return out


def elasticity_matrix(mu, lam):
    return np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, mu]])


def full_stress(e, params: MaterialParams):
    """``2 mu e + lambda tr(e) I`` in Voigt form."""
    e = np.asarray(e, dtype=float)
    tr = e[..., 0] + e[..., 1]
    mu, lam = params.mu_s, params.lambda_s
    return np.stack([2 * mu * e[..., 0] + lam * tr, 2 * mu * e[..., 1] + lam * tr, mu * e[..., 2]], axis=-1)


def eig_sym2(e):
    """Closed-form eigen-decomposition of Voigt strains.

    Returns ``(l1, l2, c, s)`` with ``l1 >= l2`` and first eigenvector
    ``(c, s)``; the second one is ``(-s, c)``.
    """
    e = np.asarray(e, dtype=float)
    a, b, g = e[..., 0], e[..., 1], 0.5 * e[..., 2]
    m = 0.5 * (a + b)
    d = 0.5 * (a - b)
    r = np.hypot(d, g)
    theta = 0.5 * np.arctan2(g, d)
    return m + r, m - r, np.cos(theta), np.sin(theta)


def _projector_voigt(c, s):
    """``n n^T`` of ``n = (c, s)`` in Voigt stress layout."""
    return np.stack([c * c, s * s, c * s], axis=-1)


def tensile_strain(e):
    """``e+ = P Lambda+ P^T`` in Voigt stress layout (plain components)."""
    l1, l2, c, s = eig_sym2(e)
    v1 = _projector_voigt(c, s)
    v2 = _projector_voigt(-s, c)
    return positive_part(l1)[..., None] * v1 + positive_part(l2)[..., None] * v2


def spectral_split(e, params: MaterialParams):
    """Tensile / compressive stress pair ``(sigma+, sigma-)``."""
    e = np.asarray(e, dtype=float)
    ep = tensile_strain(e)
    tr = e[..., 0] + e[..., 1]
    trp = positive_part(tr)
    mu, lam = params.mu_s, params.lambda_s
    sp_ = 2 * mu * ep
    sp_[..., 0] += lam * trp
    sp_[..., 1] += lam * trp
    e_plain = np.stack([e[..., 0], e[..., 1], 0.5 * e[..., 2]], axis=-1)
    sm = 2 * mu * (e_plain - ep)
    sm[..., 0] += lam * (tr - trp)
    sm[..., 1] += lam * (tr - trp)
    return sp_, sm


def split_tangent(e, params: MaterialParams):
    """Consistent tangents ``(d sigma+/de, d sigma-/de)`` as Voigt 3x3 maps.

    The derivative of the positive part at zero is taken as 0, and at
    repeated eigenvalues the divided difference is replaced by its limit.
    """
    e = np.asarray(e, dtype=float)
    l1, l2, c, s = eig_sym2(e)
    v1 = _projector_voigt(c, s)
    v2 = _projector_voigt(-s, c)
    # w . eps_voigt = n1^T e n2
    w = np.stack([-c * s, s * c, 0.5 * (c * c - s * s)], axis=-1)
    h1 = (l1 > 0).astype(float)
    h2 = (l2 > 0).astype(float)
    gap = l1 - l2
    close = gap <= 1e-12 * np.maximum(1.0, np.abs(l1) + np.abs(l2))
    with np.errstate(invalid="ignore", divide="ignore"):
        dd = np.where(close, 0.5 * (h1 + h2), (positive_part(l1) - positive_part(l2)) / np.where(close, 1.0, gap))
    dep = (
        h1[..., None, None] * v1[..., :, None] * v1[..., None, :]
        + h2[..., None, None] * v2[..., :, None] * v2[..., None, :]
        + 2.0 * dd[..., None, None] * w[..., :, None] * w[..., None, :]
    )
    tr = e[..., 0] + e[..., 1]
    ht = (tr > 0).astype(float)
    m = np.array([1.0, 1.0, 0.0])
    mm = np.outer(m, m)
    Dp = 2 * params.mu_s * dep + params.lambda_s * ht[..., None, None] * mm
    D = elasticity_matrix(params.mu_s, params.lambda_s)
    return Dp, D - Dp


def driving_force(e, params: MaterialParams, variant: Variant | None = None):
    """Elastic energy density driving the phase field (kN/mm^2).

    Full: ``C e : e``; split: ``sigma+ : e``.
    """
    variant = Variant(variant or params.variant)
    e = np.asarray(e, dtype=float)
    if variant is Variant.FULL:
        s = full_stress(e, params)
    else:
        s = spectral_split(e, params)[0]
    return np.einsum("...i,...i->...", s, e)


def tensor_bounds(params: MaterialParams, dim: int = 2) -> TensorBounds:
    return TensorBounds(2 * params.mu_s, 2 * params.mu_s + dim * params.lambda_s)


def degraded_stress(e, g, params: MaterialParams, variant: Variant | None = None):
    """Constitutive stress of the chosen model for degradation values ``g``.

    Full: ``g sigma(e)``; split: ``g sigma+(e) + sigma-(e)``.
    """
    variant = Variant(variant or params.variant)
    g = np.asarray(g, dtype=float)[..., None]
    if variant is Variant.FULL:
        return g * full_stress(e, params)
    sp_, sm = spectral_split(e, params)
    return g * sp_ + sm
