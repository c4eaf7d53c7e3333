"""Hyperelastic energy densities, Kirchhoff stress, and plastic return maps.

All functions are batched over leading dimensions of F (..., 3, 3).
Plastic projections run in Hencky (log singular value) space: von Mises
shrinks the deviatoric strain radially onto the yield surface,
Drucker-Prager follows the Klar et al. sand cases (elastic / cone
projection / tip projection for expansive trials).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ELASTIC_KINDS = ("fixed_corotated", "neo_hookean", "stvk")
PLASTIC_KINDS = ("none", "von_mises", "drucker_prager")

# Singular-value floor used when recovering from inverted elements.
SVD_CLAMP_FLOOR = 0.05


@dataclass(frozen=True)
class ConstitutiveModel:
    elasticity: str = "fixed_corotated"
    youngs_modulus: float = 1e5
    poisson_ratio: float = 0.3
    density: float = 1000.0
    plasticity: str = "none"
    yield_stress: float = 0.0       # von Mises, Pa
    friction_angle: float = 30.0    # Drucker-Prager, degrees
    cohesion: float = 0.0           # Drucker-Prager, Pa

    def __post_init__(self):
        if self.elasticity not in ELASTIC_KINDS:
            raise ValueError(f"unknown elasticity {self.elasticity!r}")
        if self.plasticity not in PLASTIC_KINDS:
            raise ValueError(f"unknown plasticity {self.plasticity!r}")
        if self.youngs_modulus <= 0.0:
            raise ValueError("youngs_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")
        if self.density <= 0.0:
            raise ValueError("density must be positive")
        if self.plasticity == "von_mises" and self.yield_stress <= 0.0:
            raise ValueError("von Mises plasticity needs a positive yield_stress")
        if self.plasticity == "drucker_prager" and not 0.0 < self.friction_angle < 90.0:
            raise ValueError("friction_angle must lie in (0, 90) degrees")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        e, nu = self.youngs_modulus, self.poisson_ratio
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def wave_speed(self) -> float:
        """Longitudinal elastic wave speed sqrt((lambda + 2 mu) / rho)."""
        return np.sqrt((self.lam + 2.0 * self.mu) / self.density)

    def friction_alpha(self) -> float:
        """Drucker-Prager cone slope from the friction angle."""
        sin_phi = np.sin(np.radians(self.friction_angle))
        return np.sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi)


# Named presets; values are working defaults, override per scene.
_PRESETS = {
    "elastic": ConstitutiveModel(),
    "rigid": ConstitutiveModel(youngs_modulus=1e8, poisson_ratio=0.4),
    "plasticine": ConstitutiveModel(elasticity="stvk", plasticity="von_mises",
                                    yield_stress=5e3),
    "sand": ConstitutiveModel(elasticity="stvk", plasticity="drucker_prager",
                              friction_angle=30.0, cohesion=0.0),
    # zero-cohesion Drucker-Prager: separated material never re-bonds
    "fracture": ConstitutiveModel(elasticity="stvk", plasticity="drucker_prager",
                                  friction_angle=40.0, cohesion=0.0),
}


def make_preset(name: str, **overrides) -> ConstitutiveModel:
    if name not in _PRESETS:
        raise ValueError(f"unknown material preset {name!r}; "
                         f"choose from {sorted(_PRESETS)}")
    return replace(_PRESETS[name], **overrides) if overrides else _PRESETS[name]


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


def _svd(f):
    u, s, vt = np.linalg.svd(f)
    return u, s, vt


def _signed_svd(f):
    """SVD with det(U) = det(V) = +1; the last singular value carries the sign."""
    f = np.asarray(f, dtype=np.float64)
    batch = f.shape[:-2]
    u, s, vt = np.linalg.svd(f.reshape(-1, 3, 3))
    u, s, vt = u.copy(), s.copy(), vt.copy()
    neg_u = np.linalg.det(u) < 0.0
    u[neg_u, :, 2] *= -1.0
    s[neg_u, 2] *= -1.0
    neg_v = np.linalg.det(vt) < 0.0
    vt[neg_v, 2, :] *= -1.0
    s[neg_v, 2] *= -1.0
    return (u.reshape(batch + (3, 3)), s.reshape(batch + (3,)),
            vt.reshape(batch + (3, 3)))


def clamp_deformation(f, floor: float = SVD_CLAMP_FLOOR):
    """Rebuild F with singular values floored at ``floor`` (inversion recovery)."""
    u, s, vt = _signed_svd(f)
    s = np.maximum(s, floor)
    return u @ (s[..., None] * vt)


def _apply_inversion_policy(f, model):
    det = np.linalg.det(f)
    if np.all(det > 0.0):
        return f
    if model.elasticity == "neo_hookean":
        idx = int(np.argmax(det.reshape(-1) <= 0.0))
        raise ValueError(f"neo-Hookean stress undefined for det(F) <= 0 "
                         f"(element {idx}, det {det.reshape(-1)[idx]:.3e})")
    batch = f.shape[:-2]
    flat = np.asarray(f, dtype=np.float64).reshape(-1, 3, 3).copy()
    bad = np.linalg.det(flat) <= 0.0
    flat[bad] = clamp_deformation(flat[bad])
    return flat.reshape(batch + (3, 3))


def energy_density(f, model: ConstitutiveModel):
    """Strain energy per unit rest volume, batched (...,)."""
    f = np.asarray(f, dtype=np.float64)
    mu, lam = model.mu, model.lam
    if model.elasticity == "fixed_corotated":
        _, s, _ = _svd(f)
        j = np.linalg.det(f)
        return mu * ((s - 1.0) ** 2).sum(-1) + 0.5 * lam * (j - 1.0) ** 2
    if model.elasticity == "neo_hookean":
        j = np.linalg.det(f)
        if np.any(j <= 0.0):
            raise ValueError("neo-Hookean energy undefined for det(F) <= 0")
        trc = np.einsum("...ij,...ij->...", f, f)
        logj = np.log(j)
        return 0.5 * mu * (trc - 3.0) - mu * logj + 0.5 * lam * logj ** 2
    # stvk on Hencky strain
    _, s, _ = _svd(f)
    if np.any(s <= 0.0):
        raise ValueError("Hencky energy undefined for singular F")
    eps = np.log(s)
    return mu * (eps ** 2).sum(-1) + 0.5 * lam * eps.sum(-1) ** 2


def dpsi_dF(f, model: ConstitutiveModel):
    """First Piola-Kirchhoff stress dPsi/dF, batched (..., 3, 3)."""
    f = np.asarray(f, dtype=np.float64)
    mu, lam = model.mu, model.lam
    if model.elasticity == "fixed_corotated":
        u, s, vt = _svd(f)
        r = u @ vt
        j = np.linalg.det(f)
        f_inv_t = np.linalg.inv(f).swapaxes(-1, -2)
        return 2.0 * mu * (f - r) + (lam * j * (j - 1.0))[..., None, None] * f_inv_t
    if model.elasticity == "neo_hookean":
        j = np.linalg.det(f)
        if np.any(j <= 0.0):
            raise ValueError("neo-Hookean stress undefined for det(F) <= 0")
        f_inv_t = np.linalg.inv(f).swapaxes(-1, -2)
        return mu * (f - f_inv_t) + (lam * np.log(j))[..., None, None] * f_inv_t
    u, s, vt = _svd(f)
    eps = np.log(s)
    coef = (2.0 * mu * eps + lam * eps.sum(-1, keepdims=True)) / s
    return u @ (coef[..., None] * vt)


def stress_kirchhoff(f, model: ConstitutiveModel):
    """Kirchhoff stress tau = dPsi/dF F^T with the inversion policy applied.

    Inverted elements (det F <= 0) are rebuilt with clamped singular values
    for fixed-corotated/stvk and raise for neo-Hookean.
    """
    f = _apply_inversion_policy(np.asarray(f, dtype=np.float64), model)
    return dpsi_dF(f, model) @ f.swapaxes(-1, -2)


def return_map(f_trial, model: ConstitutiveModel):
    """Project trial elastic deformations onto the feasible set.

    Returns (F_elastic, dgamma) where dgamma is the plastic flow magnitude
    of this projection (0 where the trial was already feasible). The
    elastic branch returns the trial array unchanged (bit-exact).
    """
    f_in = np.asarray(f_trial, dtype=np.float64)
    batch = f_in.shape[:-2]
    if model.plasticity == "none":
        return f_in, np.zeros(batch, dtype=np.float64)
    f_trial = f_in.reshape(-1, 3, 3)
    dgamma = np.zeros(f_trial.shape[0], dtype=np.float64)
    f = f_trial
    det = np.linalg.det(f)
    if np.any(det <= 0.0):
        f = f.copy()
        f[det <= 0.0] = clamp_deformation(f[det <= 0.0])
    u, s, vt = _svd(f)
    eps = np.log(s)
    trace = eps.sum(-1)
    dev = eps - trace[..., None] / 3.0
    dev_norm = np.linalg.norm(dev, axis=-1)
    mu, lam = model.mu, model.lam

    if model.plasticity == "von_mises":
        threshold = np.sqrt(2.0 / 3.0) * model.yield_stress / (2.0 * mu)
        dg = dev_norm - threshold
        plastic = dg > 0.0
        if not plastic.any():
            return f_in, dgamma.reshape(batch)
        scale = np.where(plastic & (dev_norm > 0.0), dg / np.maximum(dev_norm, 1e-300), 0.0)
        eps_new = eps - scale[..., None] * dev
        out = f_trial.copy()
        out[plastic] = (u @ (np.exp(eps_new)[..., None] * vt))[plastic]
        dgamma[plastic] = dg[plastic]
        return out.reshape(f_in.shape), dgamma.reshape(batch)

    # Drucker-Prager, cohesionless cone shifted by cohesion/(2 mu)
    alpha = model.friction_alpha()
    shift = model.cohesion / (2.0 * mu)
    dg = dev_norm + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * trace - shift
    elastic = dg <= 0.0
    if elastic.all():
        return f_in, dgamma.reshape(batch)
    tip = (~elastic) & (trace > 0.0)
    cone = (~elastic) & (~tip)
    out = f_trial.copy()
    if tip.any():
        # expansive trial: no strain survives, F collapses to the rotation U V^T
        out[tip] = (u @ vt)[tip]
        dgamma[tip] = np.linalg.norm(eps, axis=-1)[tip]
    if cone.any():
        scale = dg / np.maximum(dev_norm, 1e-300)
        eps_new = eps - scale[..., None] * dev
        out[cone] = (u @ (np.exp(eps_new)[..., None] * vt))[cone]
        dgamma[cone] = dg[cone]
    return out.reshape(f_in.shape), dgamma.reshape(batch)


def yield_value(f, model: ConstitutiveModel):
    """Signed feasibility measure in Hencky-strain space; feasible iff <= 0.

    Dimensionless so tolerances are scale-free: von Mises compares the
    deviatoric strain norm against sqrt(2/3) sigma_Y / (2 mu); the
    Drucker-Prager value is the cone excess used by the return map.
    """
    f = np.asarray(f, dtype=np.float64)
    if model.plasticity == "none":
        return np.zeros(f.shape[:-2], dtype=np.float64)
    _, s, _ = _svd(f)
    eps = np.log(np.maximum(s, 1e-300))
    trace = eps.sum(-1)
    dev = eps - trace[..., None] / 3.0
    dev_norm = np.linalg.norm(dev, axis=-1)
    mu, lam = model.mu, model.lam
    if model.plasticity == "von_mises":
        return dev_norm - np.sqrt(2.0 / 3.0) * model.yield_stress / (2.0 * mu)
    alpha = model.friction_alpha()
    return dev_norm + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * trace \
        - model.cohesion / (2.0 * mu)
