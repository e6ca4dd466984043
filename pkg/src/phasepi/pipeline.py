"""End-to-end estimation of the proportion of nonzero means, plus the
p-value based median baseline used for comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erfc

from .cppls import McpConfig, fit_cppls
from .errors import ValidationError
from .ftm import PhaseConfig, empirical_phase
from .spectral import SymmetricSpectrum, build_pfa, choose_k, eigh_sym, validate_correlation

# kernel noise amplification exp(t^2 sigma^2 / 2) becomes large past this
_AMPLIFICATION_LIMIT = 3.0


@dataclass(frozen=True)
class EstimateResult:
    pi_tilde: float
    pi0_tilde: float
    k_used: int
    t_star: float
    gamma_m: float
    lambda_star: float
    cppls_converged: bool
    warnings: tuple = field(default_factory=tuple)

    @property
    def pi_tilde_clipped(self) -> float:
        """``pi_tilde`` restricted to ``[0, 1]``; the raw value stays canonical."""
        return min(1.0, max(0.0, self.pi_tilde))

    def as_dict(self) -> dict:
        return {
            "pi_tilde": self.pi_tilde,
            "pi0_tilde": self.pi0_tilde,
            "pi_tilde_clipped": self.pi_tilde_clipped,
            "k_used": self.k_used,
            "t_star": self.t_star,
            "gamma_m": self.gamma_m,
            "lambda_star": self.lambda_star,
            "cppls_converged": self.cppls_converged,
            "warnings": list(self.warnings),
        }


def estimate_pi(
    z,
    sigma,
    delta: float = 0.5,
    mcp_cfg: McpConfig = McpConfig(),
    phase_cfg: PhaseConfig = PhaseConfig(),
    spectrum: Optional[SymmetricSpectrum] = None,
) -> EstimateResult:
    """Estimate the proportion of nonzero entries of the mean of ``z``.

    Parameters
    ----------
    z : array_like, shape (m,)
        One observation of a Normal vector with unit variances.
    sigma : array_like, shape (m, m)
        Known correlation matrix of ``z``. May be ``None`` when ``spectrum``
        is given.
    delta : float
        Exponent controlling how many principal factors are removed.
    spectrum : SymmetricSpectrum, optional
        Precomputed decomposition of ``sigma``; skips the eigensolver when
        the same matrix is reused across many observations.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValidationError(f"z must be one-dimensional, got shape {z.shape}")
    m = z.shape[0]
    if m < 2:
        raise ValidationError(f"need at least 2 observations, got {m}")
    if spectrum is None:
        sigma = validate_correlation(sigma)
        if sigma.shape[0] != m:
            raise ValidationError(f"dimension mismatch: z has {m} entries, sigma is {sigma.shape[0]}x{sigma.shape[1]}")
        spectrum = eigh_sym(sigma)
    elif spectrum.m != m:
        raise ValidationError(f"dimension mismatch: z has {m} entries, spectrum has {spectrum.m}")

    k = choose_k(spectrum, delta)
    pfa = build_pfa(spectrum, k, delta)
    fit = fit_cppls(z, pfa, mcp_cfg)
    v_hat = z - fit.eta_hat
    t_star = phase_cfg.t_star(m)
    pi_tilde = empirical_phase(t_star, v_hat, pfa.minor_sd, phase_cfg)

    notes = list(fit.warnings)
    if t_star * float(np.max(pfa.minor_sd)) > _AMPLIFICATION_LIMIT:
        notes.append(
            f"t* x max minor sd = {t_star * np.max(pfa.minor_sd):.3g} > {_AMPLIFICATION_LIMIT}; kernel noise amplification is large"
        )
    return EstimateResult(
        pi_tilde=pi_tilde,
        pi0_tilde=1.0 - pi_tilde,
        k_used=k,
        t_star=t_star,
        gamma_m=pfa.gamma_m,
        lambda_star=fit.lambda_star,
        cppls_converged=fit.converged,
        warnings=tuple(notes),
    )


def z_to_pvalues(z) -> np.ndarray:
    """One-sided p-values ``1 - Phi(|z|)`` (so every entry lies in ``[0, 0.5]``)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValidationError("z has non-finite entries")
    # upper tail through erfc avoids the cancellation in 1 - Phi
    return 0.5 * erfc(np.abs(z) / math.sqrt(2.0))


def benjamini_pi0(p) -> float:
    """Median-based estimate ``(m - [m/2] + 1) / (m (1 - p_([m/2])))`` of the null proportion.

    Returns ``inf`` when the median order statistic equals 1.
    """
    p = np.sort(np.asarray(p, dtype=float).ravel())
    m = p.shape[0]
    if m < 2:
        raise ValidationError(f"need at least 2 p-values, got {m}")
    half = m // 2
    p_med = p[half - 1]
    if p_med >= 1.0:
        return math.inf
    return (m - half + 1) / (m * (1.0 - p_med))


def benjamini_pi(z) -> float:
    """Companion estimate of the nonzero proportion, ``1 - pi0`` from ``z``."""
    return 1.0 - benjamini_pi0(z_to_pvalues(z))
