"""Steering vectors and random channel realizations for the two-transceiver link.

All generators draw from an explicit :class:`numpy.random.Generator`; use
:func:`stream` to derive reproducible per-trial, per-purpose generators from a
single master seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

SPEED_OF_LIGHT = 3e8
TRANSCEIVERS = ("A", "B")


def stream(master: int, trial: int, purpose: str) -> np.random.Generator:
    """Generator for (trial, purpose), independent of evaluation order."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    seq = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(trial), tag])
    return np.random.default_rng(seq)


def crandn(rng: np.random.Generator, *shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def steering_vector(theta: float, M: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """ULA response ``a[m] = exp(j 2 pi (d/lambda) m sin(theta))``."""
    if M < 1:
        raise ValueError(f"array needs at least one antenna, got M={M}")
    if spacing_ratio <= 0:
        raise ValueError("spacing_ratio must be positive")
    m = np.arange(M)
    return np.exp(1j * 2 * np.pi * spacing_ratio * m * np.sin(theta))


def steering_derivative(theta: float, M: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """Analytic d a(theta) / d theta.

    Only quadratic forms ``a_dot^H Q a_dot`` of this vector enter any metric, and
    those do not depend on the overall sign convention.
    """
    m = np.arange(M)
    phase = 2 * np.pi * spacing_ratio * m
    return 1j * phase * np.cos(theta) * steering_vector(theta, M, spacing_ratio)


def power_delay_profile(L: int, decay: float = np.exp(-1.0)) -> np.ndarray:
    """Exponential profile ``sigma_l^2 ~ decay**l`` normalised to unit sum."""
    if L < 1:
        raise ValueError("need at least one tap")
    if decay <= 0:
        raise ValueError("decay must be positive")
    p = decay ** np.arange(L, dtype=float)
    return p / p.sum()


def modified_rician_factor(beta0: float, pdp) -> float:
    """LOS-to-total-NLOS power ratio of a multi-tap channel whose first tap is Rician."""
    pdp = np.asarray(pdp, dtype=float)
    if beta0 < 0:
        raise ValueError("beta0 must be nonnegative")
    if np.isinf(beta0):
        tail = pdp[1:].sum()
        return np.inf if tail == 0 else pdp[0] / tail
    return beta0 * pdp[0] / ((beta0 + 1) * pdp[1:].sum() + pdp[0])


def first_tap_factor(beta: float, pdp, upper: float = 1e12) -> float:
    """Invert :func:`modified_rician_factor` for the first-tap factor beta0.

    Raises ``ValueError`` if ``beta`` is not reachable with this profile (the
    modified factor saturates at ``sigma_0^2 / sum_{l>=1} sigma_l^2``).
    """
    pdp = np.asarray(pdp, dtype=float)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0:
        return 0.0
    ceiling = modified_rician_factor(upper, pdp)
    if beta >= ceiling:
        raise ValueError(f"beta={beta} unreachable; this profile saturates at {ceiling:.6g}")
    return brentq(lambda b0: modified_rician_factor(b0, pdp) - beta, 0.0, upper,
                  xtol=1e-14, rtol=1e-15, maxiter=500)


@dataclass
class NarrowbandChannels:
    """Flat-fading channels of both transceivers (index 0 = A, 1 = B).

    ``h[k]`` is the communication channel *from* transceiver k to the other one,
    ``g[k]`` the self-interference channel at transceiver k.
    """

    h: np.ndarray  # (2, M)
    g: np.ndarray  # (2, M)
    theta: np.ndarray  # (2,) radians
    alpha: np.ndarray  # (2,) complex
    nu: np.ndarray  # (2,) Hz
    spacing_ratio: float = 0.5

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        self.g = np.atleast_2d(np.asarray(self.g, dtype=complex))
        self.theta = np.asarray(self.theta, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=complex)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.h.shape != self.g.shape or self.h.shape[0] != 2:
            raise ValueError("h and g must both have shape (2, M)")

    @property
    def M(self) -> int:
        return self.h.shape[1]

    @property
    def L(self) -> int:
        return 1

    def h_taps(self, k: int) -> np.ndarray:
        return self.h[k][None, :]

    def g_taps(self, k: int) -> np.ndarray:
        return self.g[k][None, :]


@dataclass
class WidebandChannels:
    """Multi-tap channels. ``h[k, l]`` is tap l of the channel from transceiver k."""

    h: np.ndarray  # (2, L, M)
    g: np.ndarray  # (2, L_tilde, M)
    pdp: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray
    tau_si: int = 0
    spacing_ratio: float = 0.5

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        self.g = np.asarray(self.g, dtype=complex)
        self.pdp = np.asarray(self.pdp, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=complex)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.h.ndim != 3 or self.h.shape[0] != 2:
            raise ValueError("h must have shape (2, L, M)")
        if self.L > self.M:
            raise ValueError(f"zero-forcing needs L <= M, got L={self.L}, M={self.M}")
        if abs(self.pdp.sum() - 1.0) > 1e-12 or np.any(self.pdp < 0):
            raise ValueError("power delay profile must be nonnegative and sum to 1")

    @property
    def M(self) -> int:
        return self.h.shape[2]

    @property
    def L(self) -> int:
        return self.h.shape[1]

    def h_taps(self, k: int) -> np.ndarray:
        return self.h[k]

    def g_taps(self, k: int) -> np.ndarray:
        return self.g[k]


@dataclass
class ChannelParams:
    """Inputs of the channel samplers (linear units, radians)."""

    M: int = 4
    theta: tuple = (0.0, 0.0)
    beta: float = 1.0
    spacing_ratio: float = 0.5
    velocity: float = 10.0
    carrier: float = 3e9
    L: int = 1
    L_tilde: int = 1
    pdp_decay: float = float(np.exp(-1.0))
    beta0: float | None = None
    tau_si: int = 0
    alpha_policy: str = "unit"

    @property
    def doppler(self) -> float:
        return 2 * self.velocity / (SPEED_OF_LIGHT / self.carrier)


def _alpha(params: ChannelParams, rng) -> np.ndarray:
    if params.alpha_policy == "unit":
        return np.ones(2, dtype=complex)
    if params.alpha_policy == "swerling2":
        return crandn(rng, 2)
    raise ValueError(f"unknown alpha policy {params.alpha_policy!r}")


def sample_narrowband(params: ChannelParams, rng: np.random.Generator) -> NarrowbandChannels:
    """Rician communication channels, Rayleigh SI channels."""
    beta = params.beta
    if beta < 0:
        raise ValueError("Rician factor must be nonnegative")
    M = params.M
    theta = np.asarray(params.theta, dtype=float)
    h_nlos = crandn(rng, 2, M)
    g = crandn(rng, 2, M)
    los = np.stack([steering_vector(t, M, params.spacing_ratio) for t in theta])
    if np.isinf(beta):
        h = los.copy()
    else:
        h = np.sqrt(beta / (beta + 1)) * los + np.sqrt(1 / (beta + 1)) * h_nlos
    return NarrowbandChannels(h=h, g=g, theta=theta, alpha=_alpha(params, rng),
                              nu=np.full(2, params.doppler),
                              spacing_ratio=params.spacing_ratio)


def sample_wideband(params: ChannelParams, rng: np.random.Generator) -> WidebandChannels:
    """Multi-tap channels: Rician first tap, Rayleigh remaining taps and SI taps.

    ``params.beta0`` is the first-tap Rician factor; if it is ``None`` it is
    solved from the modified factor ``params.beta``.
    """
    M, L, Lt = params.M, params.L, params.L_tilde
    if L > M:
        raise ValueError(f"zero-forcing needs L <= M, got L={L}, M={M}")
    pdp = power_delay_profile(L, params.pdp_decay)
    pdp_si = power_delay_profile(Lt, params.pdp_decay)
    beta0 = params.beta0 if params.beta0 is not None else (
        np.inf if np.isinf(params.beta) and L == 1 else first_tap_factor(params.beta, pdp))
    theta = np.asarray(params.theta, dtype=float)
    h = crandn(rng, 2, L, M) * np.sqrt(pdp)[None, :, None]
    g = crandn(rng, 2, Lt, M) * np.sqrt(pdp_si)[None, :, None]
    for k in range(2):
        a = steering_vector(theta[k], M, params.spacing_ratio)
        if np.isinf(beta0):
            h[k, 0] = np.sqrt(pdp[0]) * a
        else:
            h[k, 0] = (np.sqrt(beta0 / (beta0 + 1)) * np.sqrt(pdp[0]) * a
                       + np.sqrt(1 / (beta0 + 1)) * h[k, 0])
    return WidebandChannels(h=h, g=g, pdp=pdp, theta=theta, alpha=_alpha(params, rng),
                            nu=np.full(2, params.doppler), tau_si=params.tau_si,
                            spacing_ratio=params.spacing_ratio)
