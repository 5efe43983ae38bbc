"""Closed-form communication and sensing metrics of a transmit design.

Index conventions used throughout the package: transceiver ``k`` in {0, 1}
(A, B), interval ``i`` in {0, 1} (first / second half of the CPI or PRI), tap
``l`` in ``range(L)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import steering_derivative, steering_vector

MODES = ("full", "half")
BANDS = ("narrow", "wide")

# Which transmit interval of the peer feeds the communication signal received in
# interval i.  Narrowband reception is simultaneous; with DAM the first half of a
# PRI carries the peer's second-half symbols from the previous PRI and vice versa.
SOURCE_INTERVAL = {"narrow": (0, 1), "wide": (1, 0)}

# Transmit slots that are forced silent in half-duplex operation.
HALF_DUPLEX_SILENT = {"narrow": ((0, 1), (1, 0)), "wide": ((0, 1), (1, 1))}

ZF_TOL = 1e-8


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LinkBudget:
    """Linear-scale SNRs/INR and the half-CPI sample count N."""

    rho_c: float
    rho_s: float
    eta: float
    rho_si: float
    N: int

    def __post_init__(self):
        for name in ("rho_c", "rho_s", "eta", "rho_si"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")

    @classmethod
    def from_db(cls, rho_c_db=15.0, rho_s_db=7.0, eta_db=50.0, rho_si_db=-80.0, N=50):
        return cls(float(db2lin(rho_c_db)), float(db2lin(rho_s_db)), float(db2lin(eta_db)),
                   float(db2lin(rho_si_db)), int(N))


@dataclass
class TransmitDesign:
    """Beamformers and covariances of both transceivers in both intervals.

    ``beams[k, i, l]`` is the beam of tap l (narrowband: L = 1), ``Q[k, i]`` the
    total transmit covariance and ``R[k, i]`` the dedicated-sensing covariance.
    """

    mode: str
    band: str
    beams: np.ndarray  # (2, 2, L, M) complex
    Q: np.ndarray  # (2, 2, M, M) complex Hermitian
    R: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.band not in BANDS:
            raise ValueError(f"band must be one of {BANDS}")
        self.beams = np.asarray(self.beams, dtype=complex)
        self.Q = np.asarray(self.Q, dtype=complex)
        if self.beams.ndim == 3:
            self.beams = self.beams[:, :, None, :]
        if self.R is None:
            self.R = self.Q - beam_outer(self.beams)
        self.R = np.asarray(self.R, dtype=complex)

    @property
    def M(self) -> int:
        return self.Q.shape[-1]

    @property
    def L(self) -> int:
        return self.beams.shape[2]

    def comm_power(self) -> np.ndarray:
        """(2, 2) array of sum_l ||w_{k,i,l}||^2."""
        return np.sum(np.abs(self.beams) ** 2, axis=(2, 3))

    def sensing_power(self) -> np.ndarray:
        return np.real(np.trace(self.R, axis1=-2, axis2=-1))

    def total_power(self) -> np.ndarray:
        """Per-transceiver power summed over both intervals."""
        return np.real(np.trace(self.Q, axis1=-2, axis2=-1)).sum(axis=1)

    def check(self, tol: float = 1e-8) -> list[str]:
        """Return a list of violated invariants (empty if the design is valid)."""
        problems = []
        for k in range(2):
            for i in range(2):
                Q = self.Q[k, i]
                if np.max(np.abs(Q - Q.conj().T)) > tol:
                    problems.append(f"Q[{k},{i}] not Hermitian")
                if np.linalg.eigvalsh(0.5 * (Q + Q.conj().T)).min() < -tol:
                    problems.append(f"Q[{k},{i}] not PSD")
                R = 0.5 * (self.R[k, i] + self.R[k, i].conj().T)
                if np.linalg.eigvalsh(R).min() < -tol:
                    problems.append(f"R[{k},{i}] not PSD")
        for k, p in enumerate(self.total_power()):
            if p > 2 + tol:
                problems.append(f"power of transceiver {k} is {p:.12g} > 2")
        if self.mode == "full":
            for k in range(2):
                if np.max(np.abs(self.Q[k, 0] - self.Q[k, 1])) > tol:
                    problems.append(f"full-duplex tie Q[{k},0] = Q[{k},1] violated")
        else:
            for k, i in HALF_DUPLEX_SILENT[self.band]:
                if np.any(self.Q[k, i] != 0):
                    problems.append(f"half-duplex slot Q[{k},{i}] not zero")
        return problems


def beam_outer(beams: np.ndarray) -> np.ndarray:
    """sum_l w_l w_l^H over the tap axis; beams shape (..., L, M)."""
    return np.einsum("...lm,...ln->...mn", beams, beams.conj())


def residual_si_power(Q, g_taps, eta: float) -> float:
    """eta * sum_l g_l^H Q g_l for one transmit covariance."""
    g_taps = np.atleast_2d(np.asarray(g_taps, dtype=complex))
    Q = np.asarray(Q, dtype=complex)
    value = eta * float(np.real(np.einsum("lm,mn,ln->", g_taps.conj(), Q, g_taps)))
    if value < -1e-10:
        raise ValueError(f"negative residual-SI power {value:.3e}: Q is not PSD")
    return max(value, 0.0)


def _quad(v, Q) -> float:
    return float(np.real(v.conj() @ Q @ v))


def interference_plus_noise(design: TransmitDesign, channels, budget: LinkBudget, k: int,
                            i: int) -> float:
    """Echo interference + residual SI + unit noise seen by transceiver k in interval i."""
    a = steering_vector(channels.theta[k], channels.M, channels.spacing_ratio)
    Q = design.Q[k, i]
    phi = residual_si_power(Q, channels.g_taps(k), budget.eta)
    return budget.rho_s * _quad(a, Q) + budget.rho_si * phi + 1.0


def _effective_gain(design: TransmitDesign, channels, k: int, i: int) -> complex:
    kp = 1 - k
    src = SOURCE_INTERVAL[design.band][i]
    h = channels.h_taps(kp)
    return complex(np.sum(np.einsum("lm,lm->l", h.conj(), design.beams[kp, src])))


def sinr_narrowband(design: TransmitDesign, channels, budget: LinkBudget, k: int, i: int) -> float:
    """SINR of transceiver k in interval i with the peer's beam of the same interval."""
    if design.band != "narrow":
        raise ValueError("sinr_narrowband needs a narrowband design")
    s = _effective_gain(design, channels, k, i)
    return budget.rho_c * abs(s) ** 2 / interference_plus_noise(design, channels, budget, k, i)


def zf_residual(design: TransmitDesign, channels) -> float:
    """max |h_{k,l}^H w_{k,i,l'}| over l != l' (0 for single-tap designs)."""
    L = design.L
    worst = 0.0
    for k in range(2):
        h = channels.h_taps(k)
        for i in range(2):
            cross = h.conj() @ design.beams[k, i].T  # (l, l')
            if L > 1:
                off = cross[~np.eye(L, dtype=bool)]
                worst = max(worst, float(np.max(np.abs(off))))
    return worst


def sinr_wideband(design: TransmitDesign, channels, budget: LinkBudget, k: int, i: int,
                  zf_tol: float = ZF_TOL) -> float:
    """DAM SINR; valid only for designs that zero-force inter-symbol interference."""
    if design.band != "wide":
        raise ValueError("sinr_wideband needs a wideband design")
    res = zf_residual(design, channels)
    if res > zf_tol:
        raise ValueError(f"zero-forcing residual {res:.3e} exceeds {zf_tol:.0e}; "
                         "closed-form SINR does not apply")
    s = _effective_gain(design, channels, k, i)
    return budget.rho_c * abs(s) ** 2 / interference_plus_noise(design, channels, budget, k, i)


def sinr(design, channels, budget, k, i) -> float:
    fn = sinr_narrowband if design.band == "narrow" else sinr_wideband
    return fn(design, channels, budget, k, i)


def rate(gammas) -> float:
    """Average rate 0.5 * sum_i log2(1 + gamma_i) in bits/s/Hz."""
    gammas = np.asarray(gammas, dtype=float)
    if np.any(gammas < 0):
        raise ValueError("SINR must be nonnegative")
    return 0.5 * float(np.sum(np.log2(1.0 + gammas)))


def sensing_information(design: TransmitDesign, channels, budget: LinkBudget, k: int) -> float:
    """sum_i |alpha|^2 a_dot^H Q a_dot / (rho_SI Phi + 1), the per-sample Fisher weight."""
    adot = steering_derivative(channels.theta[k], channels.M, channels.spacing_ratio)
    total = 0.0
    for i in range(2):
        Q = design.Q[k, i]
        phi = residual_si_power(Q, channels.g_taps(k), budget.eta)
        total += abs(channels.alpha[k]) ** 2 * _quad(adot, Q) / (budget.rho_si * phi + 1.0)
    return total


def crb(design: TransmitDesign, channels, budget: LinkBudget, k: int) -> float:
    """CRB (rad^2) on the direction of the peer; ``inf`` if no echo carries information."""
    info = sensing_information(design, channels, budget, k)
    if info <= 0.0:
        return np.inf
    return 1.0 / (2.0 * budget.rho_s * budget.N * info)


def root_crb_deg(c: float) -> float:
    return float(np.degrees(np.sqrt(c)))


def evaluate(design: TransmitDesign, channels, budget: LinkBudget) -> dict:
    """Per-link SINRs, per-transceiver rates/CRBs and their sums."""
    gam = np.array([[sinr(design, channels, budget, k, i) for i in range(2)] for k in range(2)])
    rates = np.array([rate(gam[k]) for k in range(2)])
    crbs = np.array([crb(design, channels, budget, k) for k in range(2)])
    return {"sinr": gam, "rate": rates, "crb": crbs, "R": float(rates.sum()),
            "C": float(crbs.sum())}


def weighted_objective(R: float, C: float, weight: float, mu: float) -> float:
    """w R - (1 - w) mu C, with the CRB term dropped entirely when w == 1."""
    if weight == 1.0:
        return float(R)
    return float(weight * R - (1.0 - weight) * mu * C)
