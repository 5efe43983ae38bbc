"""Brute-force references for the closed-form metrics and the optimiser.

Everything here is deliberately naive: dense covariance matrices, explicit
symbol streams and random sampling.  The functions are meant for validation at
small sizes and share no algebra with :mod:`isacsim.metrics` beyond the channel
objects themselves.
"""

from __future__ import annotations

import numpy as np

from .channel import crandn, steering_vector
from .metrics import HALF_DUPLEX_SILENT, SOURCE_INTERVAL, LinkBudget, TransmitDesign

DEFAULT_TS = 1e-5


def printed_derivative(theta: float, M: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """Steering derivative with the opposite phase convention (-j instead of +j)."""
    m = np.arange(M)
    return -1j * 2 * np.pi * spacing_ratio * m * np.cos(theta) * steering_vector(
        theta, M, spacing_ratio)


def numeric_derivative(theta: float, M: int, spacing_ratio: float = 0.5, step: float = 1e-6):
    return (steering_vector(theta + step, M, spacing_ratio)
            - steering_vector(theta - step, M, spacing_ratio)) / (2 * step)


def _derivative(kind, theta, M, spacing_ratio):
    if kind == "printed":
        return printed_derivative(theta, M, spacing_ratio)
    if kind == "numeric":
        return numeric_derivative(theta, M, spacing_ratio)
    raise ValueError(f"unknown derivative kind {kind!r}")


def _noise_levels(design, channels, budget, k):
    """Per-interval residual-SI-plus-noise variance computed sample by sample."""
    out = []
    for i in range(2):
        g = channels.g_taps(k)
        Q = design.Q[k, i]
        phi = budget.eta * sum(float(np.real(gl.conj() @ Q @ gl)) for gl in g)
        out.append(budget.rho_si * phi + 1.0)
    return out


def _fisher_trace(Rx, noise, adot, alpha, rho_s, doppler):
    """2 |alpha|^2 rho_s Re tr((I (x) a_dot) Rz^-1 (I (x) a_dot^H) D Rx D^H)."""
    n = len(noise)
    M = adot.size
    A = np.kron(np.eye(n), adot.conj()[None, :])  # (n, nM)
    D = np.kron(np.diag(doppler), np.eye(M))
    Rz_inv = np.diag(1.0 / np.asarray(noise))
    mat = A.conj().T @ Rz_inv @ A @ D @ Rx @ D.conj().T
    return 2.0 * abs(alpha) ** 2 * rho_s * float(np.real(np.trace(mat)))


def fim_oracle_narrowband(design: TransmitDesign, channels, budget: LinkBudget, k: int,
                          N_small: int, ts: float = DEFAULT_TS, derivative: str = "printed"):
    """Fisher information on theta_k from a dense 2N-sample model (N = ``N_small``)."""
    if N_small > 16:
        raise ValueError("dense oracle is limited to N_small <= 16")
    M = design.M
    adot = _derivative(derivative, channels.theta[k], M, channels.spacing_ratio)
    blocks = [design.Q[k, 0]] * N_small + [design.Q[k, 1]] * N_small
    Rx = np.zeros((2 * N_small * M, 2 * N_small * M), dtype=complex)
    for n, Q in enumerate(blocks):
        Rx[n * M:(n + 1) * M, n * M:(n + 1) * M] = Q
    s1, s2 = _noise_levels(design, channels, budget, k)
    noise = [s1] * N_small + [s2] * N_small
    doppler = np.exp(1j * 2 * np.pi * channels.nu[k] * ts * np.arange(2 * N_small))
    return _fisher_trace(Rx, noise, adot, channels.alpha[k], budget.rho_s, doppler)


def dam_covariance(design: TransmitDesign, k: int, U: int, N0: int):
    """Covariance of the DAM transmit stream of transceiver k over U PRIs.

    Within each half-PRI the stream is ``x[n] = sum_l w_l s[n - kappa_l] + r[n]``
    with i.i.d. unit symbols, ``kappa_l = L - 1 - l`` (zero-based taps) and white
    dedicated-sensing samples of covariance R.  PRIs are independent with
    identical statistics.  Returns ``(auto, cross)`` parts of the dense matrix.
    """
    if N0 % 2:
        raise ValueError("N0 must be even")
    M, L = design.M, design.L
    half = N0 // 2
    n_tot = U * N0
    auto = np.zeros((n_tot * M, n_tot * M), dtype=complex)
    cross = np.zeros_like(auto)
    kappa = [L - 1 - l for l in range(L)]
    for u in range(U):
        for i in range(2):
            W = design.beams[k, i]
            R = design.R[k, i]
            base = u * N0 + i * half
            for a in range(half):
                for b in range(half):
                    blk = np.zeros((M, M), dtype=complex)
                    for l in range(L):
                        for lp in range(L):
                            if a - kappa[l] == b - kappa[lp]:
                                blk += np.outer(W[l], W[lp].conj())
                    if a == b:
                        blk = blk + R
                    ra, rb = (base + a) * M, (base + b) * M
                    (auto if a == b else cross)[ra:ra + M, rb:rb + M] = blk
    return auto, cross


def fim_oracle_wideband(design: TransmitDesign, channels, budget: LinkBudget, k: int,
                        U_small: int, N0: int, ts: float = DEFAULT_TS,
                        derivative: str = "printed"):
    """Dense wideband Fisher information and the contribution of the cross terms.

    Returns ``(J, cross)`` where ``J`` uses the full covariance and ``cross`` is
    the part contributed by the off-diagonal (inter-sample) blocks alone.
    """
    if U_small * N0 > 32:
        raise ValueError("dense oracle is limited to U_small * N0 <= 32 samples")
    auto, cross = dam_covariance(design, k, U_small, N0)
    M = design.M
    adot = _derivative(derivative, channels.theta[k], M, channels.spacing_ratio)
    s1, s2 = _noise_levels(design, channels, budget, k)
    half = N0 // 2
    noise = ([s1] * half + [s2] * half) * U_small
    doppler = np.exp(1j * 2 * np.pi * channels.nu[k] * ts * np.arange(U_small * N0))
    alpha = channels.alpha[k]
    J = _fisher_trace(auto + cross, noise, adot, alpha, budget.rho_s, doppler)
    J_cross = _fisher_trace(cross, noise, adot, alpha, budget.rho_s, doppler)
    return J, J_cross


# ------------------------------------------------------------- symbol level
def empirical_sinr(design: TransmitDesign, channels, budget: LinkBudget, k: int, i: int,
                   n_symbols: int, rng: np.random.Generator, ts: float = DEFAULT_TS,
                   estimator: str = "tracked") -> float:
    """SINR of link (k, i) estimated from a simulated symbol stream.

    The peer's data symbols are known to the estimator, its dedicated sensing
    samples are pseudo-random and removed before detection, the own echo stays
    as interference and the residual self-interference is Gaussian.  A
    least-squares gain ``g_hat`` is fitted against the aligned data symbol.

    ``estimator="tracked"`` fits the gain on the peer-signal component alone
    and counts its misfit (inter-symbol leakage) as interference, so the
    estimate does not degrade at low SINR.  ``"blind"`` fits the gain on the
    full received stream; its relative error is about ``sqrt(2 / (gamma n))``.
    """
    if estimator not in ("tracked", "blind"):
        raise ValueError(f"unknown estimator {estimator!r}")
    M, L = design.M, design.L
    kp = 1 - k
    src = SOURCE_INTERVAL[design.band][i]
    n = n_symbols
    pad = 2 * (L - 1)
    peer_syms = crandn(rng, n + pad)
    own_syms = crandn(rng, n + pad)
    idx = np.arange(n) + pad  # sample times

    # peer stream through the multipath channel, with delay pre-compensation
    h = channels.h_taps(kp)
    Wp = design.beams[kp, src]
    rx = np.zeros(n, dtype=complex)
    for l in range(h.shape[0]):
        for lp in range(L):
            kappa = L - 1 - lp
            rx += (h[l].conj() @ Wp[lp]) * peer_syms[idx - l - kappa]
    desired = peer_syms[idx - (L - 1)]
    y_sig = np.sqrt(budget.rho_c) * rx
    y = np.zeros(n, dtype=complex)

    # own transmission: echo towards theta_k with Doppler, residual SI as noise
    Wo = design.beams[k, i]
    a = steering_vector(channels.theta[k], M, channels.spacing_ratio)
    x_own = np.zeros((n, M), dtype=complex)
    for l in range(L):
        x_own += own_syms[idx - (L - 1 - l)][:, None] * Wo[l][None, :]
    R = 0.5 * (design.R[k, i] + design.R[k, i].conj().T)
    ev, V = np.linalg.eigh(R)
    root = V * np.sqrt(np.clip(ev, 0.0, None))
    x_own += crandn(rng, n, M) @ root.T
    doppler = np.exp(1j * 2 * np.pi * channels.nu[k] * ts * np.arange(n))
    y += np.sqrt(budget.rho_s) * channels.alpha[k] * doppler * (x_own @ a.conj())
    phi = budget.eta * sum(float(np.real(gl.conj() @ design.Q[k, i] @ gl))
                           for gl in channels.g_taps(k))
    y += np.sqrt(budget.rho_si * phi) * crandn(rng, n)
    y += crandn(rng, n)

    if estimator == "blind":
        y = y + y_sig
        g_hat = np.vdot(desired, y) / np.vdot(desired, desired)
        resid = y - g_hat * desired
    else:
        g_hat = np.vdot(desired, y_sig) / np.vdot(desired, desired)
        resid = y + (y_sig - g_hat * desired)
    sigma2 = float(np.mean(np.abs(resid) ** 2))
    return float(abs(g_hat) ** 2 * np.mean(np.abs(desired) ** 2) / sigma2)


# --------------------------------------------------------------- sampling
def random_psd(rng, M, trace, rank=None):
    rank = M if rank is None else rank
    G = crandn(rng, M, rank)
    Q = G @ G.conj().T
    return Q * (trace / np.real(np.trace(Q)))


def random_design(channels, band: str, mode: str, rng, bases=None,
                  power_fraction: float = 1.0) -> TransmitDesign:
    """Random feasible design: Q PSD within budget, beams inside Q, ZF for wideband.

    ``bases[k][l]`` restricts tap beams to a subspace (e.g. the zero-forcing
    null space); default is unrestricted.
    """
    M = channels.M
    L = channels.L if band == "wide" else 1
    silent = set(HALF_DUPLEX_SILENT[band]) if mode == "half" else set()
    beams = np.zeros((2, 2, L, M), dtype=complex)
    Q = np.zeros((2, 2, M, M), dtype=complex)
    R = np.zeros_like(Q)
    for k in range(2):
        active = [i for i in range(2) if (k, i) not in silent]
        P = 2.0 / len(active) * power_fraction
        for i in active:
            if mode == "full" and i == 1:
                beams[k, 1], Q[k, 1], R[k, 1] = beams[k, 0], Q[k, 0], R[k, 0]
                continue
            budget = P * rng.uniform(0.2, 1.0)
            split = rng.dirichlet(np.ones(L + 1))
            for l in range(L):
                B = np.eye(M) if bases is None else bases[k][l]
                v = crandn(rng, B.shape[1])
                w = B @ v
                beams[k, i, l] = w * np.sqrt(split[l] * budget / np.vdot(w, w).real)
            R[k, i] = random_psd(rng, M, split[L] * budget, rank=int(rng.integers(1, M + 1)))
            Q[k, i] = R[k, i] + np.einsum("lm,ln->mn", beams[k, i], beams[k, i].conj())
    return TransmitDesign(mode=mode, band=band, beams=beams, Q=Q, R=R)


def rejection_sampling_best(spec, layout, rows, x_t, budget, rng, n_samples: int,
                            chunk: int = 5000) -> float:
    """Best subproblem objective over random feasible samples.

    Each sample draws a random design; the auxiliaries are then set to their
    largest admissible values (r at its surrogate SINR, g at sqrt(G), d at its
    surrogate bound), which maximises the objective for that design.  Samples
    violating any constraint are discarded.
    """
    from .sca import build_surrogates

    gam, D = build_surrogates(layout, rows, budget, x_t)
    best = -np.inf
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        X = sample_designs(layout, rng, m)
        for key in layout.links:
            X[:, layout.r_idx[key]] = X @ gam[key].row + gam[key].const
        for key in layout.sensing:
            G = X @ rows.G[key].row + rows.G[key].const
            X[:, layout.g_idx[key]] = np.sqrt(np.clip(G, 0.0, None))
        for key in layout.sensing:
            X[:, layout.d_idx[key]] = X @ D[key].row + D[key].const
        ok = np.all(X @ spec.A.T <= spec.b, axis=1)
        if ok.any():
            best = max(best, max(spec.objective(x) for x in X[ok]))
        done += m
    return best


def sample_designs(layout, rng, m: int) -> np.ndarray:
    """Random feasible designs in lifted coordinates, shape (m, layout.n).

    Auxiliaries are left at zero.  Each slot gets a random power level, a
    random split between tap beams and a full-rank sensing part.
    """
    M, L = layout.M, layout.L
    X = np.zeros((m, layout.n))
    iu = np.triu_indices(M, 1)
    for s in layout.var_slots:
        k = s[0]
        n_tx = sum(layout.transmits[(k, i)] for i in range(2))
        P = 2.0 / n_tx
        total = P * rng.uniform(0.2, 1.0, size=m)
        split = rng.dirichlet(np.ones(L + 1), size=m)
        rank = M
        G = (rng.standard_normal((m, M, rank)) + 1j * rng.standard_normal((m, M, rank)))
        R = G @ np.conj(np.swapaxes(G, 1, 2))
        R *= (split[:, L] * total / np.real(np.trace(R, axis1=1, axis2=2)))[:, None, None]
        for l in range(L):
            B = layout.bases[k][l]
            dim = B.shape[1]
            v = rng.standard_normal((m, dim)) + 1j * rng.standard_normal((m, dim))
            w = v @ B.T
            scale = np.sqrt(split[:, l] * total / np.sum(np.abs(w) ** 2, axis=1))
            v *= scale[:, None]
            w *= scale[:, None]
            Ql = np.einsum("sm,sn->smn", w, w.conj()) + R / L
            o = layout.q_off[(s, l)]
            X[:, o:o + M] = np.real(np.diagonal(Ql, axis1=1, axis2=2))
            X[:, o + M:o + M + len(iu[0])] = np.real(Ql[:, iu[0], iu[1]])
            X[:, o + M + len(iu[0]):o + M * M] = np.imag(Ql[:, iu[0], iu[1]])
            o, dim = layout.v_off[(s, l)]
            X[:, o:o + dim] = v.real
            X[:, o + dim:o + 2 * dim] = v.imag
    return X
