"""Successive convex approximation for the weighted rate/CRB beamforming problem.

The lifted problem introduces auxiliaries ``r`` (SINR), ``g`` (square root of
the Fisher weight) and ``d`` (per-interval Fisher contribution).  Each SCA step
replaces the two nonconvex constraints ``gamma >= r`` and ``D >= d`` by affine
lower bounds built from the quadratic-over-linear inequality
``a^2/b >= 2 (a_t/b_t) a - (a_t/b_t)^2 b`` and hands the resulting convex
program to :mod:`isacsim.solver`.

The same machinery handles the wideband (DAM) problem: there every beam is
split into per-tap beams living in a zero-forcing subspace and every covariance
into per-tap pieces.  Narrowband is the single-tap case with identity bases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import steering_derivative, steering_vector
from .metrics import (HALF_DUPLEX_SILENT, SOURCE_INTERVAL, LinkBudget, TransmitDesign,
                      evaluate, weighted_objective)
from .solver import (PsdBlock, QuadCone, SmoothConstraint, SolverOptions, SubproblemSpec,
                     hermitian_embed, kkt_residual, solve)

log = logging.getLogger(__name__)

D_FLOOR = 1e-12


class ScaError(RuntimeError):
    """Raised when a subproblem solve fails; carries the SCA iteration index."""

    def __init__(self, iteration, status):
        super().__init__(f"SCA subproblem failed at iteration {iteration}: {status}")
        self.iteration = iteration
        self.status = status


def linearize_quadratic_over_linear(a_t: complex, b_t: float):
    """Affine minorant of ``|a|^2 / b`` at ``(a_t, b_t)``.

    Returns ``(slope_a, slope_b)`` such that ``Re(conj(slope_a) * a) + slope_b * b``
    equals ``|a_t|^2 / b_t`` at the expansion point and never exceeds
    ``|a|^2 / b`` for ``b > 0``.  For real ``a`` this is
    ``(2 a_t / b_t) a - (a_t / b_t)^2 b``.
    """
    if not b_t > 0:
        raise ValueError("expansion point needs b_t > 0")
    return 2.0 * a_t / b_t, -abs(a_t / b_t) ** 2


# ------------------------------------------------------------ Hermitian params
def hermitian_basis(M: int) -> np.ndarray:
    """Real basis of M x M Hermitian matrices: diagonal, Re off-diagonal, Im off-diagonal."""
    E = []
    for m in range(M):
        B = np.zeros((M, M), dtype=complex)
        B[m, m] = 1.0
        E.append(B)
    pairs = [(m, n) for m in range(M) for n in range(m + 1, M)]
    for m, n in pairs:
        B = np.zeros((M, M), dtype=complex)
        B[m, n] = B[n, m] = 1.0
        E.append(B)
    for m, n in pairs:
        B = np.zeros((M, M), dtype=complex)
        B[m, n] = 1j
        B[n, m] = -1j
        E.append(B)
    return np.array(E)


def herm_coeffs(A: np.ndarray) -> np.ndarray:
    """Coefficients c with ``tr(A Q) = c @ params(Q)`` for Hermitian A."""
    M = A.shape[0]
    iu = np.triu_indices(M, 1)
    return np.concatenate([np.real(np.diag(A)), 2 * np.real(A[iu]), 2 * np.imag(A[iu])])


def herm_params(Q: np.ndarray) -> np.ndarray:
    M = Q.shape[0]
    iu = np.triu_indices(M, 1)
    return np.concatenate([np.real(np.diag(Q)), np.real(Q[iu]), np.imag(Q[iu])])


def herm_from_params(p: np.ndarray, M: int) -> np.ndarray:
    Q = np.zeros((M, M), dtype=complex)
    iu = np.triu_indices(M, 1)
    npair = len(iu[0])
    Q[np.diag_indices(M)] = p[:M]
    Q[iu] = p[M:M + npair] + 1j * p[M + npair:]
    Q[(iu[1], iu[0])] = np.conj(Q[iu])
    return Q


# -------------------------------------------------------------------- layout
class Layout:
    """Free-variable layout of the lifted problem for one (band, mode, channel).

    Duplex ties and silent slots are eliminated: tied intervals share one set of
    variables, silent intervals have none.  Beams are stored as real/imag parts
    of their coordinates in the zero-forcing basis of each tap.
    """

    def __init__(self, band: str, mode: str, channels, bases=None):
        self.band, self.mode = band, mode
        self.M = channels.M
        self.L = channels.L if band == "wide" else 1
        M, L = self.M, self.L
        if bases is None:
            bases = [[np.eye(M, dtype=complex) for _ in range(L)] for _ in range(2)]
        self.bases = bases
        silent = set(HALF_DUPLEX_SILENT[band]) if mode == "half" else set()
        self.transmits = {(k, i): (k, i) not in silent for k in range(2) for i in range(2)}
        # representative variable slot for each transmitting (k, i)
        self.rep = {}
        for k in range(2):
            for i in range(2):
                if not self.transmits[(k, i)]:
                    self.rep[(k, i)] = None
                elif mode == "full":
                    self.rep[(k, i)] = (k, 0)
                else:
                    self.rep[(k, i)] = (k, i)
        self.var_slots = sorted({s for s in self.rep.values() if s is not None})
        self.groups = {}
        self.herm_dims = {}
        off = 0
        self.q_off, self.v_off = {}, {}
        share = {}
        for s in self.var_slots:
            k = s[0]
            n_tx = sum(self.transmits[(k, i)] for i in range(2))
            share[s] = 2.0 / n_tx / L
        for s in self.var_slots:
            k = s[0]
            for l in range(L):
                self.q_off[(s, l)] = off
                name = f"Q[{k},{s[1]},{l}]"
                self.groups[name] = (slice(off, off + M * M), "herm")
                self.herm_dims[name] = (M, share[s])
                off += M * M
                dim = self.bases[k][l].shape[1]
                self.v_off[(s, l)] = (off, dim)
                self.groups[f"v[{k},{s[1]},{l}]"] = (slice(off, off + 2 * dim), "beam")
                off += 2 * dim
        # a link (k, i) carries data if the peer transmits in the source interval
        self.links = [(k, i) for k in range(2) for i in range(2)
                      if self.transmits[(1 - k, SOURCE_INTERVAL[band][i])]]
        self.sensing = [(k, i) for k in range(2) for i in range(2) if self.transmits[(k, i)]]
        self.r_idx, self.g_idx, self.d_idx = {}, {}, {}
        for name, keys, store in (("r", self.links, self.r_idx), ("g", self.sensing, self.g_idx),
                                  ("d", self.sensing, self.d_idx)):
            for key in keys:
                store[key] = off
                self.groups[f"{name}[{key[0]},{key[1]}]"] = (slice(off, off + 1), name)
                off += 1
        self.n = off

    # ---------------------------------------------------------- linear maps
    def q_row(self, k: int, i: int, A: np.ndarray) -> np.ndarray:
        """Row c with c @ x = tr(A Q_{k,i}) where Q_{k,i} = sum_l Q_{k,i,l}."""
        row = np.zeros(self.n)
        s = self.rep[(k, i)]
        if s is None:
            return row
        c = herm_coeffs(A)
        for l in range(self.L):
            o = self.q_off[(s, l)]
            row[o:o + self.M * self.M] += c
        return row

    def gain_rows(self, channels, k: int, i: int):
        """(re, im) rows of the effective gain sum_l h_{k',l}^H w_{k',src,l} seen by k."""
        kp = 1 - k
        src = SOURCE_INTERVAL[self.band][i]
        re, im = np.zeros(self.n), np.zeros(self.n)
        s = self.rep[(kp, src)]
        if s is None:
            return re, im
        h = channels.h_taps(kp)
        for l in range(self.L):
            u = h[l].conj() @ self.bases[kp][l]  # gain per coordinate
            o, dim = self.v_off[(s, l)]
            # u v = (ur + j ui)(vr + j vi)
            re[o:o + dim] += np.real(u)
            re[o + dim:o + 2 * dim] -= np.imag(u)
            im[o:o + dim] += np.imag(u)
            im[o + dim:o + 2 * dim] += np.real(u)
        return re, im

    def unit(self, idx: int) -> np.ndarray:
        e = np.zeros(self.n)
        e[idx] = 1.0
        return e

    # ------------------------------------------------------ pack / unpack
    def tap_covariances(self, x):
        """Q_{k,i,l} of shape (2, 2, L, M, M)."""
        M, L = self.M, self.L
        out = np.zeros((2, 2, L, M, M), dtype=complex)
        for (k, i), s in self.rep.items():
            if s is None:
                continue
            for l in range(L):
                o = self.q_off[(s, l)]
                out[k, i, l] = herm_from_params(x[o:o + M * M], M)
        return out

    def beams(self, x):
        M, L = self.M, self.L
        out = np.zeros((2, 2, L, M), dtype=complex)
        for (k, i), s in self.rep.items():
            if s is None:
                continue
            for l in range(L):
                o, dim = self.v_off[(s, l)]
                v = x[o:o + dim] + 1j * x[o + dim:o + 2 * dim]
                out[k, i, l] = self.bases[k][l] @ v
        return out

    def design(self, x) -> TransmitDesign:
        Qt = self.tap_covariances(x)
        W = self.beams(x)
        Q = Qt.sum(axis=2)
        R = np.zeros_like(Q)
        for k in range(2):
            for i in range(2):
                if self.transmits[(k, i)]:
                    R[k, i] = extract_sensing_covariance(Q[k, i], W[k, i], strict=False)
        return TransmitDesign(mode=self.mode, band=self.band, beams=W, Q=Q, R=R)

    def pack(self, tap_Q, coords, r=None, g=None, d=None) -> np.ndarray:
        """Inverse of the unpacking maps; ``coords[(s, l)]`` are ZF-basis coordinates."""
        M = self.M
        x = np.zeros(self.n)
        for s in self.var_slots:
            for l in range(self.L):
                o = self.q_off[(s, l)]
                x[o:o + M * M] = herm_params(tap_Q[s][l])
                o, dim = self.v_off[(s, l)]
                v = coords[(s, l)]
                x[o:o + dim] = np.real(v)
                x[o + dim:o + 2 * dim] = np.imag(v)
        for store, vals in ((self.r_idx, r), (self.g_idx, g), (self.d_idx, d)):
            if vals:
                for key, idx in store.items():
                    x[idx] = vals[key]
        return x

    def split(self, x) -> dict:
        """(s, l) -> (beam coordinates v, sensing covariance Q_l - w_l w_l^H)."""
        Qt = self.tap_covariances(x)
        out = {}
        for s in self.var_slots:
            for l in range(self.L):
                o, dim = self.v_off[(s, l)]
                v = x[o:o + dim] + 1j * x[o + dim:o + 2 * dim]
                w = self.bases[s[0]][l] @ v
                out[(s, l)] = (v, Qt[s[0], s[1], l] - np.outer(w, w.conj()))
        return out

    def count(self) -> dict:
        """Number of real free variables per kind."""
        out = {}
        for _, (sl, kind) in self.groups.items():
            out[kind] = out.get(kind, 0) + sl.stop - sl.start
        out["herm_blocks"] = sum(1 for _, (_, kd) in self.groups.items() if kd == "herm")
        out["beams"] = sum(1 for _, (_, kd) in self.groups.items() if kd == "beam")
        return out


# ------------------------------------------------------------------ surrogates
@dataclass
class AffineForm:
    """``row @ x + const``."""

    row: np.ndarray
    const: float

    def __call__(self, x):
        return float(self.row @ x + self.const)


@dataclass
class LinkRows:
    """Affine building blocks of the metrics for one channel realization."""

    I: dict  # interference-plus-noise I_{k,i}(x)
    b: dict  # rho_SI Phi_{k,i}(x) + 1
    G: dict  # |alpha|^2 a_dot^H Q a_dot
    gain: dict  # (re, im) rows of the effective gain
    power: dict


def link_rows(layout: Layout, channels, budget: LinkBudget) -> LinkRows:
    I, b, G, gain, power = {}, {}, {}, {}, {}
    M = layout.M
    for k in range(2):
        a = steering_vector(channels.theta[k], M, channels.spacing_ratio)
        adot = steering_derivative(channels.theta[k], M, channels.spacing_ratio)
        gt = channels.g_taps(k)
        Gsi = budget.eta * (gt.T @ gt.conj())  # eta * sum_l g_l g_l^H
        for i in range(2):
            brow = budget.rho_si * layout.q_row(k, i, Gsi)
            b[(k, i)] = AffineForm(brow, 1.0)
            I[(k, i)] = AffineForm(budget.rho_s * layout.q_row(k, i, np.outer(a, a.conj())) + brow,
                                   1.0)
            G[(k, i)] = AffineForm(abs(channels.alpha[k]) ** 2
                                   * layout.q_row(k, i, np.outer(adot, adot.conj())), 0.0)
            gain[(k, i)] = layout.gain_rows(channels, k, i)
        power[k] = sum(layout.q_row(k, i, np.eye(M)) for i in range(2))
    return LinkRows(I, b, G, gain, power)


def build_surrogates(layout: Layout, rows: LinkRows, budget: LinkBudget, x_t):
    """Affine minorants gamma^[t]_{k,i}(x) and D^[t]_{k,i}(x) expanded at ``x_t``."""
    gam, D = {}, {}
    for key in layout.links:
        re, im = rows.gain[key]
        s_t = complex(re @ x_t, im @ x_t)
        I_t = rows.I[key](x_t)
        slope_a, slope_b = linearize_quadratic_over_linear(s_t, I_t)
        # rho_c * [Re(conj(slope_a) s(x)) + slope_b I(x)]
        lin = np.real(slope_a) * re + np.imag(slope_a) * im
        row = budget.rho_c * (lin + slope_b * rows.I[key].row)
        gam[key] = AffineForm(row, budget.rho_c * slope_b * rows.I[key].const)
    for key in layout.sensing:
        g_t = float(x_t[layout.g_idx[key]])
        b_t = rows.b[key](x_t)
        slope_a, slope_b = linearize_quadratic_over_linear(g_t, b_t)
        row = np.real(slope_a) * layout.unit(layout.g_idx[key]) + slope_b * rows.b[key].row
        D[key] = AffineForm(row, slope_b * rows.b[key].const)
    return gam, D


def true_gamma(rows: LinkRows, budget, key, x):
    re, im = rows.gain[key]
    return budget.rho_c * ((re @ x) ** 2 + (im @ x) ** 2) / rows.I[key](x)


def crb_coefficient(weight: float, mu: float, budget: LinkBudget) -> float:
    return (1.0 - weight) * mu / (2.0 * budget.rho_s * budget.N)


def build_problem(layout: Layout, channels, budget: LinkBudget, weight: float, mu: float,
                  x_t=None, surrogate: bool = True, rows: LinkRows | None = None) -> SubproblemSpec:
    """Lifted problem: convex SCA subproblem at ``x_t`` or, with ``surrogate=False``,
    the original nonconvex lifted problem (for KKT certification)."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    rows = rows or link_rows(layout, channels, budget)
    n = layout.n
    A, b, labels = [], [], []
    smooth = []
    for k in range(2):
        A.append(rows.power[k])
        b.append(2.0)
        labels.append(f"power[{k}]")
    for key in layout.links:
        A.append(-layout.unit(layout.r_idx[key]))
        b.append(0.0)
        labels.append(f"r>=0{list(key)}")
    for key in layout.sensing:
        A.append(-layout.unit(layout.d_idx[key]))
        b.append(-D_FLOOR)
        labels.append(f"d>=eps{list(key)}")
    if surrogate:
        if x_t is None:
            raise ValueError("surrogate subproblem needs an expansion point")
        gam, Dsur = build_surrogates(layout, rows, budget, x_t)
        for key in layout.links:
            # r - gamma^[t](x) <= 0
            A.append(layout.unit(layout.r_idx[key]) - gam[key].row)
            b.append(gam[key].const)
            labels.append(f"gamma{list(key)}")
        for key in layout.sensing:
            A.append(layout.unit(layout.d_idx[key]) - Dsur[key].row)
            b.append(Dsur[key].const)
            labels.append(f"D{list(key)}")
    else:
        for key in layout.links:
            smooth.append(_gamma_constraint(layout, rows, budget, key))
        for key in layout.sensing:
            smooth.append(_fisher_constraint(layout, rows, key))
    quads = [QuadCone(f"G{list(key)}", rows.G[key].row, rows.G[key].const,
                      layout.unit(layout.g_idx[key])) for key in layout.sensing]
    psd = schur_blocks(layout)
    rate_rows = np.array([layout.unit(layout.r_idx[key]) for key in layout.links]).reshape(-1, n)
    crb_rows = []
    for k in range(2):
        row = np.zeros(n)
        for key in layout.sensing:
            if key[0] == k:
                row += layout.unit(layout.d_idx[key])
        crb_rows.append(row)
    c_crb = crb_coefficient(weight, mu, budget)
    spec = SubproblemSpec(
        n=n, groups=dict(layout.groups), rate_rows=rate_rows, rate_weight=weight / 2.0,
        crb_rows=np.array(crb_rows), crb_coef=c_crb, A=np.array(A), b=np.array(b),
        lin_labels=labels, quads=quads, psd=psd, smooth=smooth,
        anchor=None if x_t is None else np.array(x_t, dtype=float),
        meta={"herm_dims": dict(layout.herm_dims), "band": layout.band, "mode": layout.mode,
              "weight": weight},
    )
    return spec


def _gamma_constraint(layout, rows, budget, key):
    re, im = rows.gain[key]
    Iform = rows.I[key]
    er = layout.unit(layout.r_idx[key])

    def fun(x):
        return true_gamma(rows, budget, key, x) - x[layout.r_idx[key]]

    def grad(x):
        sr, si, I = re @ x, im @ x, Iform(x)
        num = sr**2 + si**2
        return budget.rho_c * (2 * (sr * re + si * im) / I - num / I**2 * Iform.row) - er

    return SmoothConstraint(f"gamma{list(key)}", fun, grad)


def _fisher_constraint(layout, rows, key):
    bform = rows.b[key]
    gi, di = layout.g_idx[key], layout.d_idx[key]

    def fun(x):
        return x[gi] ** 2 / bform(x) - x[di]

    def grad(x):
        bb = bform(x)
        out = -(x[gi] ** 2) / bb**2 * bform.row
        out[gi] += 2 * x[gi] / bb
        out[di] -= 1.0
        return out

    return SmoothConstraint(f"D{list(key)}", fun, grad)


def schur_blocks(layout: Layout) -> list:
    """[[Q_l, w_l], [w_l^H, 1]] >= 0 for every variable slot and tap (real-embedded)."""
    M = layout.M
    E = hermitian_basis(M)
    blocks = []
    for s in layout.var_slots:
        k = s[0]
        for l in range(layout.L):
            B = layout.bases[k][l]
            dim = B.shape[1]
            mats = []
            for Ej in E:
                H = np.zeros((M + 1, M + 1), dtype=complex)
                H[:M, :M] = Ej
                mats.append(H)
            for unit in (1.0, 1j):
                for j in range(dim):
                    H = np.zeros((M + 1, M + 1), dtype=complex)
                    col = unit * B[:, j]
                    H[:M, M] = col
                    H[M, :M] = col.conj()
                    mats.append(H)
            c0 = np.zeros((M + 1, M + 1), dtype=complex)
            c0[M, M] = 1.0
            o = layout.q_off[(s, l)]
            cols = np.arange(o, o + M * M + 2 * dim)
            blocks.append(PsdBlock(f"schur[{k},{s[1]},{l}]", cols, hermitian_embed(c0),
                                   hermitian_embed(np.array(mats))))
    return blocks


def extract_sensing_covariance(Q, beams, strict: bool = True, tol: float = 1e-8,
                               reject: float = 1e-6) -> np.ndarray:
    """R = Q - sum_l w_l w_l^H with tiny negative eigenvalues clipped to zero.

    Eigenvalues below ``-reject`` indicate that Q does not dominate the beams and
    raise ``ValueError`` when ``strict``.  Clipping preserves the trace within ``tol``
    by redistributing the clipped mass over the retained spectrum.
    """
    beams = np.atleast_2d(np.asarray(beams, dtype=complex))
    R = np.asarray(Q, dtype=complex) - beams.T @ beams.conj()
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    if w.min() < -reject and strict:
        raise ValueError(f"Q - w w^H has eigenvalue {w.min():.3e}; solver output inconsistent")
    if w.min() >= 0:
        return R
    trace = w.sum()
    clipped = np.clip(w, 0.0, None)
    excess = clipped.sum() - trace
    pos = clipped > 0
    if excess > 0 and pos.any():
        clipped[pos] -= excess * clipped[pos] / clipped[pos].sum()
        clipped = np.clip(clipped, 0.0, None)
    return (V * clipped) @ V.conj().T


# ---------------------------------------------------------------- SCA driver
@dataclass
class ScaOptions:
    threshold: float = 1e-4
    max_iter: int = 50
    restarts: int = 5
    init_comm_fraction: float = 0.1
    solver_tol: float = 1e-9
    kkt_target: float | None = 1e-5
    solver: SolverOptions = field(default_factory=SolverOptions)
    certify: bool = True
    extrapolate: bool = True
    max_extrapolation: float = 256.0


@dataclass
class ScaState:
    design: TransmitDesign
    x: np.ndarray
    layout: Layout
    t: int = 0
    trajectory: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    converged: bool = False
    kkt_residual: float = np.nan
    solver_iterations: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)
    single_run_objective: float = np.nan
    extrapolations: list = field(default_factory=list)

    @property
    def aux(self):
        lay, x = self.layout, self.x
        return ({k: x[v] for k, v in lay.r_idx.items()}, {k: x[v] for k, v in lay.g_idx.items()},
                {k: x[v] for k, v in lay.d_idx.items()})


def initial_point(layout: Layout, channels, budget, rng, comm_fraction: float = 0.1,
                  rows: LinkRows | None = None) -> np.ndarray:
    """Random beams using ``comm_fraction`` of each slot's budget, the rest spread
    isotropically (90% of what is left), auxiliaries at interior values."""
    M, L = layout.M, layout.L
    rows = rows or link_rows(layout, channels, budget)
    tap_Q, coords = {}, {}
    for s in layout.var_slots:
        k = s[0]
        n_tx = sum(layout.transmits[(k, i)] for i in range(2))
        P = 2.0 / n_tx
        vs = []
        for l in range(L):
            dim = layout.bases[k][l].shape[1]
            vs.append((rng.standard_normal(dim) + 1j * rng.standard_normal(dim)) / np.sqrt(2))
        tot = sum(np.sum(np.abs(layout.bases[k][l] @ v) ** 2) for l, v in enumerate(vs))
        scale = np.sqrt(comm_fraction * P / tot)
        pw = comm_fraction * P
        tap_Q[s] = []
        for l, v in enumerate(vs):
            v = v * scale
            coords[(s, l)] = v
            w = layout.bases[k][l] @ v
            tap_Q[s].append(np.outer(w, w.conj()) + 0.9 * (P - pw) / (M * L) * np.eye(M))
    x = layout.pack(tap_Q, coords)
    for key in layout.links:
        x[layout.r_idx[key]] = 0.5 * true_gamma(rows, budget, key, x)
    for key in layout.sensing:
        G = rows.G[key](x)
        g = 0.99 * np.sqrt(G)
        x[layout.g_idx[key]] = g
        x[layout.d_idx[key]] = 0.5 * g**2 / rows.b[key](x)
    return x


def design_objective(design, channels, budget, weight, mu):
    m = evaluate(design, channels, budget)
    return weighted_objective(m["R"], m["C"], weight, mu), m


def tighten_auxiliaries(layout: Layout, rows: LinkRows, budget, x, shrink: float = 1e-7):
    """Set r, g, d just inside their true upper limits at the design part of ``x``."""
    x = np.array(x, dtype=float)
    for key in layout.links:
        x[layout.r_idx[key]] = (1 - shrink) * true_gamma(rows, budget, key, x)
    for key in layout.sensing:
        g = (1 - shrink) * np.sqrt(max(rows.G[key](x), 0.0))
        x[layout.g_idx[key]] = g
        x[layout.d_idx[key]] = max((1 - shrink) * g**2 / rows.b[key](x), 2 * D_FLOOR)
    return x


def extrapolated_point(layout: Layout, rows: LinkRows, budget, x_prev, x_new, beta: float,
                       floor: float = 1e-10):
    """Strictly feasible point ``x_new + beta (x_new - x_prev)`` taken in design space.

    Beams and sensing covariances are extrapolated separately; the sensing part
    is projected onto the PSD cone and lifted by ``floor`` so that every Schur
    block stays strictly positive definite, and each transceiver is rescaled
    into its power budget when needed.
    """
    a, b = layout.split(x_prev), layout.split(x_new)
    M = layout.M
    tap_Q, coords = {}, {}
    for s in layout.var_slots:
        tap_Q[s] = []
        for l in range(layout.L):
            v = b[(s, l)][0] + beta * (b[(s, l)][0] - a[(s, l)][0])
            R = b[(s, l)][1] + beta * (b[(s, l)][1] - a[(s, l)][1])
            ev, V = np.linalg.eigh(0.5 * (R + R.conj().T))
            R = (V * np.clip(ev, 0.0, None)) @ V.conj().T + floor * np.eye(M)
            w = layout.bases[s[0]][l] @ v
            coords[(s, l)] = v
            tap_Q[s].append(np.outer(w, w.conj()) + R)
    x = layout.pack(tap_Q, coords)
    cap = 2.0 * (1 - 1e-9)
    for k in range(2):
        p = rows.power[k] @ x
        if p > cap:
            c = cap / p
            for s in layout.var_slots:
                if s[0] == k:
                    for l in range(layout.L):
                        coords[(s, l)] = coords[(s, l)] * np.sqrt(c)
                        tap_Q[s][l] = tap_Q[s][l] * c
    x = layout.pack(tap_Q, coords)
    return tighten_auxiliaries(layout, rows, budget, x)


def _sca_single(layout, channels, budget, weight, mu, x0, opts: ScaOptions):
    rows = link_rows(layout, channels, budget)
    true_spec = build_problem(layout, channels, budget, weight, mu, surrogate=False, rows=rows)

    def objective(x):
        return design_objective(layout.design(x), channels, budget, weight, mu)

    x = x0
    F, m = objective(x)
    state = ScaState(design=layout.design(x), x=x, layout=layout)
    state.trajectory.append(F)
    state.trace.append({"t": 0, "objective": F, "R": m["R"], "C": m["C"], "kkt_residual": np.nan})
    for it in range(1, opts.max_iter + 1):
        spec = build_problem(layout, channels, budget, weight, mu, x_t=x, rows=rows)
        sol = solve(spec, x, tol=opts.solver_tol, options=opts.solver)
        if sol.status == "infeasible-start":
            raise ScaError(it, sol.status)
        state.solver_iterations.append(sol.iterations)
        x_hat = sol.x
        F_hat, m_hat = objective(x_hat)
        small = abs(F_hat - F) <= opts.threshold * max(abs(F), 1e-12)
        kkt = np.nan
        if opts.certify and (small or it == opts.max_iter):
            kkt = kkt_residual(true_spec, x_hat, multipliers=sol.multipliers)
        done = small and (opts.kkt_target is None or not opts.certify or kkt <= opts.kkt_target)
        x_next, F_next, m_next, beta = x_hat, F_hat, m_hat, 0.0
        if opts.extrapolate and not done:
            step = 1.0
            while step <= opts.max_extrapolation:
                x_e = extrapolated_point(layout, rows, budget, x, x_hat, step)
                F_e, m_e = objective(x_e)
                if not F_e > F_next:
                    break
                x_next, F_next, m_next, beta = x_e, F_e, m_e, step
                step *= 2.0
        state.extrapolations.append(beta)
        x, F = x_next, F_next
        state.trajectory.append(F)
        state.trace.append({"t": it, "objective": F, "R": m_next["R"], "C": m_next["C"],
                            "kkt_residual": kkt, "solver_status": sol.status,
                            "extrapolation": beta})
        state.t, state.kkt_residual = it, kkt
        if done:
            state.converged = True
            break
    state.x, state.design = x, layout.design(x)
    return state


def run_layout(layout: Layout, channels, budget, weight, mu, options: ScaOptions | None = None,
               rng=None):
    """Best-of-``restarts`` SCA runs on a prepared layout."""
    opts = options or ScaOptions()
    rng = rng if rng is not None else np.random.default_rng(0)
    best = None
    finals = []
    first = None
    for _ in range(max(1, opts.restarts)):
        x0 = initial_point(layout, channels, budget, rng, opts.init_comm_fraction)
        st = _sca_single(layout, channels, budget, weight, mu, x0, opts)
        finals.append(st.trajectory[-1])
        if first is None:
            first = st.trajectory[-1]
        if best is None or st.trajectory[-1] > best.trajectory[-1]:
            best = st
    best.restart_objectives = finals
    best.single_run_objective = first
    return best.design, best


def run_sca(channels, budget: LinkBudget, weight: float, mode: str, mu: float = 1.5e4,
            options: ScaOptions | None = None, rng=None):
    """Narrowband joint beamforming by SCA; returns ``(design, state)``.

    At ``weight == 0`` the beam/sensing split of Q does not affect the
    objective, so the returned design uses :func:`principal_split`.
    """
    layout = Layout("narrow", mode, channels)
    design, state = run_layout(layout, channels, budget, weight, mu, options, rng)
    if weight == 0:
        design = state.design = principal_split(design)
    return design, state


def principal_split(design: TransmitDesign) -> TransmitDesign:
    """Same covariances, with each beam set to the principal component of its Q."""
    if design.L != 1:
        raise ValueError("principal split is defined for single-tap designs")
    beams = np.zeros_like(design.beams)
    for k in range(2):
        for i in range(2):
            ev, V = np.linalg.eigh(design.Q[k, i])
            beams[k, i, 0] = np.sqrt(max(ev[-1], 0.0)) * V[:, -1]
    R = design.Q - np.einsum("kilm,kiln->kimn", beams, beams.conj())
    return TransmitDesign(mode=design.mode, band=design.band, beams=beams, Q=design.Q.copy(), R=R)


def build_subproblem(state_x, channels, budget, weight, mode, mu: float = 1.5e4):
    """Convex narrowband subproblem expanded at the lifted point ``state_x``."""
    layout = Layout("narrow", mode, channels)
    return build_problem(layout, channels, budget, weight, mu, x_t=state_x)
