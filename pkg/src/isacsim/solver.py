"""Log-barrier path-following solver for the SCA subproblems.

A :class:`SubproblemSpec` is a concave maximisation over a real vector ``x``
(equality constraints are already eliminated by parametrisation)::

    maximize   rate_weight * sum_j log2(1 + rate_rows[j] @ x)
               - crb_coef * sum_k 1 / (crb_rows[k] @ x)
    subject to A @ x <= b                                  (linear)
               lin @ x + const - (sq @ x)**2 >= 0          (quadratic cones)
               F0 + sum_j x[cols_j] F_j  >> 0               (PSD blocks)

Complex Hermitian blocks enter through their real symmetric embedding
``[[Re H, -Im H], [Im H, Re H]]`` so one real PSD cone serves every block.
Nonconvex smooth constraints may be attached for KKT certification only.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import lsq_linear

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


def hermitian_embed(H: np.ndarray) -> np.ndarray:
    """Real symmetric embedding of a complex Hermitian matrix (last two axes)."""
    re, im = np.real(H), np.imag(H)
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


@dataclass
class QuadCone:
    """``lin @ x + const - (sq @ x)**2 >= 0``."""

    label: str
    lin: np.ndarray
    const: float
    sq: np.ndarray

    def value(self, x):
        return float(self.lin @ x + self.const - (self.sq @ x) ** 2)

    def grad(self, x):
        return self.lin - 2.0 * (self.sq @ x) * self.sq


@dataclass
class PsdBlock:
    """Affine real-symmetric matrix ``const + sum_j x[cols[j]] * mats[j]``."""

    label: str
    cols: np.ndarray
    const: np.ndarray
    mats: np.ndarray

    def value(self, x):
        return self.const + np.tensordot(x[self.cols], self.mats, axes=1)

    def adjoint(self, Z, n):
        """Gradient of ``tr(Z S(x))`` with respect to x."""
        out = np.zeros(n)
        np.add.at(out, self.cols, np.einsum("jpq,pq->j", self.mats, Z))
        return out


@dataclass
class SmoothConstraint:
    """Nonconvex ``fun(x) >= 0`` with gradient; used by :func:`kkt_residual` only."""

    label: str
    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass
class SubproblemSpec:
    n: int
    groups: dict = field(default_factory=dict)  # name -> (slice, kind)
    rate_rows: np.ndarray | None = None
    rate_weight: float = 0.0
    crb_rows: np.ndarray | None = None
    crb_coef: float = 0.0
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lin_labels: list = field(default_factory=list)
    quads: list = field(default_factory=list)
    psd: list = field(default_factory=list)
    smooth: list = field(default_factory=list)
    anchor: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n
        self.rate_rows = np.zeros((0, n)) if self.rate_rows is None else np.atleast_2d(self.rate_rows)
        self.crb_rows = np.zeros((0, n)) if self.crb_rows is None else np.atleast_2d(self.crb_rows)
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(self.A)
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float)
        for name, arr in (("rate_rows", self.rate_rows), ("crb_rows", self.crb_rows), ("A", self.A)):
            if arr.shape[1] != n:
                raise ValueError(f"{name} has {arr.shape[1]} columns, expected {n}")
        if len(self.lin_labels) != self.A.shape[0]:
            raise ValueError("one label per linear row required")
        for blk in self.psd:
            if blk.cols.size and (blk.cols.min() < 0 or blk.cols.max() >= n):
                raise ValueError(f"PSD block {blk.label} references undeclared variables")
        for q in self.quads:
            if q.lin.shape != (n,) or q.sq.shape != (n,):
                raise ValueError(f"quadratic cone {q.label} has wrong dimension")

    # ----------------------------------------------------------------- objective
    def objective(self, x) -> float:
        val = 0.0
        if self.rate_weight and self.rate_rows.size:
            val += self.rate_weight * float(np.sum(np.log1p(self.rate_rows @ x))) / LN2
        if self.crb_coef and self.crb_rows.size:
            val -= self.crb_coef * float(np.sum(1.0 / (self.crb_rows @ x)))
        return val

    def objective_grad(self, x) -> np.ndarray:
        g = np.zeros(self.n)
        if self.rate_weight and self.rate_rows.size:
            r = self.rate_rows @ x
            g += self.rate_weight / LN2 * (self.rate_rows.T @ (1.0 / (1.0 + r)))
        if self.crb_coef and self.crb_rows.size:
            s = self.crb_rows @ x
            g += self.crb_coef * (self.crb_rows.T @ (1.0 / s**2))
        return g

    def objective_hess(self, x) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        if self.rate_weight and self.rate_rows.size:
            r = self.rate_rows @ x
            Rw = self.rate_rows / (1.0 + r)[:, None]
            H -= self.rate_weight / LN2 * (Rw.T @ Rw)
        if self.crb_coef and self.crb_rows.size:
            s = self.crb_rows @ x
            Sw = self.crb_rows * np.sqrt(2.0 * self.crb_coef / s**3)[:, None]
            H -= Sw.T @ Sw
        return H

    # --------------------------------------------------------------- constraints
    @property
    def barrier_parameter(self) -> float:
        return float(self.A.shape[0] + len(self.quads) + sum(b.const.shape[0] for b in self.psd))

    def slacks(self, x) -> dict:
        """label -> slack (scalar constraints) or minimum eigenvalue (PSD blocks)."""
        out = {}
        lin = self.b - self.A @ x
        for lab, s in zip(self.lin_labels, lin):
            out[lab] = float(s)
        for q in self.quads:
            out[q.label] = q.value(x)
        for c in self.smooth:
            out[c.label] = float(c.fun(x))
        for blk in self.psd:
            out[blk.label] = float(np.linalg.eigvalsh(blk.value(x)).min())
        return out

    def margin(self, x) -> float:
        s = self.slacks(x)
        return min(s.values()) if s else np.inf

    def group(self, x, name):
        sl, _ = self.groups[name]
        return x[sl]

    def to_json(self) -> str:
        """Dense dump of the structured data for external cross-checking."""
        doc = {
            "n": self.n,
            "groups": {k: [v[0].start, v[0].stop, v[1]] for k, v in self.groups.items()},
            "objective": {"rate_weight": self.rate_weight, "rate_rows": self.rate_rows.tolist(),
                          "crb_coef": self.crb_coef, "crb_rows": self.crb_rows.tolist()},
            "linear": {"A": self.A.tolist(), "b": self.b.tolist(), "labels": list(self.lin_labels)},
            "quadratic_cones": [{"label": q.label, "lin": q.lin.tolist(), "const": q.const,
                                 "sq": q.sq.tolist()} for q in self.quads],
            "psd_blocks": [{"label": p.label, "cols": p.cols.tolist(), "const": p.const.tolist(),
                            "mats": p.mats.tolist()} for p in self.psd],
        }
        return json.dumps(doc)


@dataclass
class SubproblemSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    t: float = 0.0
    multipliers: dict = field(default_factory=dict)
    barrier_trace: list = field(default_factory=list)


@dataclass
class SolverOptions:
    t0: float = 1.0
    growth: float = 10.0
    newton_tol: float = 1e-9
    tol: float = 1e-8
    max_newton: int = 200
    armijo: float = 0.01
    backtrack: float = 0.5


class _Stacks:
    """PSD blocks grouped by shape for batched Cholesky work."""

    def __init__(self, blocks):
        shapes = {}
        for blk in blocks:
            shapes.setdefault((len(blk.cols), blk.const.shape[0]), []).append(blk)
        self.groups = []
        for blks in shapes.values():
            self.groups.append((np.stack([b.cols for b in blks]),
                                np.stack([b.const for b in blks]),
                                np.stack([b.mats for b in blks])))

    def values(self, x):
        return [c0 + np.einsum("bj,bjpq->bpq", x[cols], mats) for cols, c0, mats in self.groups]


class BarrierProblem:
    """phi_t(x) = -t f(x) - sum log(slacks) - sum logdet(PSD blocks)."""

    def __init__(self, spec: SubproblemSpec):
        self.spec = spec
        self.stacks = _Stacks(spec.psd)
        if spec.quads:
            self.qlin = np.stack([q.lin for q in spec.quads])
            self.qsq = np.stack([q.sq for q in spec.quads])
            self.qc = np.array([q.const for q in spec.quads])

    def _quad_vals(self, x):
        u = self.qsq @ x
        return self.qlin @ x + self.qc - u**2, u

    def phi(self, x, t) -> float:
        sp = self.spec
        s = sp.b - sp.A @ x
        if np.any(s <= 0):
            return np.inf
        val = -np.sum(np.log(s))
        if sp.quads:
            q, _ = self._quad_vals(x)
            if np.any(q <= 0):
                return np.inf
            val -= np.sum(np.log(q))
        for S in self.stacks.values(x):
            try:
                Lc = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                return np.inf
            d = np.diagonal(Lc, axis1=-2, axis2=-1)
            if np.any(d <= 0) or not np.all(np.isfinite(d)):
                return np.inf
            val -= 2.0 * np.sum(np.log(d))
        if sp.rate_rows.size and np.any(sp.rate_rows @ x <= -1):
            return np.inf
        if sp.crb_coef and sp.crb_rows.size and np.any(sp.crb_rows @ x <= 0):
            return np.inf
        return float(val - t * sp.objective(x))

    def derivatives(self, x, t):
        sp = self.spec
        g = -t * sp.objective_grad(x)
        H = -t * sp.objective_hess(x)
        s = sp.b - sp.A @ x
        g += sp.A.T @ (1.0 / s)
        As = sp.A / s[:, None]
        H += As.T @ As
        if sp.quads:
            q, u = self._quad_vals(x)
            dq = self.qlin - 2.0 * u[:, None] * self.qsq
            g -= dq.T @ (1.0 / q)
            dqs = dq / q[:, None]
            H += dqs.T @ dqs
            sqs = self.qsq * np.sqrt(2.0 / q)[:, None]
            H += sqs.T @ sqs
        for (cols, _, mats), S in zip(self.stacks.groups, self.stacks.values(x)):
            Linv = np.linalg.inv(np.linalg.cholesky(S))
            Y = Linv[:, None] @ mats @ np.swapaxes(Linv, -1, -2)[:, None]
            nb = Y.shape[0]
            Yf = Y.reshape(nb, Y.shape[1], -1)
            gl = -np.trace(Y, axis1=-2, axis2=-1)
            Hl = Yf @ np.swapaxes(Yf, -1, -2)
            for b in range(nb):
                c = cols[b]
                np.add.at(g, c, gl[b])
                H[np.ix_(c, c)] += Hl[b]
        return g, H

    def multipliers(self, x, t) -> dict:
        """Dual estimates of a centred point: 1/(t * slack) and S^{-1}/t."""
        sp = self.spec
        out = {}
        s = sp.b - sp.A @ x
        for lab, v in zip(sp.lin_labels, s):
            out[lab] = 1.0 / (t * v)
        for q in sp.quads:
            out[q.label] = 1.0 / (t * q.value(x))
        for blk in sp.psd:
            out[blk.label] = np.linalg.inv(blk.value(x)) / t
        return out


def is_strictly_feasible(spec: SubproblemSpec, x) -> bool:
    return np.isfinite(BarrierProblem(spec).phi(np.asarray(x, dtype=float), 0.0))


def solve(spec: SubproblemSpec, start, tol: float | None = None,
          options: SolverOptions | None = None) -> SubproblemSolution:
    """Maximise ``spec.objective`` from a strictly feasible ``start``.

    Returns status ``"optimal"`` when the barrier duality gap bound falls below
    ``tol``, ``"max-iter"`` when the Newton-step cap is hit first, and
    ``"infeasible-start"`` without iterating if ``start`` is not strictly feasible.
    """
    if spec.smooth:
        raise ValueError("smooth (nonconvex) constraints cannot be handled by the barrier solver")
    opts = options or SolverOptions()
    tol = opts.tol if tol is None else tol
    prob = BarrierProblem(spec)
    x = np.array(start, dtype=float)
    nu = spec.barrier_parameter
    t = opts.t0
    if not np.isfinite(prob.phi(x, t)):
        return SubproblemSolution(x=x, objective=np.nan, kkt_residual=np.inf, iterations=0,
                                  status="infeasible-start")
    steps = 0
    trace = []
    status = "max-iter"
    while True:
        phi_x = prob.phi(x, t)
        while steps < opts.max_newton:
            g, H = prob.derivatives(x, t)
            dx = _newton_direction(H, g)
            dec2 = float(-g @ dx)
            # below the rounding floor of phi no step can be resolved
            if dec2 / 2.0 <= max(opts.newton_tol, 1e-14 * abs(phi_x)):
                break
            step = 1.0
            slack = 1e-13 * max(1.0, abs(phi_x))
            while True:
                cand = x + step * dx
                phi_c = prob.phi(cand, t)
                if phi_c <= phi_x + opts.armijo * step * float(g @ dx) + slack:
                    break
                step *= opts.backtrack
                if step < 1e-14:
                    cand, phi_c = x, phi_x
                    break
            steps += 1
            if phi_c > phi_x + slack:
                raise AssertionError("barrier objective decreased during a Newton step")
            trace.append((t, -phi_c))
            if cand is x:
                break
            x, phi_x = cand, phi_c
        if steps >= opts.max_newton:
            break
        if nu / t < tol:
            status = "optimal"
            break
        t *= opts.growth
    mult = prob.multipliers(x, t)
    res = kkt_residual(spec, x, multipliers=mult)
    return SubproblemSolution(x=x, objective=spec.objective(x), kkt_residual=res,
                              iterations=steps, status=status, t=t, multipliers=mult,
                              barrier_trace=trace)


def _newton_direction(H, g):
    try:
        return -cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
    except np.linalg.LinAlgError:
        reg = 1e-12 * max(1.0, np.abs(np.diag(H)).max())
        return -np.linalg.solve(H + reg * np.eye(len(g)), g)


# --------------------------------------------------------------------- KKT check
def _constraint_gradients(spec: SubproblemSpec, x):
    """Scalar constraints as (label, slack, gradient of slack)."""
    rows = []
    s = spec.b - spec.A @ x
    for lab, v, a in zip(spec.lin_labels, s, spec.A):
        rows.append((lab, float(v), -a))
    for q in spec.quads:
        rows.append((q.label, q.value(x), q.grad(x)))
    for c in spec.smooth:
        rows.append((c.label, float(c.fun(x)), np.asarray(c.grad(x), dtype=float)))
    return rows


def _residual_parts(spec, x, scalars, lam, Zs, gf, scale):
    stat = gf.copy()
    comp = 0.0
    dual = 0.0
    for (lab, slack, grad), lm in zip(scalars, lam):
        stat += lm * grad
        comp = max(comp, abs(lm * slack))
        dual = max(dual, -lm)
    for blk, Z in zip(spec.psd, Zs):
        stat += blk.adjoint(Z, spec.n)
        comp = max(comp, abs(float(np.sum(Z * blk.value(x)))))
        dual = max(dual, -float(np.linalg.eigvalsh(Z).min()))
    return max(float(np.max(np.abs(stat))) / scale if stat.size else 0.0, comp, dual)


def kkt_residual(spec: SubproblemSpec, x, multipliers: dict | None = None,
                 active_tol: float = 1e-6) -> float:
    """First-order optimality residual of ``x`` for the (possibly nonconvex) spec.

    Multipliers of the constraints whose slack (or PSD eigenvalue) is below
    ``active_tol`` are recovered by bounded least squares on the stationarity
    equation; the result is the maximum of the scaled stationarity norm, the
    complementary-slackness products, dual infeasibility and primal violation.
    If ``multipliers`` (label -> value) are supplied they are scored as a second
    candidate and the smaller residual is returned.
    """
    x = np.asarray(x, dtype=float)
    gf = spec.objective_grad(x)
    scale = max(1.0, float(np.max(np.abs(gf))) if gf.size else 1.0)
    scalars = _constraint_gradients(spec, x)
    feas = 0.0
    for _, slack, _ in scalars:
        feas = max(feas, -slack)
    eigs = []
    for blk in spec.psd:
        S = blk.value(x)
        w, V = np.linalg.eigh(S)
        eigs.append((w, V))
        feas = max(feas, -float(w.min()))

    # least-squares recovery over the active set
    cols, bounds_lo, owners = [], [], []
    for j, (lab, slack, grad) in enumerate(scalars):
        if slack <= active_tol:
            cols.append(grad)
            bounds_lo.append(0.0)
            owners.append(("s", j, None))
    for b, (blk, (w, V)) in enumerate(zip(spec.psd, eigs)):
        act = V[:, w <= active_tol]
        kdim = act.shape[1]
        for p in range(kdim):
            for q in range(p, kdim):
                E = np.zeros((kdim, kdim))
                E[p, q] = E[q, p] = 1.0 if p == q else 1.0 / math.sqrt(2.0)
                Z = act @ E @ act.T
                cols.append(blk.adjoint(Z, spec.n))
                bounds_lo.append(0.0 if p == q else -np.inf)
                owners.append(("p", b, (act, E)))
    lam = np.zeros(len(scalars))
    Zs = [np.zeros_like(blk.const) for blk in spec.psd]
    if cols:
        Amat = np.column_stack(cols)
        with np.errstate(invalid="ignore"):  # bvls warm start on rank-deficient columns
            sol = lsq_linear(Amat, -gf, bounds=(np.array(bounds_lo), np.full(len(cols), np.inf)),
                             method="bvls", tol=1e-14)
        for coef, (kind, idx, extra) in zip(sol.x, owners):
            if kind == "s":
                lam[idx] = coef
            else:
                act, E = extra
                Zs[idx] = Zs[idx] + coef * (act @ E @ act.T)
        Zs = [_psd_part(Z) for Z in Zs]
    best = max(_residual_parts(spec, x, scalars, lam, Zs, gf, scale), feas)

    if multipliers:
        lam2 = np.array([float(multipliers.get(lab, 0.0)) for lab, _, _ in scalars])
        Zs2 = [np.asarray(multipliers.get(blk.label, np.zeros_like(blk.const))) for blk in spec.psd]
        best = min(best, max(_residual_parts(spec, x, scalars, lam2, Zs2, gf, scale), feas))
    return float(best)


def _psd_part(Z):
    w, V = np.linalg.eigh(0.5 * (Z + Z.T))
    return (V * np.clip(w, 0.0, None)) @ V.T


# ----------------------------------------------------------------- start points
def strictly_feasible_start(spec: SubproblemSpec, rng: np.random.Generator,
                            margin: float = 1e-6, retries: int = 20) -> np.ndarray:
    """Find a point whose every slack / PSD eigenvalue exceeds ``margin``.

    Tries ``spec.anchor`` first, then a generic recipe built from the variable
    groups (scaled identity covariances, small random beams, small positive
    auxiliaries) whose beam and auxiliary magnitudes shrink on every retry.
    The recipe cannot satisfy surrogate rate bounds, which are negative at
    near-zero beams, so SCA subproblems rely on the anchor.
    """
    if spec.anchor is not None and spec.margin(spec.anchor) >= margin:
        return np.array(spec.anchor, dtype=float)
    delta = 0.05
    for attempt in range(retries):
        shrink = 0.3 ** attempt
        x = np.zeros(spec.n)
        for name, (sl, kind) in spec.groups.items():
            size = sl.stop - sl.start
            if kind.startswith("herm"):
                M, share = spec.meta["herm_dims"][name]
                diag = _herm_identity(M)
                x[sl] = (1 - delta) * share / M * diag
            elif kind == "beam":
                x[sl] = 1e-3 * shrink * rng.standard_normal(size)
            elif kind in ("r", "g", "d"):
                x[sl] = 1e-3 * shrink
        if spec.margin(x) >= margin:
            return x
    raise RuntimeError("no strictly feasible start found; supply an anchor point")


def _herm_identity(M):
    v = np.zeros(M * M)
    v[:M] = 1.0
    return v
