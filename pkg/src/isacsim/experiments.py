"""Experiment orchestration: configuration, protocol timing, sweeps and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as met
from .channel import SPEED_OF_LIGHT, ChannelParams, sample_narrowband, sample_wideband, stream
from .metrics import LinkBudget, db2lin, evaluate, lin2db, root_crb_deg
from .sca import ScaOptions, run_sca
from .wideband import run_sca_wideband

log = logging.getLogger(__name__)

# desk-scale defaults per band (bandwidth Hz, distance m, taps)
BAND_DEFAULTS = {
    "narrow": {"W": 100e3, "D": 300.0, "L": 1, "L_tilde": 1},
    "wide": {"W": 1e6, "D": 1500.0, "L": 4, "L_tilde": 4},
}


@dataclass
class SystemConfig:
    """Inputs of every experiment family.  Powers in dB, angles in degrees.

    ``W``, ``D``, ``L`` and ``L_tilde`` left as ``None`` take the desk-scale
    default of the selected band.  Linear-scale quantities are derived once in
    ``__post_init__``.
    """

    M: int = 4
    band: str = "narrow"
    W: float | None = None
    Delta: float = 1e-3
    D: float | None = None
    theta_A: float = 0.0
    theta_B: float = 0.0
    rho_c: float = 15.0
    rho_s: float = 7.0
    eta: float = 50.0
    rho_si: float = -80.0
    mu: float = 1.5e4
    beta: float = 0.0
    beta0: float | None = None
    pdp_decay: float = float(np.exp(-1.0))
    L: int | None = None
    L_tilde: int | None = None
    spacing_ratio: float = 0.5
    velocity: float = 10.0
    carrier: float = 3e9
    alpha_policy: str = "unit"
    seed: int = 2024
    seeds: int = 20
    weights: list = field(default_factory=lambda: [round(0.1 * j, 10) for j in range(11)])
    modes: list = field(default_factory=lambda: ["full", "half"])
    sca: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.band not in met.BANDS:
            raise ValueError(f"band must be one of {met.BANDS}")
        if self.M < 1:
            raise ValueError("M must be positive")
        for m in self.modes:
            if m not in met.MODES:
                raise ValueError(f"unknown mode {m!r}")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError("weights must lie in [0, 1]")
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        unknown = set(self.sca) - {f.name for f in dataclasses.fields(ScaOptions)}
        if unknown:
            raise ValueError(f"unknown sca options {sorted(unknown)}")
        defaults = BAND_DEFAULTS[self.band]
        self.W_hz = float(self.W if self.W is not None else defaults["W"])
        self.D_m = float(self.D if self.D is not None else defaults["D"])
        self.taps = int(self.L if self.L is not None else defaults["L"])
        self.si_taps = int(self.L_tilde if self.L_tilde is not None else defaults["L_tilde"])
        # the only dB -> linear conversion point
        self.lin = {name: float(db2lin(getattr(self, name)))
                    for name in ("rho_c", "rho_s", "eta", "rho_si")}
        self.beta_lin = float(db2lin(self.beta))
        self.beta0_lin = None if self.beta0 is None else float(db2lin(self.beta0))

    # ----------------------------------------------------------------- io
    @classmethod
    def from_dict(cls, doc: dict) -> "SystemConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SystemConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def for_band(self, band: str) -> "SystemConfig":
        """Copy for another band; band-dependent fields fall back to that band's defaults."""
        if band == self.band:
            return self
        return self.replace(band=band, W=None, D=None, L=None, L_tilde=None)

    # ------------------------------------------------------------ derived
    def channel_params(self) -> ChannelParams:
        return ChannelParams(
            M=self.M, theta=(math.radians(self.theta_A), math.radians(self.theta_B)),
            beta=self.beta_lin, spacing_ratio=self.spacing_ratio, velocity=self.velocity,
            carrier=self.carrier, L=self.taps if self.band == "wide" else 1,
            L_tilde=self.si_taps if self.band == "wide" else 1, pdp_decay=self.pdp_decay,
            beta0=self.beta0_lin, alpha_policy=self.alpha_policy)

    def budget(self) -> LinkBudget:
        t = derive_timing(self)
        return LinkBudget(self.lin["rho_c"], self.lin["rho_s"], self.lin["eta"],
                          self.lin["rho_si"], t["N"])

    def sca_options(self) -> ScaOptions:
        return ScaOptions(**self.sca)


def derive_timing(config: SystemConfig) -> dict:
    """CPI length (and PRI structure for wideband) from bandwidth, window and distance."""
    if not (config.Delta > 0 and config.W_hz > 0 and config.D_m > 0):
        raise ValueError("Delta, W and D must be positive")
    samples = round(config.Delta * config.W_hz)
    if config.band == "narrow":
        if samples < 2 or samples % 2:
            raise ValueError(f"CPI of {samples} samples cannot be split into two halves")
        return {"2N": samples, "N": samples // 2}
    tau = round(config.D_m / SPEED_OF_LIGHT * config.W_hz)
    N0 = 2 * tau
    if N0 == 0:
        raise ValueError("delay rounds to zero samples; PRI is empty")
    U = samples // N0
    if U == 0:
        raise ValueError(f"CPI of {samples} samples is shorter than one PRI ({N0} samples)")
    return {"tau": tau, "N0": N0, "U": U, "2N": U * N0, "N": U * N0 // 2}


# ------------------------------------------------------------------ sweeps
@dataclass
class TradeoffPoint:
    band: str
    mode: str
    weight: float
    seed: int
    status: str
    R_sum: float = float("nan")
    C_sum: float = float("nan")
    root_crb_deg: float = float("nan")
    objective: float = float("nan")
    objective_single: float = float("nan")
    comm_power: tuple = ()
    sensing_power: tuple = ()
    tap_power: tuple = ()
    iterations: int = 0
    kkt_residual: float = float("nan")

    def row(self) -> dict:
        out = {"band": self.band, "mode": self.mode, "weight": self.weight, "seed": self.seed,
               "status": self.status, "R_sum": self.R_sum, "C_sum": self.C_sum,
               "root_crb_deg": self.root_crb_deg, "objective": self.objective,
               "objective_single": self.objective_single}
        for name, vals in (("comm_power", self.comm_power), ("sensing_power", self.sensing_power)):
            for j, (k, i) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                out[f"{name}_{'AB'[k]}{i + 1}"] = vals[j] if vals else float("nan")
        for l, p in enumerate(self.tap_power):
            out[f"tap_power_{l}"] = p
        out["iterations"] = self.iterations
        out["kkt_residual"] = self.kkt_residual
        return out


def sample_channels(config: SystemConfig, seed: int):
    rng = stream(config.seed, seed, f"channel:{config.band}")
    sampler = sample_narrowband if config.band == "narrow" else sample_wideband
    return sampler(config.channel_params(), rng)


def run_point(config: SystemConfig, mode: str, weight: float, seed: int):
    """One SCA run; returns ``(design, state, channels)``."""
    channels = sample_channels(config, seed)
    rng = stream(config.seed, seed, f"init:{config.band}:{mode}")
    runner = run_sca if config.band == "narrow" else run_sca_wideband
    design, state = runner(channels, config.budget(), weight, mode, mu=config.mu,
                           options=config.sca_options(), rng=rng)
    return design, state, channels


def _point_task(args) -> TradeoffPoint:
    config, mode, weight, seed = args
    try:
        design, state, channels = run_point(config, mode, weight, seed)
    except Exception as exc:  # recorded per row, the sweep goes on
        log.warning("run (%s, %s, %s) failed: %s", mode, weight, seed, exc)
        return TradeoffPoint(config.band, mode, weight, seed, status=f"failed: {exc}")
    m = evaluate(design, channels, config.budget())
    C = m["C"]
    return TradeoffPoint(
        band=config.band, mode=mode, weight=weight, seed=seed,
        status="converged" if state.converged else "max-iter",
        R_sum=m["R"], C_sum=C, root_crb_deg=root_crb_deg(C) if np.isfinite(C) else float("inf"),
        objective=state.trajectory[-1], objective_single=state.single_run_objective,
        comm_power=tuple(design.comm_power().ravel()),
        sensing_power=tuple(design.sensing_power().ravel()),
        tap_power=tuple(np.sum(np.abs(design.beams) ** 2, axis=(0, 1, 3)))
        if config.band == "wide" else (),
        iterations=state.t, kkt_residual=state.kkt_residual)


def _run_tasks(tasks, workers: int):
    if workers <= 1:
        return [_point_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_point_task, tasks))


def tradeoff_sweep(config: SystemConfig) -> list:
    """Every (mode, weight, seed) point of the weighted rate/CRB tradeoff."""
    tasks = [(config, mode, float(w), seed) for mode in config.modes for w in config.weights
             for seed in range(config.seeds)]
    points = _run_tasks(tasks, config.workers)
    return sorted(points, key=lambda p: (p.mode, p.weight, p.seed))


def rician_sweep(config: SystemConfig, betas_db, regimes=(0.1, 0.9), degrees: bool = True):
    """Mean sum rate and root-CRB versus the Rician factor (given in dB)."""
    rows = []
    for beta_db in betas_db:
        cfg = config.replace(beta=float(beta_db), weights=list(regimes))
        points = tradeoff_sweep(cfg)
        for mode in cfg.modes:
            for w in regimes:
                sel = [p for p in points if p.mode == mode and p.weight == w
                       and not p.status.startswith("failed")]
                Cs = np.array([p.C_sum for p in sel])
                root = np.sqrt(Cs)
                rows.append({
                    "beta_db": float(beta_db), "beta": float(db2lin(beta_db)), "mode": mode,
                    "weight": w, "n": len(sel),
                    "mean_R": float(np.mean([p.R_sum for p in sel])) if sel else float("nan"),
                    "mean_C": float(np.mean(Cs)) if sel else float("nan"),
                    "mean_root_crb": float(np.mean(np.degrees(root) if degrees else root))
                    if sel else float("nan"),
                    "root_crb_unit": "deg" if degrees else "rad",
                })
    return rows


def power_report(config: SystemConfig, bands=("narrow", "wide")) -> list:
    """Communication versus dedicated-sensing power per (band, mode, weight, seed)."""
    rows = []
    for band in bands:
        for p in tradeoff_sweep(config.for_band(band)):
            if p.status.startswith("failed"):
                rows.append({"band": band, "mode": p.mode, "weight": p.weight, "seed": p.seed,
                             "status": p.status})
                continue
            comm, sens = float(np.sum(p.comm_power)), float(np.sum(p.sensing_power))
            rows.append({"band": band, "mode": p.mode, "weight": p.weight, "seed": p.seed,
                         "status": p.status, "comm_power": comm, "sensing_power": sens,
                         "total_power": comm + sens,
                         "sensing_fraction": sens / (comm + sens) if comm + sens > 0 else 0.0})
    return rows


def convergence_trace(config: SystemConfig, weight: float, mode: str, seed: int) -> list:
    """Per-iteration rows (t, objective, R, C, kkt_residual) of one run."""
    _, state, _ = run_point(config, mode, weight, seed)
    return [{"t": r["t"], "objective": r["objective"], "R": r["R"], "C": r["C"],
             "kkt_residual": r["kkt_residual"]} for r in state.trace]


def seed_averages(points: list, mode: str, n_resamples: int = 2000) -> list:
    """Per-weight means of R_sum and C_sum with bootstrap standard errors."""
    from scipy.stats import bootstrap

    out = []
    for w in sorted({p.weight for p in points if p.mode == mode}):
        sel = [p for p in points if p.mode == mode and p.weight == w
               and not p.status.startswith("failed")]
        row = {"weight": w, "n": len(sel)}
        for name in ("R_sum", "C_sum"):
            vals = np.array([getattr(p, name) for p in sel])
            row[name] = float(np.mean(vals))
            if len(vals) > 1 and np.all(np.isfinite(vals)) and np.ptp(vals) > 0:
                res = bootstrap((vals,), np.mean, n_resamples=n_resamples,
                                random_state=np.random.default_rng(0))
                row[name + "_se"] = float(res.standard_error)
            else:
                row[name + "_se"] = 0.0
        out.append(row)
    return out


def pareto_violations(points: list, mode: str) -> list:
    """Adjacent weights where mean R or mean C decreases by more than one standard error."""
    rows = seed_averages(points, mode)
    bad = []
    for a, b in zip(rows, rows[1:]):
        for name in ("R_sum", "C_sum"):
            if not (np.isfinite(a[name]) and np.isfinite(b[name])):
                continue
            slack = max(a[name + "_se"], b[name + "_se"])
            if b[name] < a[name] - slack:
                bad.append((name, a["weight"], b["weight"], a[name], b[name], slack))
    return bad


# ------------------------------------------------------------------ output
def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def write_csv(path, rows: list, config: SystemConfig | None = None) -> Path:
    """CSV with a header; metadata columns appended to every row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"git_describe": git_describe(), "config_hash": config.digest() if config else ""}
    columns = []
    for r in rows:
        for c in r:
            if c not in columns:
                columns.append(c)
    columns += list(meta)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="", lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({**{k: _fmt(v) for k, v in r.items()}, **meta})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


# -------------------------------------------------------------- validation
@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    note: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = float(self.measured)


def validate(config: SystemConfig, quick: bool = False) -> list:
    """Run every oracle once at desk scale plus two mutation canaries."""
    from . import oracles
    from .sca import Layout, build_problem, build_surrogates, initial_point, link_rows
    from .solver import solve
    from .wideband import zf_nullspace_basis

    if config.M > 4:
        raise ValueError("validation runs at desk scale (M <= 4)")
    checks = []
    rng = stream(config.seed, 0, "validate")
    n_designs = 3 if quick else 10

    def crb_check(crb_fn, name):
        cfg = config.for_band("narrow")
        worst = 0.0
        for j in range(n_designs):
            ch = sample_narrowband(cfg.channel_params(), rng)
            budget = LinkBudget(cfg.lin["rho_c"], cfg.lin["rho_s"], cfg.lin["eta"],
                                cfg.lin["rho_si"], 8)
            d = oracles.random_design(ch, "narrow", ("full", "half")[j % 2], rng)
            for k in range(2):
                ref = 1.0 / oracles.fim_oracle_narrowband(d, ch, budget, k, 8)
                worst = max(worst, abs(crb_fn(d, ch, budget, k) - ref) / ref)
        return Check(name, worst < 1e-8, worst, 1e-8)

    checks.append(crb_check(met.crb, "crb vs dense FIM (narrowband)"))

    cfg_w = config.for_band("wide")
    worst_rel, worst_cross = 0.0, 0.0
    for j in range(n_designs):
        ch = sample_wideband(dataclasses.replace(cfg_w.channel_params(), L=2, L_tilde=2), rng)
        bases = [zf_nullspace_basis(ch.h_taps(k)) for k in range(2)]
        d = oracles.random_design(ch, "wide", ("full", "half")[j % 2], rng, bases=bases)
        budget = LinkBudget(cfg_w.lin["rho_c"], cfg_w.lin["rho_s"], cfg_w.lin["eta"],
                            cfg_w.lin["rho_si"], 8)
        for k in range(2):
            J, Jx = oracles.fim_oracle_wideband(d, ch, budget, k, U_small=2, N0=8)
            worst_rel = max(worst_rel, abs(met.crb(d, ch, budget, k) * J - 1.0))
            worst_cross = max(worst_cross, abs(Jx))
    checks.append(Check("crb vs dense FIM (wideband)", worst_rel < 1e-8, worst_rel, 1e-8))
    checks.append(Check("DAM cross-term trace", worst_cross < 1e-10, worst_cross, 1e-10))

    # surrogate tightness and lower bound
    cfg = config.for_band("narrow")
    budget = cfg.budget()
    ch = sample_narrowband(cfg.channel_params(), rng)
    lay = Layout("narrow", "full", ch)
    rows = link_rows(lay, ch, budget)
    x_t = initial_point(lay, ch, budget, rng)
    gam, Dsur = build_surrogates(lay, rows, budget, x_t)
    from .sca import true_gamma
    tight = max(abs(gam[key](x_t) - true_gamma(rows, budget, key, x_t)) for key in lay.links)
    checks.append(Check("surrogate tightness", tight < 1e-10, tight, 1e-10))
    X = oracles.sample_designs(lay, rng, 200)
    gap = 0.0
    for x in X:
        for key in lay.links:
            gap = max(gap, gam[key](x) - true_gamma(rows, budget, key, x))
    checks.append(Check("surrogate lower bound", gap <= 1e-10, gap, 1e-10))

    # solver against rejection sampling at M = 2
    cfg2 = config.for_band("narrow").replace(M=2)
    shortfall = -np.inf
    for j in range(2 if quick else 5):
        ch = sample_narrowband(cfg2.channel_params(), rng)
        lay = Layout("narrow", ("full", "half")[j % 2], ch)
        rows2 = link_rows(lay, ch, budget)
        x0 = initial_point(lay, ch, budget, rng)
        spec = build_problem(lay, ch, budget, 0.5, cfg2.mu, x_t=x0, rows=rows2)
        sol = solve(spec, x0)
        best = oracles.rejection_sampling_best(spec, lay, rows2, x0, budget, rng,
                                               5000 if quick else 20000)
        shortfall = max(shortfall, best - sol.objective)
    checks.append(Check("solver vs rejection sampling", shortfall <= 1e-3, shortfall, 1e-3))

    # symbol-level SINR
    worst = 0.0
    for band in ("narrow", "wide"):
        cfg_b = config.for_band(band)
        ch = sample_channels(cfg_b, 0)
        bases = None if band == "narrow" else [zf_nullspace_basis(ch.h_taps(k)) for k in range(2)]
        d = oracles.random_design(ch, band, "full", rng, bases=bases)
        b = cfg_b.budget()
        for k in range(2):
            g = met.sinr(d, ch, b, k, 0)
            ge = oracles.empirical_sinr(d, ch, b, k, 0, 100000, rng)
            worst = max(worst, abs(ge / g - 1.0))
    checks.append(Check("empirical SINR", worst < 0.03, worst, 0.03))

    # timing constants at the reference parameters
    ref_n = derive_timing(config.for_band("narrow").replace(W=100e3, Delta=1e-3))
    ref_w = derive_timing(config.for_band("wide").replace(W=100e6, D=300.0, Delta=1e-3))
    ok = (ref_n["2N"] == 100 and (ref_w["tau"], ref_w["N0"], ref_w["2N"]) == (100, 200, 100000))
    checks.append(Check("timing constants", ok, float(not ok), 0.0))

    # mutation canaries: the checks above must catch these
    def flipped_crb(design, channels, budget, k):
        adot = met.steering_derivative(channels.theta[k], channels.M, channels.spacing_ratio)
        info = 0.0
        for i in range(2):
            Q = design.Q[k, i]
            phi = met.residual_si_power(Q, channels.g_taps(k), budget.eta)
            info += float(np.real(adot.conj() @ Q @ adot)) / (1.0 - budget.rho_si * phi)
        return 1.0 / (2.0 * budget.rho_s * budget.N * abs(channels.alpha[k]) ** 2 * info)

    canary = crb_check(flipped_crb, "canary")
    checks.append(Check("canary: CRB sign flip detected", not canary.passed, canary.measured,
                        1e-8))
    ch = sample_channels(cfg_w, 0)
    bases = [zf_nullspace_basis(ch.h_taps(k)) for k in range(2)]
    d = oracles.random_design(ch, "wide", "full", rng, bases=bases)
    h1 = ch.h_taps(0)[1]
    d.beams[0, :, 0] += 1e-3 * h1 / np.vdot(h1, h1).real
    try:
        met.sinr_wideband(d, ch, cfg_w.budget(), 1, 1)
        detected = False
    except ValueError:
        detected = True
    checks.append(Check("canary: ZF violation rejected", detected, met.zf_residual(d, ch),
                        met.ZF_TOL))
    return checks


__all__ = ["SystemConfig", "derive_timing", "TradeoffPoint", "tradeoff_sweep", "rician_sweep",
           "power_report", "convergence_trace", "validate", "write_csv", "lin2db",
           "seed_averages", "pareto_violations"]
