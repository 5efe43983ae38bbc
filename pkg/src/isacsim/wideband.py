"""Wideband (delay-alignment modulation) beamforming by SCA.

Every transmit beam is split into per-tap beams ``w_{k,i,l}`` that must not
leak into the other taps' channels (``h_{k,l'}^H w_{k,i,l} = 0`` for ``l' != l``).
The constraint is eliminated by writing ``w_{k,i,l} = B_{k,l} v_{k,i,l}`` with
an orthonormal basis ``B_{k,l}`` of the admissible subspace, so zero-forcing
holds to machine precision at every iterate.  The optimisation itself reuses
the shared lifted-problem engine in :mod:`isacsim.sca`.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import null_space

from .sca import Layout, ScaOptions, build_problem, run_layout

RANK_TOL = 1e-10


class RankDeficiencyError(ValueError):
    pass


def zf_nullspace_basis(h_taps, tol: float = RANK_TOL) -> list:
    """Per-tap orthonormal bases of the subspace orthogonal to the other taps.

    ``h_taps`` has shape (L, M).  Returns a list of L matrices of shape
    (M, M - L + 1).  Raises :class:`RankDeficiencyError` naming the taps whose
    channels are linearly dependent.
    """
    h = np.atleast_2d(np.asarray(h_taps, dtype=complex))
    L, M = h.shape
    if L > M:
        raise RankDeficiencyError(f"zero-forcing needs L <= M, got L={L}, M={M}")
    bases = []
    for l in range(L):
        others = [j for j in range(L) if j != l]
        if not others:
            bases.append(np.eye(M, dtype=complex))
            continue
        H = h[others]
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] <= tol * max(sv[0], 1.0):
            raise RankDeficiencyError(f"channels of taps {others} are linearly dependent "
                                      f"(smallest singular value {sv[-1]:.2e})")
        B = null_space(H.conj())
        if B.shape[1] != M - L + 1:
            raise RankDeficiencyError(f"taps {others} leave a {B.shape[1]}-dimensional subspace")
        bases.append(B)
    return bases


def wideband_layout(channels, mode: str) -> Layout:
    bases = [zf_nullspace_basis(channels.h_taps(k)) for k in range(2)]
    return Layout("wide", mode, channels, bases=bases)


def build_subproblem_wideband(state_x, channels, budget, weight, mode, mu: float = 1.5e4):
    """Convex wideband subproblem expanded at the lifted point ``state_x``."""
    layout = wideband_layout(channels, mode)
    return build_problem(layout, channels, budget, weight, mu, x_t=state_x)


def run_sca_wideband(channels, budget, weight: float, mode: str, mu: float = 1.5e4,
                     options: ScaOptions | None = None, rng=None):
    """Wideband joint beamforming by SCA; returns ``(design, state)``."""
    layout = wideband_layout(channels, mode)
    return run_layout(layout, channels, budget, weight, mu, options, rng)
