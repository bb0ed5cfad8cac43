"""Free energy of a discrete stack, its analytic gradient, and EL residuals.

The functional per period cell (reduced units, no dimensional prefactor) is

    E = p sum_n int [ (f_n^2-1)^2/2 + f_n'^2/k^2 + V_n^2 f_n^2/k^2 ] dx
      + (r p/2) sum_gaps int [ f_n^2 + f_{n-1}^2 - 2 f_n f_{n-1} cos Phi ] dx
      + (1/k^2) iint (h - H)^2 dx dz

with V_n = phi_n' - A_x(., z_n), Phi the gauge-invariant phase difference
across a gap, and h = <h> + lap(xi).  x-integrals are trapezoid sums on the
uniform periodic grid (spectrally accurate); the gap integral of A_z uses an
Mz-interval trapezoid by default (``gap_rule="exact"`` switches to modewise
z-integration, useful when comparing against continuum expansions).

The gradient is assembled by hand in reverse mode through the spectral
operators; its correctness is pinned by finite-difference tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _spectral, fields
from .core import (BIPERIODIC, Configuration, LatticeGeometry, ModelParams,
                   TWO_PI)
from .fields import gap_weights_for, transform_for


@dataclass(frozen=True)
class EnergyBreakdown:
    condensation: float
    josephson: float
    magnetic: float

    @property
    def total(self) -> float:
        return self.condensation + self.josephson + self.magnetic

    def to_dict(self) -> dict:
        return {"condensation": self.condensation, "josephson": self.josephson,
                "magnetic": self.magnetic, "total": self.total}


@dataclass
class Tangent:
    """Gradient (or variation) with one entry per configuration degree of freedom."""

    f: np.ndarray
    chi: np.ndarray
    alpha: np.ndarray
    omega: float
    d: float
    xi: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.f.ravel(), self.chi.ravel(), self.alpha,
                               [self.omega, self.d], self.xi.ravel()])

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.f)), np.max(np.abs(self.chi)),
                         np.max(np.abs(self.alpha)), abs(self.omega), abs(self.d),
                         np.max(np.abs(self.xi)) if self.xi.size else 0.0))


def pack_configuration(cfg: Configuration) -> np.ndarray:
    return np.concatenate([cfg.f.ravel(), cfg.chi.ravel(), cfg.alpha,
                           [cfg.omega, cfg.d], cfg.xi.ravel()])


def unpack_configuration(vec: np.ndarray, template: Configuration) -> Configuration:
    P, Mx = template.f.shape
    n = P * Mx
    f = vec[:n].reshape(P, Mx).copy()
    chi = vec[n:2 * n].reshape(P, Mx).copy()
    alpha = vec[2 * n:2 * n + P].copy()
    omega, d = float(vec[2 * n + P]), float(vec[2 * n + P + 1])
    xi = vec[2 * n + P + 2:].reshape(template.xi.shape).copy()
    return Configuration(template.geom, template.disc, f, chi, alpha, omega, d, xi)


def pack_slices(template: Configuration) -> dict:
    """Index ranges of each coordinate group inside the packed vector."""
    P, Mx = template.f.shape
    n = P * Mx
    return {
        "f": slice(0, n),
        "chi": slice(n, 2 * n),
        "alpha": slice(2 * n, 2 * n + P),
        "omega": slice(2 * n + P, 2 * n + P + 1),
        "d": slice(2 * n + P + 1, 2 * n + P + 2),
        "xi": slice(2 * n + P + 2, 2 * n + P + 2 + template.xi.size),
    }


def _assemble(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
              gap_rule: str, need_grad: bool):
    tr = transform_for(geom, cfg.disc, params.p)
    W = gap_weights_for(geom, cfg.disc, params.p, gap_rule)
    q, p, N, kap, r = geom.q, params.p, geom.N, params.kappa, params.r
    period = 2.0 * q
    Mx = cfg.disc.Mx
    hx = period / Mx
    hmean = geom.mean_field(params)
    planes = list(geom.stored_planes())
    P = len(planes)
    x = cfg.x

    # A_x on the stored planes
    z_planes = np.array([n * p for n in planes])
    if geom.kind == BIPERIODIC:
        t2_planes = np.array([n / N for n in planes])
        ax = hmean * z_planes[:, None] + tr.rows(cfg.xi, t2_planes, "dz")
    else:
        ax = hmean * z_planes[:, None] + tr.rows_dz(cfg.xi, z_planes)

    Dchi = _spectral.dx_periodic(cfg.chi, period)
    slopes = np.array([cfg.slope(n) for n in planes])
    V = slopes[:, None] + Dchi - ax
    Df = _spectral.dx_periodic(cfg.f, period)

    cond = p * hx * float(np.sum(0.5 * (cfg.f ** 2 - 1.0) ** 2
                                 + (Df ** 2 + V ** 2 * cfg.f ** 2) / kap ** 2))

    # gaps 1..N: phase differences and moduli of the bounding planes
    gap_int = tr.gap_dx_integral(cfg.xi, W)      # int_gap d_x xi dz
    if geom.kind == BIPERIODIC:
        f0, alpha0, slope0, chi0 = cfg.plane_zero_parts()
    Phi = np.empty((N, Mx))
    f_lo = np.empty((N, Mx))
    f_up = np.empty((N, Mx))
    for n in range(1, N + 1):
        up = geom.plane_row(n)
        if n == 1 and geom.kind == BIPERIODIC:
            a_lo, s_lo, c_lo, fl = alpha0, slope0, chi0, f0
        else:
            lo = geom.plane_row(n - 1)
            a_lo, s_lo, c_lo, fl = cfg.alpha[lo], cfg.slope(n - 1), cfg.chi[lo], cfg.f[lo]
        Phi[n - 1] = (cfg.alpha[up] - a_lo) + (cfg.slope(n) - s_lo) * x \
            + (cfg.chi[up] - c_lo) + gap_int[n - 1]
        f_lo[n - 1], f_up[n - 1] = fl, cfg.f[up]
    cosP, sinP = np.cos(Phi), np.sin(Phi)
    jos = 0.5 * r * p * hx * float(np.sum(f_up ** 2 + f_lo ** 2 - 2.0 * f_up * f_lo * cosP))

    if geom.kind == BIPERIODIC:
        dh = tr.laplacian(cfg.xi) + (hmean - params.H)
        mag = tr.weight * float(np.sum(dh ** 2)) / kap ** 2
    else:
        dh = tr.laplacian(cfg.xi) + (hmean - params.H)   # interior rows; hmean = H
        mag = (2.0 * q / Mx) * tr.hz * float(np.sum(dh ** 2)) / kap ** 2

    breakdown = EnergyBreakdown(cond, jos, mag)
    if not need_grad:
        return breakdown, None

    # ---- reverse sweep ----------------------------------------------------
    gf = np.zeros_like(cfg.f)
    gchi = np.zeros_like(cfg.chi)
    galpha = np.zeros(P)
    gomega = 0.0
    gd = 0.0
    gxi = np.zeros_like(cfg.xi)

    # condensation block
    gf += p * hx * (2.0 * (cfg.f ** 2 - 1.0) * cfg.f + (2.0 / kap ** 2) * V ** 2 * cfg.f)
    gf += p * hx * (2.0 / kap ** 2) * _spectral.dx_adjoint(Df, period)
    cot_V = p * hx * (2.0 / kap ** 2) * V * cfg.f ** 2
    gchi += _spectral.dx_adjoint(cot_V, period)
    gomega += float(np.sum(cot_V)) / period
    # A_x rows enter V with a minus sign
    if geom.kind == BIPERIODIC:
        gxi += tr.rows_adjoint(-cot_V, t2_planes, "dz")
    else:
        gxi += tr.rows_dz_adjoint(-cot_V, z_planes)

    # josephson block
    cot_fup = r * p * hx * (f_up - f_lo * cosP)
    cot_flo = r * p * hx * (f_lo - f_up * cosP)
    cot_Phi = r * p * hx * f_up * f_lo * sinP
    for n in range(1, N + 1):
        up = geom.plane_row(n)
        gf[up] += cot_fup[n - 1]
        gchi[up] += cot_Phi[n - 1]
        galpha[up] += float(np.sum(cot_Phi[n - 1]))
        if n == 1 and geom.kind == BIPERIODIC:
            rowN = geom.plane_row(N)
            gf[rowN] += _spectral.shift_periodic(cot_flo[0], -geom.s, period)
            gchi[rowN] -= _spectral.shift_periodic(cot_Phi[0], -geom.s, period)
            total = float(np.sum(cot_Phi[0]))
            galpha[rowN] -= total                      # alpha_0 = alpha_N + ...
            gomega -= total * geom.s / period
            gd += total
        else:
            lo = geom.plane_row(n - 1)
            gf[lo] += cot_flo[n - 1]
            gchi[lo] -= cot_Phi[n - 1]
            galpha[lo] -= float(np.sum(cot_Phi[n - 1]))
    gxi += tr.gap_dx_adjoint(cot_Phi, W)

    # magnetic block
    if geom.kind == BIPERIODIC:
        gxi += tr.laplacian_adjoint((2.0 / kap ** 2) * tr.weight * dh)
    else:
        gxi += tr.laplacian_adjoint((2.0 / kap ** 2) * (2.0 * q / Mx) * tr.hz * dh)

    return breakdown, Tangent(gf, gchi, galpha, gomega, gd, gxi)


def energy(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
           gap_rule: str = "trapezoid") -> EnergyBreakdown:
    """Evaluate the free energy of a configuration (per period cell)."""
    breakdown, _ = _assemble(cfg, geom, params, gap_rule, need_grad=False)
    return breakdown


def gradient(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
             gap_rule: str = "trapezoid") -> Tangent:
    """Partial derivatives with respect to every configuration degree of freedom."""
    _, tan = _assemble(cfg, geom, params, gap_rule, need_grad=True)
    return tan


def energy_and_gradient(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
                        gap_rule: str = "trapezoid"):
    return _assemble(cfg, geom, params, gap_rule, need_grad=True)


def energy_per_area(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
                    gap_rule: str = "trapezoid") -> float:
    return energy(cfg, geom, params, gap_rule).total / geom.cell_area(params)


# -- Euler--Lagrange residuals -------------------------------------------------

def el_residuals(cfg: Configuration, geom: LatticeGeometry, params: ModelParams) -> dict:
    """Sup-norms of the stationarity system's discrete residuals.

    Keys: ``order_parameter`` (second-order equation for f), ``field_jump``
    (field discontinuity across a plane vs. its sheet current),
    ``josephson_field`` (in-gap d_x h vs. the tunneling current),
    ``continuity`` (in-plane current conservation), and ``field_z_uniformity``
    (z-variation of h inside the gaps, which vanishes at stationarity).
    Gap fields are interior-row z-averages.
    """
    p, kap, r = params.p, params.kappa, params.r
    period = 2.0 * geom.q
    N = geom.N
    fs = fields.observables(cfg, geom, params)
    Phi, f_lo, f_up = fields.phase_differences(cfg, geom, params)
    _, h_rows, hbar = fields.local_field(cfg, geom, params)
    cosP, sinP = np.cos(Phi), np.sin(Phi)
    V, f = fs.V, cfg.f

    # (a) order-parameter equation per stored plane
    d2f = _spectral.dx_periodic(_spectral.dx_periodic(f, period), period)
    res_f = -d2f / kap ** 2 + (f ** 2 - 1.0) * f + V ** 2 * f / kap ** 2
    coupling = np.zeros_like(f)
    for n in range(1, N + 1):
        up, g = geom.plane_row(n), n - 1
        coupling[up] += 0.5 * r * (f_lo[g] * cosP[g] - f[up])
        if n >= 2 or geom.kind != BIPERIODIC:
            lo = geom.plane_row(n - 1)
            coupling[lo] += 0.5 * r * (f_up[g] * cosP[g] - f[lo])
    if geom.kind == BIPERIODIC:
        wrap = _spectral.shift_periodic(f_up[0] * cosP[0], -geom.s, period)
        coupling[geom.plane_row(N)] += 0.5 * r * (wrap - f[geom.plane_row(N)])
    res_f -= coupling

    # (b) jump of h across each plane vs. sheet current
    jumps = []
    for n in range(1, N + 1):
        row = geom.plane_row(n)
        if n < N:
            jump = hbar[n] - hbar[n - 1]
        elif geom.kind == BIPERIODIC:
            jump = _spectral.shift_periodic(hbar[0], -geom.s, period) - hbar[N - 1]
        else:
            jump = params.H - hbar[N - 1]
        jumps.append(jump + p * f[row] ** 2 * V[row])
    if geom.kind != BIPERIODIC:
        jumps.append(hbar[0] - params.H + p * f[geom.plane_row(0)] ** 2 * V[geom.plane_row(0)])
    res_jump = np.stack(jumps)

    # (c) d_x h inside each gap vs. the Josephson current density
    res_hx = _spectral.dx_periodic(hbar, period) - 0.5 * r * kap ** 2 * p * f_up * f_lo * sinP

    # (d) current conservation per stored plane
    div = _spectral.dx_periodic(f ** 2 * V, period) / kap ** 2
    source = np.zeros_like(f)
    for n in range(1, N + 1):
        up, g = geom.plane_row(n), n - 1
        source[up] += 0.5 * r * f_up[g] * f_lo[g] * sinP[g]
        if n >= 2 or geom.kind != BIPERIODIC:
            source[geom.plane_row(n - 1)] -= 0.5 * r * f_up[g] * f_lo[g] * sinP[g]
    if geom.kind == BIPERIODIC:
        wrap = _spectral.shift_periodic(f_up[0] * f_lo[0] * sinP[0], -geom.s, period)
        source[geom.plane_row(N)] -= 0.5 * r * wrap
    res_cu = div - source

    # (e) z-uniformity of h within each gap (interior rows)
    Mz = cfg.disc.Mz
    dz_var = 0.0
    for n in range(1, N + 1):
        rows = np.arange((n - 1) * Mz + 1, n * Mz)
        block = h_rows[rows]
        dz_var = max(dz_var, float(np.max(block.max(axis=0) - block.min(axis=0))))

    sup = lambda a: float(np.max(np.abs(a)))
    return {
        "order_parameter": sup(res_f),
        "field_jump": sup(res_jump),
        "josephson_field": sup(res_hx),
        "continuity": sup(res_cu),
        "field_z_uniformity": dz_var,
    }
