"""Gauge-invariant observables, the periodic Poisson solver, and gauge fixing.

Observables use exact modewise z-integration for the inter-plane gaps so that
cross-method identities (direct phase difference vs. the Stokes-path formula)
hold to machine precision; the energy functional keeps its own documented
trapezoid rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import _spectral, core
from .core import (BIPERIODIC, Configuration, Discretization,
                   FluxMismatchError, LatticeGeometry, ModelParams, TWO_PI)


@lru_cache(maxsize=64)
def transform_for(geom: LatticeGeometry, disc: Discretization, p: float):
    if geom.kind == BIPERIODIC:
        return _spectral.TorusTransform(geom.q, geom.s, geom.N, p, disc.Mx, disc.Mz)
    return _spectral.StripTransform(geom.q, geom.N, p, disc.Mx, disc.Mz)


@lru_cache(maxsize=64)
def gap_weights_for(geom: LatticeGeometry, disc: Discretization, p: float, rule: str):
    return transform_for(geom, disc, p).gap_weights(rule)


@dataclass
class FieldSet:
    """Observable fields sampled on the period cell.

    ``h`` holds one row per z-level (physical x-grid alignment); ``V``, ``jx``
    are per stored plane; ``Phi``, ``jz`` per gap 1..N.  ``phi_winding[n]``
    records the exact increment Phi(x+2q) - Phi(x) = 2 pi (k_n - k_{n-1}).
    """

    geom: LatticeGeometry
    disc: Discretization
    x: np.ndarray
    z_rows: np.ndarray
    h: np.ndarray            # (n_rows, Mx)
    h_gap_average: np.ndarray  # (N, Mx)
    V: np.ndarray            # (n_planes, Mx)
    Phi: np.ndarray          # (N, Mx)
    jx: np.ndarray           # (n_planes, Mx)
    jz: np.ndarray           # (N, Mx)
    phi_winding: np.ndarray  # (N,)
    f: Optional[np.ndarray] = None   # moduli, set by field predictions


def _plane_heights(geom: LatticeGeometry, p: float) -> np.ndarray:
    return np.array([n * p for n in geom.stored_planes()])


def plane_potential_rows(cfg: Configuration, geom: LatticeGeometry,
                         params: ModelParams) -> np.ndarray:
    """A_x sampled on each stored plane, on the universal x-grid."""
    tr = transform_for(geom, disc=cfg.disc, p=params.p)
    hmean = geom.mean_field(params)
    z = _plane_heights(geom, params.p)
    if geom.kind == BIPERIODIC:
        t2 = np.array([n / geom.N for n in geom.stored_planes()])
        dz_rows = tr.rows(cfg.xi, t2, "dz")
    else:
        dz_rows = tr.rows_dz(cfg.xi, z)
    return hmean * z[:, None] + dz_rows


def gap_az_integrals(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
                     rule: str = "exact") -> np.ndarray:
    """Per-gap integral of A_z across the gap, (N, Mx).  A_z = -d_x xi."""
    tr = transform_for(geom, cfg.disc, params.p)
    W = gap_weights_for(geom, cfg.disc, params.p, rule)
    return -tr.gap_dx_integral(cfg.xi, W)


def velocities(cfg: Configuration, geom: LatticeGeometry, params: ModelParams) -> np.ndarray:
    """Superfluid velocity V_n = phi_n' - A_x(., z_n) for each stored plane."""
    ax = plane_potential_rows(cfg, geom, params)
    period = 2.0 * geom.q
    V = np.empty_like(cfg.f)
    for n in geom.stored_planes():
        row = geom.plane_row(n)
        V[row] = cfg.slope(n) + _spectral.dx_periodic(cfg.chi[row], period) - ax[row]
    return V


def phase_differences(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
                      rule: str = "exact"):
    """Gauge-invariant Phi_{n,n-1} for gaps 1..N, plus lower-plane moduli.

    Returns (Phi, f_lower, f_upper) where the n-th rows hold the fields of the
    planes below/above gap n; for the bi-periodic wrap gap 1 the lower plane
    is synthesized.
    """
    az_int = gap_az_integrals(cfg, geom, params, rule)
    x = cfg.x
    N = geom.N
    Phi = np.empty((N, cfg.disc.Mx))
    f_lo = np.empty((N, cfg.disc.Mx))
    f_up = np.empty((N, cfg.disc.Mx))
    for n in range(1, N + 1):
        up = geom.plane_row(n)
        phi_up = cfg.alpha[up] + cfg.slope(n) * x + cfg.chi[up]
        if n == 1 and geom.kind == BIPERIODIC:
            f0, alpha0, slope0, chi0 = cfg.plane_zero_parts()
            phi_lo = alpha0 + slope0 * x + chi0
            f_lo[n - 1] = f0
        else:
            lo = geom.plane_row(n - 1)
            phi_lo = cfg.alpha[lo] + cfg.slope(n - 1) * x + cfg.chi[lo]
            f_lo[n - 1] = cfg.f[lo]
        f_up[n - 1] = cfg.f[up]
        Phi[n - 1] = phi_up - phi_lo - az_int[n - 1]
    return Phi, f_lo, f_up


def local_field(cfg: Configuration, geom: LatticeGeometry, params: ModelParams):
    """(z_rows, h rows, gap averages).  Rows are aligned to the universal x-grid.

    The per-gap average uses a cosine (Hann) window across the gap's interior
    rows.  At stationarity the field is z-uniform inside each gap, so any
    normalized window measures the same continuum value; the window strongly
    suppresses the band-limit ringing that the plane-row field jumps imprint
    on the discrete rows.
    """
    tr = transform_for(geom, cfg.disc, params.p)
    hmean = geom.mean_field(params)
    Mz = cfg.disc.Mz
    if geom.kind == BIPERIODIC:
        nrows = geom.N * Mz
        t2 = np.arange(nrows) / nrows
        h = hmean + tr.rows(cfg.xi, t2, "lap")          # (rows, Mx)
        z_rows = t2 * geom.N * params.p
    else:
        h_native = params.H + tr.laplacian_full(cfg.xi)  # (Mx, rows+1)
        h = h_native.T
        z_rows = np.arange(geom.N * Mz + 1) * params.p / Mz
    j = np.arange(1, Mz)
    w = 1.0 - np.cos(2.0 * np.pi * j / Mz)
    w /= w.sum()
    gap_avg = np.stack([(w[:, None] * h[(n - 1) * Mz + j]).sum(axis=0)
                        for n in range(1, geom.N + 1)])
    return z_rows, h, gap_avg


def gap_field_average_exact(cfg: Configuration, geom: LatticeGeometry,
                            params: ModelParams) -> np.ndarray:
    """Exact z-average of h over each gap (modewise z-integration), (N, Mx)."""
    tr = transform_for(geom, cfg.disc, params.p)
    W = gap_weights_for(geom, cfg.disc, params.p, "exact")
    hmean = geom.mean_field(params)
    if geom.kind == BIPERIODIC:
        ghat = np.fft.fft2(cfg.xi) * tr._symbol("lap")
        rowspec = np.einsum("kl,nkl->nk", ghat, W) / tr.Mrows
        gap_int = np.fft.ifft(rowspec, axis=1).real
    else:
        c = tr.coef(cfg.xi) * (-tr.lam)
        rowspec = np.einsum("kl,nl->nk", c, W)
        gap_int = np.fft.ifft(rowspec, axis=1).real
    return hmean + gap_int / params.p


def observables(cfg: Configuration, geom: LatticeGeometry, params: ModelParams) -> FieldSet:
    """Assemble every gauge-invariant field of a configuration."""
    V = velocities(cfg, geom, params)
    Phi, f_lo, f_up = phase_differences(cfg, geom, params)
    z_rows, h, gap_avg = local_field(cfg, geom, params)
    jx = cfg.f ** 2 * V
    jz = 0.5 * params.r * params.kappa ** 2 * params.p * f_up * f_lo * np.sin(Phi)
    winding = np.array([TWO_PI * (geom.k_n(n) - geom.k_n(n - 1)) for n in range(1, geom.N + 1)])
    return FieldSet(geom=geom, disc=cfg.disc, x=cfg.x, z_rows=z_rows, h=h,
                    h_gap_average=gap_avg, V=V, Phi=Phi, jx=jx, jz=jz,
                    phi_winding=winding)


def stokes_phase(cfg: Configuration, geom: LatticeGeometry, params: ModelParams,
                 n: int) -> np.ndarray:
    """Phi_{n,n-1} recovered from the Stokes-path formula.

    Integrates V_n - V_{n-1} + p * (gap-averaged h) from 0 to x and anchors
    the constant at the directly computed Phi(0).  Agrees with
    ``observables().Phi`` to machine precision because both use the exact
    modewise gap integrals.
    """
    fs_V = velocities(cfg, geom, params)
    Phi_direct, _, _ = phase_differences(cfg, geom, params)
    hbar = gap_field_average_exact(cfg, geom, params)[n - 1]
    if n == 1 and geom.kind == BIPERIODIC:
        _, _, slope0, chi0 = cfg.plane_zero_parts()
        period = 2.0 * geom.q
        tr = transform_for(geom, cfg.disc, params.p)
        ax0 = tr.rows(cfg.xi, np.array([0.0]), "dz")[0]   # plane 0 sits at z = 0
        V_lo = slope0 + _spectral.dx_periodic(chi0, period) - ax0
    else:
        V_lo = fs_V[geom.plane_row(n - 1)]
    V_up = fs_V[geom.plane_row(n)]
    g = V_up - V_lo + params.p * hbar
    mean = float(np.mean(g))
    period = 2.0 * geom.q
    x = cfg.x
    anti = _spectral.antiderivative_periodic(g - mean, period)
    return Phi_direct[n - 1][0] + mean * x + (anti - anti[0])


def flux_integral(cfg: Configuration, geom: LatticeGeometry, params: ModelParams) -> float:
    """Discrete total flux through the period cell."""
    tr = transform_for(geom, cfg.disc, params.p)
    hmean = geom.mean_field(params)
    if geom.kind == BIPERIODIC:
        return tr.integral(hmean + tr.laplacian(cfg.xi))
    return tr.integral_full(hmean + tr.laplacian_full(cfg.xi))


def solve_periodic_poisson(rhs: np.ndarray, geom: LatticeGeometry, disc: Discretization,
                           params: ModelParams, warn_mean: float = 1e-8):
    """Solve lap(xi) = rhs on the period cell; returns (xi, diagnostics).

    Bi-periodic: rhs must be mean-free (the mean is subtracted and reported in
    ``diagnostics['removed_mean']``; ``diagnostics['nonzero_mean']`` flags a
    violation beyond ``warn_mean``, which signals a flux mismatch upstream).
    Finite stack: homogeneous values at z = 0, Np; rhs holds interior rows.
    """
    tr = transform_for(geom, disc, params.p)
    if geom.kind == BIPERIODIC:
        xi, mean = tr.solve_poisson(rhs)
        return xi, {"removed_mean": mean, "nonzero_mean": abs(mean) > warn_mean}
    return tr.solve_poisson(rhs), {"removed_mean": 0.0, "nonzero_mean": False}


# -- gauge fixing -------------------------------------------------------------

@dataclass
class RawState:
    """Periodic-up-to-gauge input data for :func:`gauge_fix`.

    The vector potential is A = (ax_slope * z + ax_per, az_per) with both
    periodic grids in native (t1, t2) cell coordinates; ``phi`` holds raw
    phase samples of planes 1..N on the universal x-grid, ``f`` their moduli
    (gauge-invariant), and ``d`` the shifted-period phase constant (invariant
    under periodic gauge changes).
    """

    ax_slope: float
    ax_per: np.ndarray
    az_per: np.ndarray
    phi: np.ndarray
    d: float
    f: Optional[np.ndarray] = None


def raw_from_configuration(cfg: Configuration, geom: LatticeGeometry,
                           params: ModelParams) -> RawState:
    tr = transform_for(geom, cfg.disc, params.p)
    hmean = geom.mean_field(params)
    ax_per = tr.grid(np.fft.fft2(cfg.xi) * tr._symbol("dz"))
    az_per = -tr.grid(np.fft.fft2(cfg.xi) * tr._symbol("dx"))
    phi = np.stack([cfg.phase(n) for n in geom.stored_planes()])
    return RawState(hmean, ax_per, az_per, phi, cfg.d, cfg.f.copy())


def apply_gauge(raw: RawState, lam: np.ndarray, geom: LatticeGeometry,
                disc: Discretization, params: ModelParams) -> RawState:
    """Transform raw data by a periodic gauge function on the cell grid."""
    tr = transform_for(geom, disc, params.p)
    lam_hat = np.fft.fft2(lam)
    dxl = tr.grid(lam_hat * tr._symbol("dx"))
    dzl = tr.grid(lam_hat * tr._symbol("dz"))
    t2 = np.array([n / geom.N for n in geom.stored_planes()])
    lam_rows = tr.rows(lam, t2, "value")
    return RawState(raw.ax_slope, raw.ax_per - dxl, raw.az_per - dzl,
                    raw.phi - lam_rows, raw.d,
                    None if raw.f is None else raw.f.copy())


def gauge_fix(raw: RawState, geom: LatticeGeometry, disc: Discretization,
              params: ModelParams, flux_rel_tol: float = 1e-6) -> Configuration:
    """Return the gauge-fixed representative of periodic-up-to-gauge data.

    The stream function solves the periodic problem for curl A - <h>, the
    residual curl-free part of A is integrated into a periodic gauge function
    (by spectral inversion of its divergence, the grid-exact equivalent of
    path integration since the flux was checked first), and the phases are
    shifted and decomposed.  Observables are preserved.
    """
    if geom.kind != BIPERIODIC:
        raise ValueError("gauge_fix expects bi-periodic data")
    tr = transform_for(geom, disc, params.p)
    hmean = geom.mean_field(params)
    target_flux = TWO_PI * geom.K
    curl_per = (tr.grid(np.fft.fft2(raw.ax_per) * tr._symbol("dz"))
                - tr.grid(np.fft.fft2(raw.az_per) * tr._symbol("dx")))
    flux = raw.ax_slope * tr.cell_area + tr.integral(curl_per)
    if abs(flux - target_flux) > flux_rel_tol * abs(target_flux):
        raise FluxMismatchError(
            f"flux {flux:.6g} differs from 2*pi*K = {target_flux:.6g}")

    rhs = curl_per + (raw.ax_slope - hmean)
    xi, _ = tr.solve_poisson(rhs)

    gx = raw.ax_per - tr.grid(np.fft.fft2(xi) * tr._symbol("dz"))
    gz = raw.az_per + tr.grid(np.fft.fft2(xi) * tr._symbol("dx"))
    div = (tr.grid(np.fft.fft2(gx) * tr._symbol("dx"))
           + tr.grid(np.fft.fft2(gz) * tr._symbol("dz")))
    lam, _ = tr.solve_poisson(div)

    t2 = np.array([n / geom.N for n in geom.stored_planes()])
    lam_rows = tr.rows(lam, t2, "value")
    P, Mx = geom.n_planes(), disc.Mx
    f = np.ones((P, Mx)) if raw.f is None else np.array(raw.f, dtype=float)
    chi = np.empty((P, Mx))
    alpha = np.empty(P)
    omegas = np.empty(P)
    for i, n in enumerate(geom.stored_planes()):
        a, w, c = core.decompose_phase(raw.phi[i] - lam_rows[i], geom.k_n(n), geom.q)
        alpha[i], omegas[i], chi[i] = a, w, c
    omega = float(np.mean(omegas))
    if np.max(np.abs(omegas - omega)) > 1e-6 * max(1.0, abs(omega)):
        raise ValueError("inconsistent per-plane phase increments in raw data")
    return Configuration(geom, disc, f, chi, alpha, omega, raw.d, xi)


# -- CSV export ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _header_lines(geom, disc, params) -> list:
    doc = core.run_document(params, geom, disc)
    return [f"# {k}={doc[k]}" for k in sorted(doc)]


def export_fieldset(fs: FieldSet, directory, geom: LatticeGeometry,
                    disc: Discretization, params: ModelParams) -> list:
    """Write one CSV per field into ``directory``; returns the file paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    written = []

    def write(name, columns, rows):
        path = os.path.join(directory, f"{name}.csv")
        tmp = path + ".tmp"
        with open(tmp, "w", newline="\n") as fh:
            for line in _header_lines(geom, disc, params):
                fh.write(line + "\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        os.replace(tmp, path)
        written.append(path)

    x = fs.x
    write("h", ["x", "z", "h"],
          [(x[i], fs.z_rows[j], fs.h[j, i])
           for j in range(fs.h.shape[0]) for i in range(x.size)])
    planes = list(fs.geom.stored_planes())
    for name, arr, index in (("V", fs.V, planes), ("jx", fs.jx, planes),
                             ("Phi", fs.Phi, range(1, fs.geom.N + 1)),
                             ("jz", fs.jz, range(1, fs.geom.N + 1))):
        write(name, ["x", "n", name],
              [(x[i], n, arr[j, i]) for j, n in enumerate(index) for i in range(x.size)])
    return written
