"""Model parameters, period-cell geometry, grids, and gauge-fixed configurations.

Units follow the reduced convention used throughout the package: lengths in
units of the in-plane penetration depth, fields in units of H_c/kappa, and
energies without the overall H_c^2/(4 pi) prefactor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _spectral

TWO_PI = 2.0 * np.pi

BIPERIODIC = "biperiodic"
FINITE_LAYER = "finite_layer"
KINDS = (BIPERIODIC, FINITE_LAYER)


class InadmissibleGeometryError(ValueError):
    """Raised when an operation requires the zero-energy winding class."""


class FluxMismatchError(ValueError):
    """Raised when supplied vector-potential data carries the wrong flux."""


class DimensionTooLargeError(ValueError):
    """Raised when a brute-force scan would be combinatorially infeasible."""


@dataclass(frozen=True)
class ModelParams:
    """Physical constants: GL parameter, applied field, spacing, coupling."""

    kappa: float
    H: float
    p: float
    r: float = 0.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.H > 0 and self.p > 0):
            raise ValueError("kappa, H, p must be positive")
        if self.r < 0:
            raise ValueError("coupling r must be nonnegative")

    def with_r(self, r: float) -> "ModelParams":
        return replace(self, r=float(r))

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "H": self.H, "p": self.p, "r": self.r}


@dataclass(frozen=True)
class LatticeGeometry:
    """Period cell spanned by (2q, 0) and (s, Np), plus the winding class.

    ``k`` stores the winding numbers k_0..k_N (k_0 = 0 always); ``m`` is set
    when k_n = m*n, which together with q = m*pi/(H p) marks the geometry as
    admissible.  Winding numbers extend beyond the stored range through
    k_{n+N} = k_n + K.
    """

    N: int
    s: float
    q: float
    k: tuple
    kind: str = BIPERIODIC
    m: Optional[int] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.q <= 0:
            raise ValueError("q must be positive")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if len(self.k) != self.N + 1 or self.k[0] != 0:
            raise ValueError("winding list must be (k_0=0, ..., k_N)")

    @property
    def K(self) -> int:
        return int(self.k[-1])

    def k_n(self, n: int) -> int:
        cycles, rem = divmod(n, self.N)
        return int(self.k[rem] + cycles * self.K)

    def cell_area(self, params: ModelParams) -> float:
        return 2.0 * self.q * self.N * params.p

    def mean_field(self, params: ModelParams) -> float:
        """Cell-averaged magnetic field fixed by the flux index.

        For the finite stack the applied field itself enters the vector
        potential; there is no torus flux constraint.
        """
        if self.kind == FINITE_LAYER:
            return params.H
        return np.pi * self.K / (params.p * self.q * self.N)

    def flux_quantum_count(self) -> int:
        return self.K

    def n_planes(self) -> int:
        """Number of stored planes (1..N bi-periodic, 0..N finite stack)."""
        return self.N if self.kind == BIPERIODIC else self.N + 1

    def stored_planes(self) -> range:
        return range(1, self.N + 1) if self.kind == BIPERIODIC else range(0, self.N + 1)

    def plane_row(self, n: int) -> int:
        return n - 1 if self.kind == BIPERIODIC else n

    def to_dict(self) -> dict:
        d = {"N": self.N, "s": self.s, "kind": self.kind}
        if self.m is not None:
            d["m"] = self.m
        else:
            d["q"] = self.q
            d["k"] = list(self.k)
        return d


@dataclass(frozen=True)
class Discretization:
    """Grid resolution: Mx points per x-period, Mz points per gap."""

    Mx: int
    Mz: int

    def __post_init__(self):
        if self.Mx < 4 or self.Mz < 4:
            raise ValueError("Mx and Mz must be >= 4")
        if self.Mx % 2 != 0:
            raise ValueError("Mx must be even")

    def to_dict(self) -> dict:
        return {"Mx": self.Mx, "Mz": self.Mz}


@dataclass(frozen=True)
class GeometryClass:
    admissible: bool
    m: Optional[int] = None

    def __str__(self):
        return f"admissible(m={self.m})" if self.admissible else "inadmissible"


def build_geometry(N: int, s: float, m: int, params: ModelParams,
                   kind: str = BIPERIODIC) -> LatticeGeometry:
    """Construct the admissible geometry with H p q = m pi and k_n = m n."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive integers")
    q = m * np.pi / (params.H * params.p)
    k = tuple(m * n for n in range(N + 1))
    return LatticeGeometry(N=N, s=float(s), q=q, k=k, kind=kind, m=int(m))


def make_geometry(N: int, s: float, q: float, k, kind: str = BIPERIODIC) -> LatticeGeometry:
    """Construct a geometry with an arbitrary period and winding sequence.

    ``k`` is either an integer slope m (k_n = m n) or an explicit sequence
    k_0..k_N with k_0 = 0.
    """
    if isinstance(k, (int, np.integer)):
        ktup = tuple(int(k) * n for n in range(N + 1))
        m = int(k)
    else:
        ktup = tuple(int(v) for v in k)
        m = ktup[1] if all(ktup[n] == ktup[1] * n for n in range(N + 1)) and N >= 1 else None
    return LatticeGeometry(N=N, s=float(s), q=float(q), k=ktup, kind=kind, m=m)


def classify_geometry(geom: LatticeGeometry, params: ModelParams,
                      rel_tol: float = 1e-9) -> GeometryClass:
    """Admissible iff H p q / pi is a positive integer m and k_n = m n."""
    ratio = params.H * params.p * geom.q / np.pi
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > rel_tol * max(1.0, abs(ratio)):
        return GeometryClass(False)
    if any(geom.k[n] != m * n for n in range(geom.N + 1)):
        return GeometryClass(False)
    return GeometryClass(True, m)


@dataclass
class Configuration:
    """Gauge-fixed discrete state.

    Phases are stored decomposed: phi_n(x) = alpha_n + (omega + 2 pi k_n) x/(2q)
    + chi_n(x) with chi_n periodic and mean-free.  The vector potential is
    A = <h> (z, 0) + (d_z xi, -d_x xi).  Bi-periodic states store planes 1..N
    (plane 0 is synthesized from plane N by the shifted-period rule); finite
    stacks store planes 0..N.  Treated as a value type: operations return new
    instances and never mutate arguments.
    """

    geom: LatticeGeometry
    disc: Discretization
    f: np.ndarray        # (n_planes, Mx)
    chi: np.ndarray      # (n_planes, Mx)
    alpha: np.ndarray    # (n_planes,)
    omega: float
    d: float
    xi: np.ndarray       # torus grid (Mx, N*Mz) or strip interior (Mx, N*Mz-1)

    def __post_init__(self):
        P, Mx = self.geom.n_planes(), self.disc.Mx
        rows = self.geom.N * self.disc.Mz
        want_xi = (Mx, rows) if self.geom.kind == BIPERIODIC else (Mx, rows - 1)
        if self.f.shape != (P, Mx) or self.chi.shape != (P, Mx) or self.alpha.shape != (P,):
            raise ValueError("configuration arrays do not match geometry/discretization")
        if self.xi.shape != want_xi:
            raise ValueError(f"xi grid must have shape {want_xi}, got {self.xi.shape}")

    # -- coordinates -------------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return 2.0 * self.geom.q * np.arange(self.disc.Mx) / self.disc.Mx

    def slope(self, n: int) -> float:
        return (self.omega + TWO_PI * self.geom.k_n(n)) / (2.0 * self.geom.q)

    def phase(self, n: int) -> np.ndarray:
        """Full phase samples of stored plane n on the universal grid."""
        row = self.geom.plane_row(n)
        return self.alpha[row] + self.slope(n) * self.x + self.chi[row]

    def copy(self) -> "Configuration":
        return Configuration(self.geom, self.disc, self.f.copy(), self.chi.copy(),
                             self.alpha.copy(), self.omega, self.d, self.xi.copy())

    def canonicalized(self) -> "Configuration":
        """Shift any accumulated chi means into alpha (exact reparametrization)."""
        means = self.chi.mean(axis=1)
        return Configuration(self.geom, self.disc, self.f.copy(), self.chi - means[:, None],
                             self.alpha + means, self.omega, self.d, self.xi.copy())

    # -- synthesized plane 0 (bi-periodic) ----------------------------------
    def plane_zero_parts(self):
        """(f_0, alpha_0, slope_0, chi_0) by shifted evaluation of plane N."""
        if self.geom.kind != BIPERIODIC:
            raise ValueError("plane 0 is stored explicitly for finite stacks")
        g = self.geom
        period = 2.0 * g.q
        rowN = g.plane_row(g.N)
        f0 = _spectral.shift_periodic(self.f[rowN], g.s, period)
        chi0 = _spectral.shift_periodic(self.chi[rowN], g.s, period)
        alpha0 = self.alpha[rowN] + (self.omega + TWO_PI * g.K) * g.s / period - self.d
        slope0 = self.omega / period        # k_0 = 0
        return f0, alpha0, slope0, chi0


def synthesize_plane_zero(cfg: Configuration, geom: LatticeGeometry):
    """Return (f_0, phi_0) samples for the synthesized plane of a bi-periodic state."""
    if geom.kind != BIPERIODIC:
        raise ValueError("synthesize_plane_zero applies to bi-periodic states only")
    f0, alpha0, slope0, chi0 = cfg.plane_zero_parts()
    return f0, alpha0 + slope0 * cfg.x + chi0


def decompose_phase(phi: np.ndarray, k_n: int, q: float):
    """Split raw phase samples into (alpha, omega, chi).

    One period of samples determines the split only together with a
    smoothness assumption on the periodic part: chi must not occupy the top
    quarter of the spectrum.  Under that contract the sampled linear ramp
    (whose spectrum fills every mode) is separated exactly by matching the
    high-frequency content, and the recovery is exact to rounding.
    """
    Mx = phi.shape[-1]
    x = 2.0 * q * np.arange(Mx) / Mx
    phi_u = np.unwrap(phi)
    psi = phi_u - TWO_PI * k_n * x / (2.0 * q)
    ramp = x / (2.0 * q)
    psi_hat = np.fft.fft(psi)
    ramp_hat = np.fft.fft(ramp)
    modes = np.abs(np.fft.fftfreq(Mx, 1.0 / Mx))
    band = (modes >= Mx // 4) & (modes < Mx // 2)
    omega = float(np.real(np.vdot(ramp_hat[band], psi_hat[band])
                          / np.vdot(ramp_hat[band], ramp_hat[band])))
    resid = psi - omega * ramp
    alpha = float(np.mean(resid))
    chi = resid - alpha
    return alpha, omega, chi


def reconstruct_phase(alpha: float, omega: float, chi: np.ndarray, k_n: int, q: float):
    x = 2.0 * q * np.arange(chi.shape[-1]) / chi.shape[-1]
    return alpha + (omega + TWO_PI * k_n) * x / (2.0 * q) + chi


def zero_configuration(geom: LatticeGeometry, disc: Discretization) -> Configuration:
    """All-ones moduli, zero phases and field correction."""
    P, Mx = geom.n_planes(), disc.Mx
    rows = geom.N * disc.Mz
    xi_shape = (Mx, rows) if geom.kind == BIPERIODIC else (Mx, rows - 1)
    return Configuration(geom, disc, np.ones((P, Mx)), np.zeros((P, Mx)),
                         np.zeros(P), 0.0, 0.0, np.zeros(xi_shape))


# -- serialization ----------------------------------------------------------

def run_document(params: ModelParams, geom: LatticeGeometry, disc: Discretization) -> dict:
    doc = {}
    doc.update(params.to_dict())
    doc.update(geom.to_dict())
    doc.update(disc.to_dict())
    return doc


def to_json(params: ModelParams, geom: LatticeGeometry, disc: Discretization) -> str:
    return json.dumps(run_document(params, geom, disc), indent=2, sort_keys=True)


def from_document(doc: dict):
    """Inverse of :func:`run_document`; accepts either m or explicit (q, k)."""
    params = ModelParams(kappa=float(doc["kappa"]), H=float(doc["H"]),
                         p=float(doc["p"]), r=float(doc.get("r", 0.0)))
    kind = doc.get("kind", BIPERIODIC)
    N, s = int(doc["N"]), float(doc.get("s", 0.0))
    if "m" in doc and doc["m"] is not None:
        geom = build_geometry(N, s, int(doc["m"]), params, kind)
    else:
        geom = make_geometry(N, s, float(doc["q"]), doc.get("k", 1), kind)
    disc = Discretization(Mx=int(doc["Mx"]), Mz=int(doc["Mz"]))
    return params, geom, disc


def from_json(text: str):
    return from_document(json.loads(text))
