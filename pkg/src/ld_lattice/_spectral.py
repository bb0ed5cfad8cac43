"""Spectral machinery for bi-periodic (sheared torus) and finite-stack (strip) grids.

All field bookkeeping lives here: Fourier derivatives, evaluation of a stored
stream-function grid on physical rows (planes, gap quadrature nodes), gap
integrals of the in-gap vector potential, Laplacians, and the periodic Poisson
solves.  Every linear operator comes with a hand-written adjoint; the adjoints
are what make the analytic energy gradient exact, so they are unit-tested with
dot-product identities rather than trusted.

Grid conventions
----------------
Torus: a real array ``g[i, j]`` holds samples at ``t1 = i/Mx``, ``t2 = j/Mrows``
on the unit square, with the physical map ``x = 2q t1 + s t2``, ``z = Np t2``.
Rows of constant ``j`` are lines of constant ``z`` whose x-samples are offset
by ``s t2``; multiplying a row's x-spectrum by ``exp(-i k_x s t2)`` realigns it
onto the universal grid ``x_i = 2q i/Mx``.

Strip: ``g[i, j]`` holds interior samples at ``x = 2q i/Mx``,
``z = j * Np/Mrows`` for ``j = 1..Mrows-1``; the field vanishes at
``z = 0, Np`` and is expanded in a sine series in z.

On even grids the Nyquist modes have no consistent sign under shear or odd
derivative symbols, so they are projected out of the torus representation.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def _int_freqs(M: int) -> np.ndarray:
    """Signed integer mode numbers in FFT order."""
    return np.fft.fftfreq(M, d=1.0 / M)


def _nyquist_mask(M: int) -> np.ndarray:
    mask = np.ones(M)
    if M % 2 == 0:
        mask[M // 2] = 0.0
    return mask


def x_wavenumbers(Mx: int, period: float) -> np.ndarray:
    """Continuous wavenumbers k_x for a 2q-periodic universal x-grid."""
    return TWO_PI * _int_freqs(Mx) / period


def dx_periodic(g: np.ndarray, period: float) -> np.ndarray:
    """Spectral x-derivative along the last axis (Nyquist zeroed)."""
    M = g.shape[-1]
    sym = 1j * x_wavenumbers(M, period) * _nyquist_mask(M)
    return np.fft.ifft(np.fft.fft(g, axis=-1) * sym, axis=-1).real


def dx_adjoint(g: np.ndarray, period: float) -> np.ndarray:
    """Adjoint of dx_periodic (= its negative)."""
    return -dx_periodic(g, period)


def antiderivative_periodic(g: np.ndarray, period: float) -> np.ndarray:
    """Mean-zero periodic antiderivative along the last axis.

    The input's mean (secular part) is dropped; callers that carry a winding
    handle the linear term themselves.
    """
    M = g.shape[-1]
    k = x_wavenumbers(M, period) * _nyquist_mask(M)
    ghat = np.fft.fft(g, axis=-1)
    out = np.zeros_like(ghat)
    nz = k != 0.0
    out[..., nz] = ghat[..., nz] / (1j * k[nz])
    return np.fft.ifft(out, axis=-1).real


def shift_periodic(g: np.ndarray, dist: float, period: float) -> np.ndarray:
    """Trigonometric interpolation of ``g(x + dist)`` along the last axis.

    The Nyquist mode picks up a cos factor so the operator stays real; the
    adjoint is a shift by ``-dist``.
    """
    M = g.shape[-1]
    k = x_wavenumbers(M, period)
    phase = np.exp(1j * k * dist)
    if M % 2 == 0:
        phase[M // 2] = np.cos(k[M // 2] * dist)
    return np.fft.ifft(np.fft.fft(g, axis=-1) * phase, axis=-1).real


class TorusTransform:
    """Spectral operations for bi-periodic stream functions on the sheared cell."""

    def __init__(self, q: float, s: float, N: int, p: float, Mx: int, Mz: int):
        self.q, self.s, self.N, self.p = float(q), float(s), int(N), float(p)
        self.Mx, self.Mz = int(Mx), int(Mz)
        self.Mrows = self.N * self.Mz
        self.Np = self.N * self.p
        self.period_x = 2.0 * self.q

        kx_int = _int_freqs(self.Mx)
        kz_int = _int_freqs(self.Mrows)
        self.kx = np.pi * kx_int / self.q                      # (Mx,)
        # z-wavenumber of mode (k, l) on the sheared cell
        self.kz = (TWO_PI / self.Np) * (kz_int[None, :] - kx_int[:, None] * self.s / (2.0 * self.q))
        self.lam = self.kx[:, None] ** 2 + self.kz ** 2        # -Laplacian symbol
        self._proj = _nyquist_mask(self.Mx)[:, None] * _nyquist_mask(self.Mrows)[None, :]
        self.lam_proj = self.lam * self._proj
        self.cell_area = 2.0 * self.q * self.Np
        self.weight = self.cell_area / (self.Mx * self.Mrows)  # uniform cell quadrature
        self._kx_int = kx_int
        self._kz_int = kz_int

    # -- basic transforms -------------------------------------------------
    def spec(self, g: np.ndarray) -> np.ndarray:
        return np.fft.fft2(g) * self._proj

    def grid(self, ghat: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(ghat).real

    def laplacian(self, g: np.ndarray) -> np.ndarray:
        return self.grid(-self.lam_proj * np.fft.fft2(g))

    def laplacian_adjoint(self, cot: np.ndarray) -> np.ndarray:
        # real symmetric symbol: self-adjoint
        return self.laplacian(cot)

    # -- row evaluation on the universal x-grid ---------------------------
    def _symbol(self, op: str) -> np.ndarray:
        if op == "value":
            return self._proj.astype(complex)
        if op == "dx":
            return 1j * self.kx[:, None] * self._proj
        if op == "dz":
            return 1j * self.kz * self._proj
        if op == "lap":
            return (-self.lam * self._proj).astype(complex)
        raise ValueError(f"unknown operator {op!r}")

    def _row_phases(self, t2: np.ndarray):
        # w[t, l] sums the t2-dependence, rho[t, k] realigns to the universal grid
        w = np.exp(TWO_PI * 1j * np.outer(t2, self._kz_int))
        rho = np.exp(-1j * np.outer(t2, self.kx) * self.s)
        return w, rho

    def rows(self, g: np.ndarray, t2, op: str = "value") -> np.ndarray:
        """Evaluate ``op(g)`` on rows of constant t2, realigned to the x-grid.

        t2 values need not lie on the grid and may exceed [0, 1) (a value of
        exactly 1 evaluates the wrap row including its horizontal shift).
        Returns an array of shape (len(t2), Mx).
        """
        t2 = np.atleast_1d(np.asarray(t2, dtype=float))
        ghat = np.fft.fft2(g) * self._symbol(op)
        w, rho = self._row_phases(t2)
        rowspec = np.einsum("kl,tl->tk", ghat, w) * rho / self.Mrows
        return np.fft.ifft(rowspec, axis=1).real

    def rows_adjoint(self, cot: np.ndarray, t2, op: str = "value") -> np.ndarray:
        """Adjoint of :meth:`rows` with respect to the plain grid dot product."""
        t2 = np.atleast_1d(np.asarray(t2, dtype=float))
        w, rho = self._row_phases(t2)
        chat = np.conj(np.fft.fft(cot, axis=1))                # (t, k)
        Q = np.einsum("tk,tl->kl", chat * rho, w) / (self.Mx * self.Mrows)
        Q *= self._symbol(op)
        return np.fft.fft2(Q).real

    # -- gap integrals of the x-derivative ---------------------------------
    def gap_weights(self, rule: str) -> np.ndarray:
        """Complex tensor W[n, k, l] with ``int_gap dx-op`` = sum_l ghat*sym*W.

        The integral over gap n runs along a vertical physical line, which in
        (t1, t2) coordinates has phase exponent nu = l - k s/(2q) per mode.
        ``rule`` selects the exact modewise z-integral or the Mz-interval
        trapezoid used by the energy.
        """
        nu = self._kz_int[None, :] - self._kx_int[:, None] * self.s / (2.0 * self.q)
        W = np.empty((self.N, self.Mx, self.Mrows), dtype=complex)
        if rule == "exact":
            for n in range(1, self.N + 1):
                a, b = (n - 1) / self.N, n / self.N
                small = np.abs(nu) < 1e-13
                num = np.exp(TWO_PI * 1j * nu * b) - np.exp(TWO_PI * 1j * nu * a)
                with np.errstate(divide="ignore", invalid="ignore"):
                    Wn = self.Np * num / (TWO_PI * 1j * nu)
                Wn[small] = self.Np * (b - a)
                W[n - 1] = Wn
        elif rule == "trapezoid":
            tw = np.full(self.Mz + 1, self.p / self.Mz)
            tw[0] *= 0.5
            tw[-1] *= 0.5
            for n in range(1, self.N + 1):
                t2_nodes = ((n - 1) * self.Mz + np.arange(self.Mz + 1)) / self.Mrows
                phases = np.exp(TWO_PI * 1j * nu[None, :, :] * t2_nodes[:, None, None])
                W[n - 1] = np.tensordot(tw, phases, axes=(0, 0))
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        return W

    def gap_dx_integral(self, g: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Per-gap integral of d(g)/dx over z, on the universal x-grid: (N, Mx)."""
        ghat = np.fft.fft2(g) * self._symbol("dx")
        rowspec = np.einsum("kl,nkl->nk", ghat, W) / self.Mrows
        return np.fft.ifft(rowspec, axis=1).real

    def gap_dx_adjoint(self, cot: np.ndarray, W: np.ndarray) -> np.ndarray:
        chat = np.conj(np.fft.fft(cot, axis=1))                # (n, k)
        Q = np.einsum("nk,nkl->kl", chat, W) / (self.Mx * self.Mrows)
        Q *= self._symbol("dx")
        return np.fft.fft2(Q).real

    # -- Poisson ------------------------------------------------------------
    def solve_poisson(self, rhs: np.ndarray):
        """Solve lap(xi) = rhs on the torus; returns (xi, removed_mean).

        The zero mode of the right-hand side is subtracted (the periodic
        problem is only solvable for mean-free data); its value is returned so
        callers can flag a flux mismatch.  Nyquist modes are outside the torus
        representation and are dropped.
        """
        rhat = np.fft.fft2(rhs) * self._proj
        mean = rhat[0, 0].real / (self.Mx * self.Mrows)
        xihat = np.zeros_like(rhat)
        nz = self.lam > 1e-300
        xihat[nz] = -rhat[nz] / self.lam[nz]
        xihat[0, 0] = 0.0
        return self.grid(xihat), mean

    def integral(self, g: np.ndarray) -> float:
        return float(self.weight * np.sum(g))


class StripTransform:
    """Spectral-in-x, sine-in-z operations for the finite-stack strip."""

    def __init__(self, q: float, N: int, p: float, Mx: int, Mz: int):
        self.q, self.N, self.p = float(q), int(N), float(p)
        self.Mx, self.Mz = int(Mx), int(Mz)
        self.Mrows = self.N * self.Mz       # z intervals; interior rows 1..Mrows-1
        self.Np = self.N * self.p
        self.period_x = 2.0 * self.q

        self.kx = np.pi * _int_freqs(self.Mx) / self.q
        self._maskx = _nyquist_mask(self.Mx)
        self.ell = np.arange(1, self.Mrows)                      # sine mode numbers
        self.kzl = np.pi * self.ell / self.Np
        j = np.arange(1, self.Mrows)
        # DST-I pair: columns of S are orthogonal with norm Mrows/2
        self.S = np.sin(np.pi * np.outer(j, self.ell) / self.Mrows)   # (rows, l)
        self.Sinv = (2.0 / self.Mrows) * self.S.T
        self.lam = self.kx[:, None] ** 2 + self.kzl[None, :] ** 2     # (Mx, l)
        self.hz = self.Np / self.Mrows
        # trapezoid z-weights including the (zero-field) boundary rows
        wz = np.full(self.Mrows + 1, self.hz)
        wz[0] *= 0.5
        wz[-1] *= 0.5
        self.row_weights = wz * (2.0 * self.q / self.Mx)

    # -- transforms: grid (Mx, Mrows-1) <-> coefficients (Mx, Mrows-1) ------
    def coef(self, g: np.ndarray) -> np.ndarray:
        return np.fft.fft(g, axis=0) @ self.Sinv.T

    def grid(self, c: np.ndarray) -> np.ndarray:
        return np.fft.ifft(c @ self.S.T, axis=0).real

    def laplacian(self, g: np.ndarray) -> np.ndarray:
        return self.grid(-self.lam * self.coef(g))

    def laplacian_adjoint(self, cot: np.ndarray) -> np.ndarray:
        # S S^T is not orthogonal under the plain dot product only up to the
        # constant Mrows/2, which cancels between coef and grid; symbol real.
        return self.laplacian(cot)

    def laplacian_full(self, g: np.ndarray) -> np.ndarray:
        """Laplacian on all rows 0..Mrows (boundary rows are identically 0)."""
        out = np.zeros((self.Mx, self.Mrows + 1))
        out[:, 1:-1] = self.laplacian(g)
        return out

    def rows_dz(self, g: np.ndarray, z_values) -> np.ndarray:
        """d(g)/dz on rows of constant z (any z in [0, Np]): (len(z), Mx)."""
        z = np.atleast_1d(np.asarray(z_values, dtype=float))
        c = self.coef(g)                                         # (Mx, l)
        C = self.kzl[None, :] * np.cos(np.outer(z, self.kzl))    # (t, l)
        rowspec = np.einsum("kl,tl->tk", c, C)
        return np.fft.ifft(rowspec, axis=1).real

    def rows_dz_adjoint(self, cot: np.ndarray, z_values) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z_values, dtype=float))
        C = self.kzl[None, :] * np.cos(np.outer(z, self.kzl))
        chat = np.conj(np.fft.fft(cot, axis=1))                  # (t, k)
        Q = np.einsum("tk,tl->kl", chat, C) / self.Mx
        back = np.fft.fft(Q, axis=0).real                        # adjoint of fft_x
        return np.ascontiguousarray(back @ self.Sinv)

    def gap_weights(self, rule: str) -> np.ndarray:
        """Real tensor Wz[n, l]: z-integral of sine mode l over gap n."""
        Wz = np.empty((self.N, self.Mrows - 1))
        if rule == "exact":
            for n in range(1, self.N + 1):
                za, zb = (n - 1) * self.p, n * self.p
                Wz[n - 1] = (np.cos(self.kzl * za) - np.cos(self.kzl * zb)) / self.kzl
        elif rule == "trapezoid":
            tw = np.full(self.Mz + 1, self.p / self.Mz)
            tw[0] *= 0.5
            tw[-1] *= 0.5
            for n in range(1, self.N + 1):
                rows = (n - 1) * self.Mz + np.arange(self.Mz + 1)
                Sn = np.sin(np.pi * np.outer(rows, self.ell) / self.Mrows)
                Wz[n - 1] = tw @ Sn
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        return Wz

    def gap_dx_integral(self, g: np.ndarray, Wz: np.ndarray) -> np.ndarray:
        c = self.coef(g) * (1j * self.kx * self._maskx)[:, None]
        rowspec = np.einsum("kl,nl->nk", c, Wz)
        return np.fft.ifft(rowspec, axis=1).real

    def gap_dx_adjoint(self, cot: np.ndarray, Wz: np.ndarray) -> np.ndarray:
        chat = np.conj(np.fft.fft(cot, axis=1))                  # (n, k)
        Q = np.einsum("nk,nl->kl", chat, Wz) / self.Mx
        Q *= (1j * self.kx * self._maskx)[:, None]
        back = np.fft.fft(Q, axis=0).real
        return np.ascontiguousarray(back @ self.Sinv)

    def solve_poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Solve lap(xi) = rhs with xi = 0 at z = 0, Np (interior-row data)."""
        return self.grid(-self.coef(rhs) / self.lam)

    def integral_full(self, g_full: np.ndarray) -> float:
        """Integrate a full-row field (Mx, Mrows+1) with trapezoid z-weights."""
        return float(np.sum(g_full * self.row_weights[None, :]))
