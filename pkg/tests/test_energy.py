"""Energy values, analytic-gradient consistency, invariances, EL residuals."""

import numpy as np
import pytest

from ld_lattice import (Discretization, ModelParams, PhaseVector, SolverOptions,
                        build_geometry, first_order_configuration, make_geometry,
                        manifold_point, minimize_energy, zero_configuration)
from ld_lattice._spectral import shift_periodic
from ld_lattice.core import FINITE_LAYER
from ld_lattice.energy import (el_residuals, energy, energy_and_gradient,
                               gradient, pack_configuration, pack_slices,
                               unpack_configuration)

RNG = np.random.default_rng(21)
P = 0.5
PARAMS0 = ModelParams(kappa=1.0, H=np.pi / P, p=P, r=0.0)


def random_configuration(geom, disc, seed=0, strength=0.1):
    rng = np.random.default_rng(seed)
    cfg = zero_configuration(geom, disc)
    u = np.arange(disc.Mx) / disc.Mx
    for i in range(cfg.f.shape[0]):
        cfg.f[i] = 1.0 + strength * np.cos(2 * np.pi * u + rng.uniform(0, 6)) \
            + 0.5 * strength * np.sin(4 * np.pi * u + rng.uniform(0, 6))
        cfg.chi[i] = 2 * strength * np.sin(2 * np.pi * u + rng.uniform(0, 6))
        cfg.chi[i] -= cfg.chi[i].mean()
    cfg.alpha = rng.uniform(-2, 2, cfg.alpha.shape)
    cfg.omega = rng.uniform(-0.4, 0.4)
    cfg.d = rng.uniform(-1, 1)
    t1 = np.arange(cfg.xi.shape[0]) / cfg.xi.shape[0]
    nz = cfg.xi.shape[1]
    t2 = np.arange(nz) / nz
    cfg.xi = strength * (np.cos(2 * np.pi * (t1[:, None] + 2 * t2[None, :]))
                         + 0.7 * np.sin(2 * np.pi * (2 * t1[:, None] - t2[None, :])))
    return cfg


class TestEnergyValues:
    def test_manifold_zero_energy(self):
        geom = build_geometry(2, 0.3, 1, PARAMS0)
        disc = Discretization(32, 4)
        Hps = PARAMS0.H * P * geom.s
        for seed in range(10):
            rng = np.random.default_rng(seed)
            delta = PhaseVector.biperiodic(rng.uniform(0, 2 * np.pi, 1), Hps)
            cfg = manifold_point(delta, geom, PARAMS0, disc)
            assert energy(cfg, geom, PARAMS0).total <= 1e-12

    def test_manifold_linear_coefficient(self):
        # at r > 0 the manifold energy is exactly 2 N p q r (here = r)
        pr = PARAMS0.with_r(3e-3)
        geom = build_geometry(1, np.pi / (pr.H * P), 1, pr)
        disc = Discretization(32, 8)
        delta = PhaseVector.biperiodic(np.empty(0), np.pi)
        bd = energy(manifold_point(delta, geom, pr, disc), geom, pr)
        expect = 2 * geom.N * P * geom.q * pr.r
        assert bd.total == pytest.approx(expect, rel=1e-12)
        assert bd.condensation == pytest.approx(0.0, abs=1e-15)
        assert bd.magnetic == pytest.approx(0.0, abs=1e-15)

    def test_breakdown_nonnegative_and_sums(self):
        geom = make_geometry(2, 0.31, 1.1, 1)
        disc = Discretization(16, 4)
        pr = ModelParams(kappa=1.2, H=2.2, p=0.55, r=0.3)
        bd = energy(random_configuration(geom, disc, 3), geom, pr)
        assert bd.condensation >= 0 and bd.josephson >= 0 and bd.magnetic >= 0
        assert bd.total == pytest.approx(bd.condensation + bd.josephson + bd.magnetic,
                                         rel=1e-12)

    def test_upper_bound_via_manifold_state(self):
        # minimum energy <= 2 N q p r for admissible geometries
        pr = PARAMS0.with_r(2e-3)
        geom = build_geometry(2, 0.3, 1, pr)
        disc = Discretization(32, 8)
        delta = PhaseVector.biperiodic([np.pi], pr.H * P * geom.s)
        bound = 2 * geom.N * geom.q * P * pr.r
        assert energy(manifold_point(delta, geom, pr, disc), geom, pr).total \
            <= bound * (1 + 1e-12)

    def test_oversampled_quadrature_oracle(self):
        # independent evaluation: reconstruct all fields on a 4x finer x-grid
        # by trigonometric interpolation and integrate the closed-form
        # integrands directly (same z-rule); agreement pins the x-quadrature
        from ld_lattice.fields import gap_weights_for, transform_for

        geom = make_geometry(2, 0.4, 1.2, 1)
        pr = ModelParams(kappa=1.1, H=2.0, p=0.5, r=0.2)
        disc = Discretization(32, 6)
        cfg = random_configuration(geom, disc, 7, strength=0.05)
        bd = energy(cfg, geom, pr)

        R = 4
        fine = disc.Mx * R
        q = geom.q
        xf = 2 * q * np.arange(fine) / fine

        def upsample(v):
            spec = np.fft.fft(v)
            pad = np.zeros(fine, dtype=complex)
            M = disc.Mx
            pad[:M // 2] = spec[:M // 2]
            pad[-(M // 2):] = spec[-(M // 2):]
            pad[M // 2] *= 0.5
            pad[-M // 2] += 0.5 * spec[M // 2]
            return np.fft.ifft(pad).real * R

        def dx_fine(v):
            k = 2 * np.pi * np.fft.fftfreq(fine, d=2 * q / fine)
            k[fine // 2] = 0.0
            return np.fft.ifft(1j * k * np.fft.fft(v)).real

        tr = transform_for(geom, disc, pr.p)
        W = gap_weights_for(geom, disc, pr.p, "trapezoid")
        hmean = geom.mean_field(pr)
        # A_x rows and gap integrals on the coarse grid, upsampled afterwards
        t2p = np.array([n / geom.N for n in geom.stored_planes()])
        ax = hmean * np.array([n * pr.p for n in geom.stored_planes()])[:, None] \
            + tr.rows(cfg.xi, t2p, "dz")
        gap_int = tr.gap_dx_integral(cfg.xi, W)
        f0, alpha0, slope0, chi0 = cfg.plane_zero_parts()

        hx_f = 2 * q / fine
        cond = 0.0
        jos = 0.0
        planes = list(geom.stored_planes())
        for i, n in enumerate(planes):
            ff = upsample(cfg.f[i])
            Vf = cfg.slope(n) + dx_fine(upsample(cfg.chi[i])) - upsample(ax[i])
            cond += pr.p * hx_f * np.sum(0.5 * (ff ** 2 - 1) ** 2
                                         + (dx_fine(ff) ** 2 + Vf ** 2 * ff ** 2)
                                         / pr.kappa ** 2)
        for n in range(1, geom.N + 1):
            up = geom.plane_row(n)
            if n == 1:
                a_lo, s_lo, c_lo, fl = alpha0, slope0, chi0, f0
            else:
                lo = geom.plane_row(n - 1)
                a_lo, s_lo, c_lo, fl = cfg.alpha[lo], cfg.slope(n - 1), cfg.chi[lo], cfg.f[lo]
            Phi = (cfg.alpha[up] - a_lo) + (cfg.slope(n) - s_lo) * xf \
                + upsample(cfg.chi[up]) - upsample(c_lo) + upsample(gap_int[n - 1])
            fu, flo = upsample(cfg.f[up]), upsample(fl)
            jos += 0.5 * pr.r * pr.p * hx_f * np.sum(fu ** 2 + flo ** 2
                                                     - 2 * fu * flo * np.cos(Phi))
        assert cond == pytest.approx(bd.condensation, rel=1e-8)
        assert jos == pytest.approx(bd.josephson, rel=1e-8)


class TestGradient:
    @pytest.mark.parametrize("kind,N,s", [("biperiodic", 2, 0.31),
                                          ("biperiodic", 1, 0.0),
                                          ("finite_layer", 2, 0.0)])
    def test_finite_difference_groups(self, kind, N, s):
        geom = make_geometry(N, s, 1.1, 1, kind)
        disc = Discretization(16, 4)
        pr = ModelParams(kappa=1.2, H=2.2, p=0.55, r=0.3)
        cfg = random_configuration(geom, disc, 5)
        _, tan = energy_and_gradient(cfg, geom, pr)
        vec = pack_configuration(cfg)
        gvec = tan.pack()
        h = 1e-5
        for name, sl in pack_slices(cfg).items():
            v = np.zeros_like(vec)
            dirn = RNG.standard_normal(sl.stop - sl.start)
            dirn /= np.linalg.norm(dirn)
            v[sl] = dirn
            Ep = energy(unpack_configuration(vec + h * v, cfg), geom, pr).total
            Em = energy(unpack_configuration(vec - h * v, cfg), geom, pr).total
            fd = (Ep - Em) / (2 * h)
            an = float(np.dot(gvec, v))
            assert fd == pytest.approx(an, rel=1e-6, abs=1e-10), name

    def test_zero_at_manifold(self):
        geom = build_geometry(2, 0.4, 1, PARAMS0)
        disc = Discretization(32, 4)
        delta = PhaseVector.biperiodic([2.2], PARAMS0.H * P * geom.s)
        tan = gradient(manifold_point(delta, geom, PARAMS0, disc), geom, PARAMS0)
        assert tan.sup_norm() == 0.0

    def test_manifold_gradient_is_pure_coupling(self):
        # condensation and magnetic terms are stationary on the manifold, so
        # the gradient there is the coupling derivative alone: it scales
        # exactly linearly in r
        geom = build_geometry(2, 0.0, 1, PARAMS0)
        disc = Discretization(32, 4)
        delta = PhaseVector.biperiodic([0.9], 0.0)
        cfg = manifold_point(delta, geom, PARAMS0, disc)
        t1 = gradient(cfg, geom, PARAMS0.with_r(1e-2)).pack()
        t2 = gradient(cfg, geom, PARAMS0.with_r(2e-2)).pack()
        assert np.max(np.abs(t1)) > 0
        assert np.allclose(t2, 2.0 * t1, rtol=0, atol=1e-15 * np.max(np.abs(t1)))
        # the reduced (phase-offset) directions are flat at this order: the
        # coupling integrates to a delta-independent constant over a period
        assert np.max(np.abs(gradient(cfg, geom, PARAMS0.with_r(1e-2)).alpha)) < 1e-15

    def test_flat_directions_machine_zero(self):
        geom = build_geometry(2, 0.3, 1, PARAMS0.with_r(5e-2))
        disc = Discretization(16, 4)
        pr = PARAMS0.with_r(5e-2)
        cfg = random_configuration(geom, disc, 9)
        tan = gradient(cfg, geom, pr)
        # constant gauge shift: all alpha together
        assert abs(np.sum(tan.alpha)) < 1e-12 * max(1.0, np.max(np.abs(tan.alpha)))
        # infinitesimal translation: alpha by -slope, chi by -chi', f by -f',
        # xi by -d_x xi, d by -K pi/q (spectral discretization is exactly
        # translation invariant)
        from ld_lattice._spectral import dx_periodic
        period = 2 * geom.q
        slopes = np.array([cfg.slope(n) for n in geom.stored_planes()])
        deriv = (np.sum(tan.f * dx_periodic(cfg.f, period))
                 + np.sum(tan.chi * dx_periodic(cfg.chi, period))
                 + np.sum(tan.alpha * slopes)
                 + np.sum(tan.xi * dx_periodic(cfg.xi.T, 1.0).T / (2 * geom.q))
                 + tan.d * (geom.K * np.pi / geom.q))
        scale = max(np.max(np.abs(tan.f)), np.max(np.abs(tan.xi)), 1.0)
        assert abs(deriv) < 1e-9 * scale


class TestInvariances:
    def test_translation_covariance_grid_roll(self):
        geom = build_geometry(2, 0.3, 1, PARAMS0.with_r(2e-2))
        pr = PARAMS0.with_r(2e-2)
        disc = Discretization(16, 4)
        cfg = random_configuration(geom, disc, 13)
        shift_cells = 3
        x0 = 2 * geom.q * shift_cells / disc.Mx
        rolled = cfg.copy()
        rolled.f = np.roll(cfg.f, shift_cells, axis=1)
        rolled.chi = np.roll(cfg.chi, shift_cells, axis=1)
        rolled.alpha = cfg.alpha - np.array([cfg.slope(n) for n in geom.stored_planes()]) * x0
        rolled.xi = np.roll(cfg.xi, shift_cells, axis=0)
        rolled.d = cfg.d - (geom.K * np.pi / geom.q) * x0
        e0 = energy(cfg, geom, pr).total
        e1 = energy(rolled, geom, pr).total
        assert e1 == pytest.approx(e0, rel=1e-12)


class TestElResiduals:
    def test_exact_zero_coupling_minimizer(self):
        geom = build_geometry(2, 0.3, 1, PARAMS0)
        disc = Discretization(32, 8)
        delta = PhaseVector.biperiodic([1.0], PARAMS0.H * P * geom.s)
        res = el_residuals(manifold_point(delta, geom, PARAMS0, disc), geom, PARAMS0)
        assert all(v <= 1e-9 for v in res.values()), res

    def test_first_order_residuals_scale_quadratically(self):
        geom = build_geometry(1, np.pi / (PARAMS0.H * P), 1, PARAMS0)
        disc = Discretization(64, 16)
        delta = PhaseVector.biperiodic(np.empty(0), np.pi)
        r_list = np.array([1e-3, 1e-2, 1e-1])
        sups = []
        for r in r_list:
            pr = PARAMS0.with_r(r)
            cfg = first_order_configuration(delta, r, geom, pr, disc)
            res = el_residuals(cfg, geom, pr)
            sups.append(max(res["order_parameter"], res["field_jump"],
                            res["josephson_field"], res["continuity"]))
        slope = np.polyfit(np.log(r_list), np.log(sups), 1)[0]
        assert 1.7 <= slope <= 2.3
        # report the measured constant C in residual <= C r^2
        C = max(s / r ** 2 for s, r in zip(sups, r_list))
        assert np.isfinite(C)

    def test_converged_minimizer_residuals(self):
        pr = PARAMS0.with_r(5e-3)
        geom = build_geometry(1, np.pi / (pr.H * P), 1, pr)
        disc = Discretization(64, 16)
        delta = PhaseVector.biperiodic(np.empty(0), np.pi)
        start = first_order_configuration(delta, pr.r, geom, pr, disc)
        res = minimize_energy(start, geom, pr, SolverOptions(grad_tol=1e-9))
        assert res.converged
        rd = el_residuals(res.cfg, geom, pr)
        # the equation residuals reflect weak/strong-form consistency; the
        # z-uniformity metric saturates at the band-limit ringing floor and is
        # exercised by its own trend test below
        for key in ("order_parameter", "field_jump", "josephson_field", "continuity"):
            assert rd[key] <= 1e-6, (key, rd)

    def test_z_uniformity_trend_along_run(self):
        # h becomes z-uniform inside the gaps as the gradient drops
        pr = PARAMS0.with_r(5e-3)
        geom = build_geometry(1, np.pi / (pr.H * P), 1, pr)
        disc = Discretization(32, 8)
        from ld_lattice import initial_configuration
        start = initial_configuration(geom, pr, disc, amplitude=0.1, seed=2)
        var0 = el_residuals(start, geom, pr)["field_z_uniformity"]
        res = minimize_energy(start, geom, pr, SolverOptions(grad_tol=1e-9))
        var1 = el_residuals(res.cfg, geom, pr)["field_z_uniformity"]
        assert var1 < 1e-2 * var0
