"""Full-model minimization and the numerics-vs-expansion comparison harness."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import _spectral, asymptotics, fields
from .energy import (EnergyBreakdown, Tangent, energy as energy_fn,
                     energy_and_gradient, gradient as gradient_fn,
                     pack_configuration, pack_slices, unpack_configuration)
from .asymptotics import PhaseVector, wrap_angle
from .core import (BIPERIODIC, Configuration, Discretization, LatticeGeometry,
                   ModelParams, TWO_PI)


class InsufficientDataError(ValueError):
    """Raised when a fit needs more sweep points than were supplied."""


@dataclass
class SolverOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-9
    memory: int = 10
    seed: int = 0
    gap_rule: str = "trapezoid"


@dataclass
class MinimizeResult:
    cfg: Configuration
    params: ModelParams
    energy: float
    breakdown: EnergyBreakdown
    grad_norm: float
    iterations: int
    converged: bool
    message: str = ""
    energy_history: Optional[np.ndarray] = None


def _preconditioner(template: Configuration, geom: LatticeGeometry,
                    params: ModelParams):
    """Diagonal inverse-curvature model used as the L-BFGS seed matrix.

    Built from the zero-coupling Hessian: spectral scalings for the moduli,
    periodic phase parts, and the stream function (whose raw curvature spans
    many decades through the squared Laplacian), plus coupling-scale floors
    for the soft constants.  Only the scale matters; the quasi-Newton updates
    absorb the rest.
    """
    tr = fields.transform_for(geom, template.disc, params.p)
    q, p, kap = geom.q, params.p, params.kappa
    Mx = template.disc.Mx
    hx = 2.0 * q / Mx
    kx2 = _spectral.x_wavenumbers(Mx, 2.0 * q) ** 2
    r_floor = max(params.r, 1e-8)

    d_f = p * hx * (4.0 + 2.0 * kx2 / kap ** 2)
    d_chi = p * hx * (2.0 * kx2 / kap ** 2 + 2.0 * r_floor * p)
    d_alpha = 4.0 * r_floor * p * q + 1e-12
    d_omega = geom.N * p / (kap ** 2 * q) + 4.0 * r_floor * p * q
    d_d = 4.0 * r_floor * p * q + 1e-12

    if geom.kind == BIPERIODIC:
        lam = tr.lam
        w = tr.weight
    else:
        lam = tr.lam
        w = (2.0 * q / Mx) * tr.hz
    lam_floor = np.min(lam[lam > 1e-12]) if np.any(lam > 1e-12) else 1.0
    d_xi_spec = (2.0 * w / kap ** 2) * (lam ** 2 + lam_floor ** 2)

    def apply(tan: Tangent) -> Tangent:
        f = np.fft.ifft(np.fft.fft(tan.f, axis=-1) / d_f, axis=-1).real
        chi = np.fft.ifft(np.fft.fft(tan.chi, axis=-1) / d_chi, axis=-1).real
        if geom.kind == BIPERIODIC:
            xi = np.fft.ifft2(np.fft.fft2(tan.xi) / d_xi_spec).real
        else:
            xi = tr.grid(tr.coef(tan.xi) / d_xi_spec)
        return Tangent(f, chi, tan.alpha / d_alpha, tan.omega / d_omega,
                                  tan.d / d_d, xi)

    return apply


def minimize_energy(initial: Configuration, geom: LatticeGeometry, params: ModelParams,
                    opts: Optional[SolverOptions] = None) -> MinimizeResult:
    """Limited-memory quasi-Newton descent with backtracking line search.

    Sufficient decrease constant 1e-4, backtrack factor 0.5; steps that drive
    any modulus sample to f <= 0 are rejected by an energy barrier.  The flat
    directions of the functional (global phase, translation) are left flat:
    convergence is judged on the gradient sup-norm alone.  On failure to reach
    the tolerance the best state found is returned with ``converged=False``.
    """
    opts = opts or SolverOptions()
    template = initial.copy()
    slices = pack_slices(template)
    precond = _preconditioner(template, geom, params)

    def fg(vec):
        cfg = unpack_configuration(vec, template)
        if np.min(cfg.f) <= 0.0:
            return np.inf, None, None
        bd, tan = energy_and_gradient(cfg, geom, params, gap_rule=opts.gap_rule)
        return bd.total, tan.pack(), bd

    def f_only(vec):
        cfg = unpack_configuration(vec, template)
        if np.min(cfg.f) <= 0.0:
            return np.inf
        return energy_fn(cfg, geom, params, gap_rule=opts.gap_rule).total

    def precond_vec(gvec):
        tan = Tangent(
            gvec[slices["f"]].reshape(template.f.shape),
            gvec[slices["chi"]].reshape(template.chi.shape),
            gvec[slices["alpha"]].copy(),
            float(gvec[slices["omega"]][0]),
            float(gvec[slices["d"]][0]),
            gvec[slices["xi"]].reshape(template.xi.shape),
        )
        return precond(tan).pack()

    x = pack_configuration(initial)
    E, g, bd = fg(x)
    if not np.isfinite(E):
        raise ValueError("initial configuration has nonpositive moduli")
    history: List[float] = [E]
    s_list: List[np.ndarray] = []
    y_list: List[np.ndarray] = []
    rho: List[float] = []
    converged = False
    message = ""
    it = 0
    for it in range(1, opts.max_iters + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= opts.grad_tol:
            converged = True
            break
        # two-loop recursion with the diagonal model as seed
        qv = g.copy()
        alphas = []
        for si, yi, ri in zip(reversed(s_list), reversed(y_list), reversed(rho)):
            ai = ri * np.dot(si, qv)
            alphas.append(ai)
            qv -= ai * yi
        z = precond_vec(qv)
        for (si, yi, ri), ai in zip(zip(s_list, y_list, rho), reversed(alphas)):
            bi = ri * np.dot(yi, z)
            z += (ai - bi) * si
        direction = -z
        slope = float(np.dot(g, direction))
        if slope >= 0:
            s_list.clear(); y_list.clear(); rho.clear()
            direction = -precond_vec(g)
            slope = float(np.dot(g, direction))
        t = 1.0
        accepted = False
        for _ in range(60):
            E_new = f_only(x + t * direction)
            if np.isfinite(E_new) and E_new <= E + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            message = "line search failed (flat to machine precision)"
            break
        x_new = x + t * direction
        E_new, g_new, bd = fg(x_new)
        sk = x_new - x
        yk = g_new - g
        sy = float(np.dot(sk, yk))
        if sy > 1e-14 * np.linalg.norm(sk) * np.linalg.norm(yk):
            s_list.append(sk)
            y_list.append(yk)
            rho.append(1.0 / sy)
            if len(s_list) > opts.memory:
                s_list.pop(0); y_list.pop(0); rho.pop(0)
        x, E, g = x_new, E_new, g_new
        history.append(E)

    cfg = unpack_configuration(x, template).canonicalized()
    bd_final = energy_fn(cfg, geom, params, gap_rule=opts.gap_rule)
    g_final = gradient_fn(cfg, geom, params, gap_rule=opts.gap_rule)
    gnorm = float(np.max(np.abs(g_final.pack())))
    if not converged and not message:
        message = f"no convergence after {it} iterations (grad {gnorm:.3e})"
    return MinimizeResult(cfg=cfg, params=params, energy=bd_final.total,
                          breakdown=bd_final, grad_norm=gnorm, iterations=it,
                          converged=converged, message=message,
                          energy_history=np.array(history))


def initial_configuration(geom: LatticeGeometry, params: ModelParams,
                          disc: Discretization, delta: Optional[PhaseVector] = None,
                          amplitude: float = 0.1, seed: int = 0) -> Configuration:
    """Manifold point plus smooth random perturbations of the given amplitude.

    The perturbations are band-limited (upper half of the spectrum removed) so
    the polar representation stays valid (f near 1) and the state remains in
    the torus representation.
    """
    from .core import zero_configuration

    rng = np.random.default_rng(seed)
    if delta is None:
        Hps = params.H * params.p * geom.s
        if geom.kind == BIPERIODIC:
            delta = PhaseVector.biperiodic(rng.uniform(0, TWO_PI, max(geom.N - 1, 0)), Hps)
        else:
            delta = PhaseVector.finite(rng.uniform(0, TWO_PI, max(geom.N - 1, 0)))
    # base state built directly so inadmissible winding classes can be seeded too
    cfg = zero_configuration(geom, disc)
    planes = list(geom.stored_planes())
    cfg.alpha = delta.alphas(planes)
    if geom.kind == BIPERIODIC:
        cfg.d = cfg.alpha[geom.plane_row(geom.N)] + geom.N * params.H * params.p * geom.s

    def smooth(shape):
        noise = rng.standard_normal(shape)
        spec = np.fft.fft(noise, axis=-1)
        cut = shape[-1] // 4
        mask = np.zeros(shape[-1])
        mask[:cut] = 1.0
        mask[-cut + 1:] = 1.0 if cut > 1 else 0.0
        return np.fft.ifft(spec * mask, axis=-1).real

    if amplitude > 0:
        cfg.f = cfg.f + amplitude * smooth(cfg.f.shape)
        cfg.chi = cfg.chi + amplitude * smooth(cfg.chi.shape)
        cfg.chi -= cfg.chi.mean(axis=1, keepdims=True)
        cfg.alpha = cfg.alpha + amplitude * rng.standard_normal(cfg.alpha.shape)
        # perturb the local field (not the raw stream function, whose Laplacian
        # would amplify the noise) and invert it back through the Poisson solve
        tr = fields.transform_for(geom, disc, params.p)
        field_noise = amplitude * smooth(cfg.xi.T.shape).T
        if geom.kind == BIPERIODIC:
            field_noise -= field_noise.mean()
            pert, _ = tr.solve_poisson(field_noise)
        else:
            pert = tr.solve_poisson(field_noise)
        cfg.xi = cfg.xi + pert
    return cfg


def continuation_in_r(delta_init: PhaseVector, r_list: Sequence[float],
                      geom: LatticeGeometry, params: ModelParams,
                      disc: Discretization,
                      opts: Optional[SolverOptions] = None) -> List[MinimizeResult]:
    """Track the minimizing branch over an ascending coupling sweep.

    The smallest r starts from the first-order asymptotic configuration; each
    subsequent r warm-starts from the previous converged state.
    """
    r_list = list(r_list)
    if any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_list must be strictly ascending")
    results: List[MinimizeResult] = []
    state: Optional[Configuration] = None
    for r in r_list:
        pr = params.with_r(r)
        if r == 0.0:
            cfg = asymptotics.manifold_point(delta_init, geom, pr, disc)
            bd = energy_fn(cfg, geom, pr)
            g = gradient_fn(cfg, geom, pr)
            results.append(MinimizeResult(cfg, pr, bd.total, bd,
                                          float(np.max(np.abs(g.pack()))), 0, True))
            state = cfg
            continue
        start = (asymptotics.first_order_configuration(delta_init, r, geom, pr, disc)
                 if state is None else state)
        res = minimize_energy(start, geom, pr, opts)
        if not res.converged:
            res.message = f"continuation stalled at r = {r}: " + res.message
            results.append(res)
            return results
        results.append(res)
        state = res.cfg
    return results


def extract_phases(cfg: Configuration, geom: LatticeGeometry,
                   params: ModelParams) -> np.ndarray:
    """Per-gap phases recovered from the Josephson current by least squares.

    Fits j_z(x) to A sin(H p x) + B cos(H p x); the translation freedom shows
    up as a common offset and is not removed here.
    """
    fs = fields.observables(cfg, geom, params)
    Hp = params.H * params.p
    x = cfg.x
    basis = np.stack([np.sin(Hp * x), np.cos(Hp * x)], axis=1)
    phases = np.empty(geom.N)
    for n in range(geom.N):
        coef, *_ = np.linalg.lstsq(basis, fs.jz[n], rcond=None)
        phases[n] = np.arctan2(coef[1], coef[0])
    return phases


@dataclass
class ComparisonReport:
    r_values: np.ndarray
    measured_energy_per_area: np.ndarray
    fitted_C0_plus_C1F: float
    predicted_C0_plus_C1F: float
    field_sup_errors: np.ndarray
    delta_extracted: PhaseVector
    delta_raw: np.ndarray
    expansion: asymptotics.ExpansionReport

    def to_dict(self) -> dict:
        return {
            "r_values": list(map(float, self.r_values)),
            "measured_energy_per_area": list(map(float, self.measured_energy_per_area)),
            "fitted_C0_plus_C1F": self.fitted_C0_plus_C1F,
            "predicted_C0_plus_C1F": self.predicted_C0_plus_C1F,
            "field_sup_errors": list(map(float, self.field_sup_errors)),
            "delta_extracted": list(map(float, self.delta_extracted.delta)),
            "expansion": self.expansion.to_dict(),
        }


def richardson_extrapolate(r: np.ndarray, g: np.ndarray) -> float:
    """Polynomial (Neville) extrapolation of g(r) to r = 0."""
    r = np.asarray(r, dtype=float)
    vals = np.asarray(g, dtype=float).copy()
    n = vals.size
    for level in range(1, n):
        for i in range(n - level):
            vals[i] = vals[i + 1] + (vals[i] - vals[i + 1]) * r[i + level] / (r[i + level] - r[i])
    return float(vals[0])


def compare_with_asymptotics(results: Sequence[MinimizeResult], geom: LatticeGeometry,
                             params: ModelParams) -> ComparisonReport:
    """Confront converged minimizers with the small-coupling expansion.

    Extrapolates (e(r) - r)/r^2 to r -> 0 and compares with C0 + C1 F; reports
    the sup-norm deviation of the gap-averaged local field from its order-r
    prediction at each r, and the phases recovered from the Josephson current.
    """
    if len(results) < 2:
        raise InsufficientDataError("need at least two coupling values")
    area = geom.cell_area(params)
    r_values = np.array([res.params.r for res in results])
    e = np.array([res.energy / area for res in results])
    g = (e - r_values) / r_values ** 2
    fitted = richardson_extrapolate(r_values, g)

    report = asymptotics.expansion_constants(geom, params)
    predicted = report.C0 + report.C1 * report.F

    sup_errors = []
    for res in results:
        raw = extract_phases(res.cfg, geom, res.params)
        pv_raw = PhaseVector(np.concatenate([raw, [raw[0] - params.H * params.p * geom.s]]),
                             BIPERIODIC) if geom.kind == BIPERIODIC else PhaseVector(raw, geom.kind)
        fs_num = fields.observables(res.cfg, geom, res.params)
        pred = asymptotics.predicted_fields(pv_raw, res.params.r, geom, res.params,
                                            res.cfg.disc)
        sup_errors.append(float(np.max(np.abs(fs_num.h_gap_average - pred.h_gap_average))))

    raw = extract_phases(results[-1].cfg, geom, results[-1].params)
    canonical = wrap_angle(raw - raw[0])
    Hps = params.H * params.p * geom.s
    delta_pv = (PhaseVector.biperiodic(canonical[1:], Hps) if geom.kind == BIPERIODIC
                else PhaseVector(np.concatenate([[0.0], canonical[1:]]), geom.kind))
    return ComparisonReport(r_values=r_values, measured_energy_per_area=e,
                            fitted_C0_plus_C1F=fitted, predicted_C0_plus_C1F=predicted,
                            field_sup_errors=np.array(sup_errors),
                            delta_extracted=delta_pv, delta_raw=raw, expansion=report)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path: str, res: MinimizeResult, geom: LatticeGeometry,
                    disc: Discretization, opts: Optional[SolverOptions] = None) -> None:
    """JSON header + npz payload (written atomically next to each other)."""
    from . import core as core_mod

    header = {
        "geometry": geom.to_dict(),
        "params": res.params.to_dict(),
        "grid": disc.to_dict(),
        "solver": (opts.__dict__ if opts else None),
        "iterations": res.iterations,
        "energy": res.energy,
        "grad_norm": res.grad_norm,
        "converged": res.converged,
    }
    tmp = path + ".json.tmp"
    with open(tmp, "w", newline="\n") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path + ".json")
    arrays = {"f": res.cfg.f, "chi": res.cfg.chi, "alpha": res.cfg.alpha,
              "omega": np.array([res.cfg.omega]), "d": np.array([res.cfg.d]),
              "xi": res.cfg.xi}
    tmp = path + ".npz.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path + ".npz")


def load_checkpoint(path: str):
    from . import core as core_mod

    with open(path + ".json") as fh:
        header = json.load(fh)
    doc = {}
    doc.update(header["params"])
    doc.update(header["geometry"])
    doc.update(header["grid"])
    params, geom, disc = core_mod.from_document(doc)
    data = np.load(path + ".npz")
    cfg = Configuration(geom, disc, data["f"], data["chi"], data["alpha"],
                        float(data["omega"][0]), float(data["d"][0]), data["xi"])
    return cfg, params, geom, disc, header
