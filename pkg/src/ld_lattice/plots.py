"""Figure rendering for the CLI report paths.

Every function writes a PNG next to the delimited data it illustrates and
returns the path.  Figures are a convenience view; the CSV/JSON files remain
the authoritative output.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def field_heatmap(fs, path):
    """Local magnetic field over the period cell."""
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    im = ax.pcolormesh(fs.x, fs.z_rows, fs.h, shading="nearest", cmap="RdBu_r")
    fig.colorbar(im, ax=ax, label="h")
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.set_title("local field")
    return _save(fig, path)


def plane_profiles(fs, path, f=None):
    """Per-plane moduli and currents, per-gap Josephson current."""
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.0))
    planes = list(fs.geom.stored_planes())
    if f is not None:
        for i, n in enumerate(planes):
            axes[0].plot(fs.x, f[i], label=f"n={n}")
    axes[0].set_title("|psi| per plane")
    for i, n in enumerate(planes):
        axes[1].plot(fs.x, fs.jx[i], label=f"n={n}")
    axes[1].set_title("in-plane current")
    for n in range(fs.jz.shape[0]):
        axes[2].plot(fs.x, fs.jz[n], label=f"gap {n + 1}")
    axes[2].set_title("Josephson current")
    for ax in axes:
        ax.set_xlabel("x")
        ax.legend(fontsize=7)
    return _save(fig, path)


def convergence_history(history, path):
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    e = np.asarray(history)
    ax.semilogy(np.maximum(e - e.min() + 1e-18, 1e-18))
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy above final")
    ax.set_title("descent history")
    return _save(fig, path)


def sweep_summary(report, path):
    """Energy law e(r)/r and the field deviation against coupling."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    r = np.asarray(report.r_values)
    e = np.asarray(report.measured_energy_per_area)
    axes[0].plot(r, e / r, "o-", label="measured e(r)/r")
    axes[0].plot(r, 1.0 + r * report.predicted_C0_plus_C1F, "--",
                 label="expansion")
    axes[0].set_xlabel("r")
    axes[0].set_ylabel("e(r)/r")
    axes[0].legend(fontsize=8)
    axes[1].loglog(r, np.asarray(report.field_sup_errors) / r, "o-")
    axes[1].set_xlabel("r")
    axes[1].set_ylabel("sup|h - h_pred| / r")
    axes[0].set_title("energy law")
    axes[1].set_title("field convergence")
    return _save(fig, path)


def phase_diagram(rows, path):
    """F(N, s) curves of a frustration scan."""
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    by_N = {}
    for row in rows:
        by_N.setdefault(row["N"], []).append((row["s"], row["F"]))
    for N, pts in sorted(by_N.items()):
        pts.sort()
        ax.plot([a for a, _ in pts], [b for _, b in pts], "o-", label=f"N={N}")
    ax.axhline(-1.0, color="k", lw=0.6, ls=":")
    ax.set_xlabel("s")
    ax.set_ylabel("F(N, s)")
    ax.legend(fontsize=8)
    ax.set_title("reduced problem minimum")
    return _save(fig, path)
