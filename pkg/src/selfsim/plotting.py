"""Figures for the CLI report paths (matplotlib, non-interactive backend)."""

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
}


def _save(fig, path, manifest_hash=None):
    path = Path(path)
    meta = {"Software": "selfsim"}
    if manifest_hash:
        meta["Description"] = f"manifest_sha256={manifest_hash}"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata=meta, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_convergence(report, path, manifest_hash=None):
    """log-log error curves e_k(lambda), plus global metrics when present."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lam = np.asarray(report["lambdas"], dtype=float)
        for key in sorted(report["errors"]):
            vals = np.asarray(report["errors"][key], dtype=float)
            ax.loglog(lam, np.maximum(vals, 1e-300), "o-", label=key.replace("e", "$e_{") + "}$")
        extra = report.get("global_metrics") or {}
        if "global_c1" in extra:
            ax.loglog(lam, extra["global_c1"], "s--", label="global $C^1$")
        if lam.size > 1 and report["errors"].get("e0"):
            e0 = report["errors"]["e0"]
            ref = e0[1] * lam[1] / lam
            ax.loglog(lam[1:], ref[1:], ":", color="0.5", label=r"$\propto\lambda^{-1}$")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$\|u_\lambda(\cdot,1)-\Psi\|$")
        ax.set_title(f"{report.get('name', '')} ({report.get('flow', '')})")
        ax.legend()
        return _save(fig, path, manifest_hash)


def plot_profile(field, path, radius=None, manifest_hash=None, title="profile"):
    grid = field.grid
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if grid.dim == 1:
            x, y = grid.axis, field.full()
            if radius is not None:
                keep = np.abs(x) <= radius
                x, y = x[keep], y[keep]
            ax.plot(x, y, lw=1.5)
            ax.set_xlabel("$y$")
            ax.set_ylabel(r"$\Psi(y)$")
        else:
            im = ax.pcolormesh(grid.axis, grid.axis, field.full().T, shading="auto", cmap="viridis")
            fig.colorbar(im, ax=ax)
            ax.set_aspect("equal")
        ax.set_title(title)
        return _save(fig, path, manifest_hash)


def plot_snapshots(traj, path, count=6, radius=None, manifest_hash=None):
    grid = traj.grid
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        picks = np.unique(np.linspace(0, len(traj.times) - 1, count).astype(int))
        for i in picks:
            state = traj.states[i]
            if grid.dim == 1:
                vals = state.full()
                x = grid.axis
                if radius is not None:
                    keep = np.abs(x) <= radius
                    x, vals = x[keep], vals[keep]
                ax.plot(x, vals, lw=1.2, label=f"t={traj.times[i]:.3g}")
            else:
                mid = grid.points_per_axis // 2
                ax.plot(grid.axis, state.full()[:, mid], lw=1.2, label=f"t={traj.times[i]:.3g}")
        ax.set_xlabel("$x$" if grid.dim == 1 else "$x$ (slice $y=0$)")
        ax.set_ylabel("$u$")
        ax.legend(fontsize=8)
        t = traj.times[1:]
        ax2.semilogx(t, traj.lipschitz_history[1:], "o-", ms=3)
        ax2.set_xlabel("$t$")
        ax2.set_ylabel(r"$\|\nabla u(t)\|_\infty$")
        return _save(fig, path, manifest_hash)


def plot_kernel_fits(rows, path, manifest_hash=None):
    """Fitted vs expected exponents (L^p rows) and decay constants (pointwise rows)."""
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        lp = [r for r in rows if r["estimate_id"].startswith("lp-")]
        if lp:
            labels = [f"{r['estimate_id'][3:]} k={r['k']} p={r['p']:.3g}" for r in lp]
            fitted = [r["fitted_c_or_exponent"] for r in lp]
            expected = [r.get("expected", np.nan) for r in lp]
            idx = np.arange(len(lp))
            ax.bar(idx - 0.2, fitted, 0.4, label="fitted")
            ax.bar(idx + 0.2, expected, 0.4, label="expected")
            ax.set_xticks(idx, labels, rotation=60, ha="right", fontsize=7)
            ax.set_ylabel("time exponent")
            ax.legend()
        pw = [r for r in rows if r["estimate_id"].startswith("pointwise-")]
        for r in pw:
            ax2.plot(r["k"], r["fitted_c_or_exponent"], "o", label=f"{r['estimate_id'][10:]} n={r['n']}")
        ax2.set_xlabel("derivative order $k$")
        ax2.set_ylabel("fitted decay constant $c_k$")
        if pw:
            handles, labels = ax2.get_legend_handles_labels()
            uniq = dict(zip(labels, handles))
            ax2.legend(uniq.values(), uniq.keys(), fontsize=8)
        return _save(fig, path, manifest_hash)


def plot_norms(rows, path, manifest_hash=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [f"{r['family']} b={r['beta']:g} T={r['T']:g}" for r in rows]
        idx = np.arange(len(rows))
        ax.bar(idx, [r["sup_part"] for r in rows], label="sup part")
        ax.bar(idx, [r["cylinder_part"] for r in rows], bottom=[r["sup_part"] for r in rows], label="cylinder part")
        ax.set_xticks(idx, labels, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("norm")
        ax.legend()
        return _save(fig, path, manifest_hash)
