"""Optional PNG figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_run_figures(traj, cfg, out_dir):
    out = Path(out_dir)
    t = np.arange(len(traj.states)) * cfg.T / cfg.N
    rec = traj.records
    paths = []

    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].plot(t, rec["entropy"], label="entropy")
    ax[0].set_xlabel("t")
    ax[0].legend()
    ax[1].semilogy(t[1:], np.maximum(np.asarray(rec["dissipation"][1:]), 1e-300), label="dissipation")
    ax[1].set_xlabel("t")
    ax[1].legend()
    paths.append(_save(fig, out / "entropy.png"))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, rec["mass_1"], label="mass 1")
    ax.plot(t, rec["mass_2"], label="mass 2")
    ax.set_xlabel("t")
    ax.legend()
    paths.append(_save(fig, out / "mass.png"))

    if cfg.dim == 1:
        x = traj.space.nodes[:, 0]
        order = np.argsort(x)
        fig, ax = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
        for k in cfg.snapshot_steps():
            if k < len(traj.states):
                for i in range(2):
                    ax[i].plot(x[order], traj.states[k][i][order], label=f"t={k * cfg.T / cfg.N:.3g}")
        for i in range(2):
            ax[i].set_title(f"u{i + 1}")
            ax[i].set_xlabel("x")
        ax[1].legend(fontsize=8)
        paths.append(_save(fig, out / "fields.png"))
    return paths


def render_convergence_figure(levels, out_dir):
    out = Path(out_dir)
    lv = [r.level for r in levels]
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].semilogy(lv, [r.weak_max for r in levels], "o-")
    ax[0].set_xlabel("refinement level")
    ax[0].set_ylabel("max weak residual")
    for i in range(2):
        ax[1].plot(lv, [r.duality[i] for r in levels], "o-", label=f"species {i + 1}")
    ax[1].set_xlabel("refinement level")
    ax[1].set_ylabel("duality norm")
    ax[1].legend()
    return [_save(fig, out / "convergence.png")]
