"""Output files: series.csv, fields.csv, report.txt, config.echo and a reloadable npz."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import RunConfig, echo_config, parse_config
from .entropy import EntropyMap
from .stepper import SERIES_KEYS, Trajectory

SERIES_COLUMNS = ("k", "t") + SERIES_KEYS


def _num(v) -> str:
    return format(float(v), ".17g")


def _open(path: Path):
    try:
        return open(path, "w", newline="", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def series_rows(traj: Trajectory | None, T: float = 1.0, N: int = 1):
    if traj is None:
        return []
    rec = traj.records
    rows = []
    for k in range(len(traj.states)):
        mass = (rec["mass_1"][k], rec["mass_2"][k])
        row = [str(k), _num(k * T / N), _num(rec["entropy"][k]), _num(rec["dissipation"][k]),
               _num(mass[0]), _num(mass[1]), _num(rec["rminus_1"][k] + rec["rminus_2"][k]),
               _num(rec["w_h1_sq"][k]), str(int(rec["newton_iters"][k]))]
        rows.append(row)
    return rows


def write_series(path, traj, cfg: RunConfig):
    with _open(Path(path)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        w.writerows(series_rows(traj, cfg.T, cfg.N))


def write_fields(path, traj, cfg: RunConfig):
    with _open(Path(path)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        coords = ["x"] if cfg.dim == 1 else ["x", "y"]
        w.writerow(["k", "t", "node", *coords, "u1", "u2"])
        if traj is None:
            return
        nodes = traj.space.nodes
        for k in cfg.snapshot_steps():
            if k >= len(traj.states):
                continue
            u = traj.states[k]
            t = _num(k * cfg.T / cfg.N)
            for q in range(nodes.shape[0]):
                w.writerow([str(k), t, str(q), *(_num(v) for v in nodes[q]), _num(u[0, q]), _num(u[1, q])])


def write_report(path, lines):
    with _open(Path(path)) as fh:
        fh.write("".join(line.rstrip("\n") + "\n" for line in lines))


def emit_outputs(traj: Trajectory | None, report_lines, cfg: RunConfig, out_dir, figures: bool | None = None):
    """Write all run artefacts into ``out_dir`` and return the list of paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    paths = [out / "series.csv", out / "fields.csv", out / "report.txt", out / "config.echo"]
    write_series(paths[0], traj, cfg)
    write_fields(paths[1], traj, cfg)
    write_report(paths[2], report_lines)
    with _open(paths[3]) as fh:
        fh.write(echo_config(cfg))
    if traj is not None:
        paths.append(save_trajectory(out / "trajectory.npz", traj, cfg))
    if (cfg.figures if figures is None else figures) and traj is not None:
        from .plotting import render_run_figures

        paths.extend(render_run_figures(traj, cfg, out))
    return paths


def save_trajectory(path, traj: Trajectory, cfg: RunConfig):
    path = Path(path)
    rec = {f"rec_{k}": np.asarray(v, dtype=float) for k, v in traj.records.items()}
    np.savez_compressed(path, coeffs=np.array(traj.coeffs), states=np.array(traj.states),
                        config=np.array(echo_config(cfg)), **rec)
    return path


def load_trajectory(path):
    """Rebuild ``(trajectory, config)`` from a saved npz."""
    try:
        data = np.load(Path(path), allow_pickle=False)
    except OSError as exc:
        raise OSError(f"cannot read trajectory {path}: {exc}") from exc
    with data:
        cfg = parse_config(str(data["config"]))
        reg, maps, space, scfg = cfg.build()
        traj = Trajectory(space, reg, maps, scfg)
        traj.coeffs = list(data["coeffs"])
        traj.states = list(data["states"])
        traj.records = {k[4:]: list(data[k]) for k in data.files if k.startswith("rec_")}
    return traj, cfg
