"""CSV artifacts and matplotlib figures for solves and studies.

Every delimited output is written atomically (tmp file + rename) with 17
significant digits, so round-tripping a run through its artifacts is
loss-free.  The figure renderers sit next to the CSV writers: the value
surface as a (t, x) heat map, the policy map colored by the optimal control
with the early-stopping region left white, and study tables as convergence
plots.  Figures use the Agg backend and never open a window.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import colors

from .solver import SolveResult, extract_policy

__all__ = [
    "write_csv",
    "write_summary",
    "write_surface",
    "write_policy",
    "write_study",
    "render_surface",
    "render_policy",
    "render_mesh_study",
    "render_control_study",
    "format_table",
]

_FMT = "%.17g"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        if np.isnan(v):
            return "NaN"
        return _FMT % v
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def write_summary(path: Path, record: dict) -> None:
    write_csv(Path(path), list(record.keys()), [list(record.values())])


def write_surface(path: Path, result: SolveResult) -> None:
    """t, x, U_1..U_J rows over the recorded snapshot slices."""
    J = result.controls.j
    header = ["t", "x"] + [f"U_{j + 1}" for j in range(J)]
    x = result.grid.nodes
    rows = []
    for t, slab in zip(result.snapshot_times, result.snapshots):
        for i in range(x.size):
            rows.append([t, x[i]] + [slab[j, i] for j in range(J)])
    write_csv(Path(path), header, rows)


def write_policy(path: Path, result: SolveResult) -> None:
    """t, x, alpha*, stopped rows (needs record_policy)."""
    alpha_field, stopped = extract_policy(result)
    x = result.grid.nodes
    times = result.grid.times
    rows = []
    for n in range(alpha_field.shape[0]):
        for i in range(x.size):
            rows.append([times[n], x[i], alpha_field[n, i], stopped[n, i]])
    write_csv(Path(path), ["t", "x", "alpha", "stopped"], rows)


def write_study(path: Path, header: list[str], rows) -> None:
    write_csv(Path(path), header, rows)


def format_table(header: list[str], rows, width: int = 12) -> str:
    """Aligned text table for study output on stdout."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return "NaN" if np.isnan(v) else f"{v:.6g}"
        return str(v)

    cols = [header] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    for row in cols[1:]:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def render_surface(path: Path, result: SolveResult, component="max") -> None:
    """Heat map of the value function over (t, x) from the snapshots."""
    if component == "max":
        z = result.snapshots.max(axis=1)
    else:
        z = result.snapshots[:, int(component), :]
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    mesh = ax.pcolormesh(result.snapshot_times, result.grid.nodes, z.T,
                         shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="value")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title("value function")
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_policy(path: Path, result: SolveResult) -> None:
    """Optimal-control map with the early-stopping region left white."""
    alpha_field, stopped = extract_policy(result)
    z = np.ma.masked_where(stopped, alpha_field)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("white")
    lo = float(result.controls.values[0])
    hi = float(result.controls.values[-1])
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    mesh = ax.pcolormesh(result.grid.times, result.grid.nodes, z.T,
                         shading="nearest", cmap=cmap,
                         norm=colors.Normalize(vmin=lo, vmax=max(hi, lo + 1e-12)))
    fig.colorbar(mesh, ax=ax, label="optimal control")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title("control strategy (stopping region white)")
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_mesh_study(path: Path, rows: list[dict]) -> None:
    """Increment decay per cost level on a log-log grid."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    by_cost: dict[float, list[dict]] = {}
    for row in rows:
        by_cost.setdefault(row["c"], []).append(row)
    for c, group in sorted(by_cost.items()):
        hs = [r["h"] for r in group if not np.isnan(r["increment"])]
        incs = [abs(r["increment"]) for r in group if not np.isnan(r["increment"])]
        if hs:
            ax.loglog(hs, incs, "o-", label=f"c={c:.6g}")
    ax.set_xlabel("h")
    ax.set_ylabel("|U_h - U_2h|")
    ax.set_title("mesh convergence")
    if by_cost:
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_control_study(path: Path, rows: list[dict]) -> None:
    """Difference to the finest control refinement versus J."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    js = [r["j"] for r in rows if r["diff_to_finest"] > 0]
    ds = [r["diff_to_finest"] for r in rows if r["diff_to_finest"] > 0]
    if js:
        ax.semilogy(js, ds, "o-")
    ax.set_xlabel("J")
    ax.set_ylabel("average |U_J - U_finest|")
    ax.set_title("control refinement")
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)
