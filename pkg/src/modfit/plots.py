"""Figure rendering for the report path.

Every CSV the CLI writes gets a PNG rendered next to it, plus a small
self-contained sidecar script that reproduces the figure from the CSV
alone (useful when only the delimited output is shipped).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_surface_plot(csv_path, png_path, param_name: str, logy: bool = True) -> Path:
    from .analysis import read_surface_csv

    _, cols = read_surface_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(cols[0], cols[1], lw=1.0)
    positive = cols[1][cols[1] > 0]
    if logy and positive.size:
        # symlog keeps exact zeros (the loss at the optimum) plottable
        ax.set_yscale("symlog", linthresh=float(max(positive.min(), 1e-12)))
    ax.set_xlabel(param_name)
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return Path(png_path)


def save_gamma_plot(csv_path, png_path) -> Path:
    from .analysis import read_surface_csv

    _, cols = read_surface_csv(csv_path)
    k, dhat, gamma = cols
    ku = np.unique(k)
    du = np.unique(dhat)
    img = gamma.reshape(ku.size, du.size)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    extent = [du.min(), du.max(), ku.min(), ku.max()]
    im = ax.imshow(img, origin="lower", aspect="auto", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="per-bin loss")
    ax.set_xlabel("estimated delay (samples)")
    ax.set_ylabel("bin k")
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return Path(png_path)


def save_trajectory_plot(csv_path, png_path, target: float | None = None) -> Path:
    from .analysis import read_surface_csv

    _, cols = read_surface_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(cols[0], cols[1], lw=1.0)
    if target is not None:
        ax.axhline(target, color="k", ls="--", lw=0.8, label="target")
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("estimated delay (samples)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return Path(png_path)


def save_history_plot(png_path, histories: dict[int, np.ndarray]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for seed, hist in sorted(histories.items()):
        ax.plot(np.asarray(hist), lw=0.8, label=f"seed {seed}")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    if len(histories) <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return Path(png_path)


def save_control_plot(png_path, series: dict[str, np.ndarray], ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for label, values in series.items():
        ax.plot(np.asarray(values), lw=1.0, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return Path(png_path)


_SIDECAR = '''"""Auto-generated: re-render {png_name} from {csv_name}."""
import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / {csv_name!r}, newline="") as fh:
    reader = csv.reader(fh)
    header = next(reader)
    cols = list(zip(*[[float(c) for c in row] for row in reader]))

fig, ax = plt.subplots(figsize=(6, 3.2))
if len(cols) == 2:
    ax.plot(cols[0], cols[1], lw=1.0)
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
else:  # long-format (k, Dhat, gamma)
    ks = sorted(set(cols[0]))
    ds = sorted(set(cols[1]))
    img = [[0.0] * len(ds) for _ in ks]
    pos = {{(k, d): (i, j) for i, k in enumerate(ks) for j, d in enumerate(ds)}}
    for k, d, g in zip(*cols):
        i, j = pos[(k, d)]
        img[i][j] = g
    im = ax.imshow(img, origin="lower", aspect="auto",
                   extent=[min(ds), max(ds), min(ks), max(ks)])
    fig.colorbar(im, ax=ax, label=header[2])
    ax.set_xlabel(header[1])
    ax.set_ylabel(header[0])
ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig(here / {png_name!r}, dpi=150)
'''


def write_sidecar(csv_path, png_path) -> Path:
    """Plot script that references only the CSV."""
    csv_path = Path(csv_path)
    png_path = Path(png_path)
    script = csv_path.with_name(f"plot_{csv_path.stem}.py")
    script.write_text(
        _SIDECAR.format(csv_name=csv_path.name, png_name=png_path.name)
    )
    return script
