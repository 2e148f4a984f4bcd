"""Loss-surface studies for the underlying phase-estimation problems.

Delay estimation: for a target delay D and an estimate Dhat, the
half-spectrum squared error of a pure delay reduces to

    L(Dhat) = sum_k |X(k)|^2 * (1 - cos(2*pi*k*(Dhat - D)/N))

whose gradient is sum_k |X(k)|^2 * (2*pi*k/N) * sin(2*pi*k*(Dhat-D)/N).
The power spectrum |X(k)|^2 acts as a frequency weighting: low-passed
inputs (triangle kernels) widen the convex basin around Dhat = D to
roughly the kernel length, while flat spectra leave it about a sample
wide.

All-pass pole estimation uses the same weighted error between cascade
responses; surfaces are reported against 1 - pole, which tracks the
section break frequency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import FreqGrid, apf_cascade_response


@dataclass
class LossSurface:
    """Loss sampled over a 1-D parameter grid."""

    grid: np.ndarray  # strictly increasing parameter values
    values: np.ndarray
    weights: np.ndarray  # |X(k)|^2 used in the loss
    metadata: dict = field(default_factory=dict)
    param_name: str = "param"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.size == 0:
            raise ValueError("empty surface grid")
        if self.grid.size != self.values.size:
            raise ValueError("grid and values must have equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("surface grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < -1e-12):
            raise ValueError("surface values must be finite and nonnegative")


def gamma_surface(
    delay_target: float,
    n_fft: int,
    k_range: np.ndarray | None = None,
    dhat_range: np.ndarray | None = None,
):
    """Per-bin delay-error surface 1 - cos(2*pi*k*(Dhat - D)/N).

    Returns (k values, Dhat values, gamma matrix with shape (len(k), len(Dhat))).
    """
    if k_range is None:
        k_range = np.arange(n_fft // 2 + 1)
    if dhat_range is None:
        dhat_range = np.linspace(0.0, n_fft / 2.0, 513)
    k = np.asarray(k_range, dtype=np.float64)
    dhat = np.asarray(dhat_range, dtype=np.float64)
    gamma = 1.0 - np.cos(
        2.0 * np.pi * np.outer(k, dhat - delay_target) / n_fft
    )
    return k, dhat, gamma


def delay_loss(dhat, delay_target: float, x_spectrum: np.ndarray):
    """Weighted delay-estimation loss and its analytic gradient.

    ``dhat`` may be a scalar or an array; returns (loss, dloss/dDhat) of
    matching shape. Note the gradient carries the full 2*pi*k/N chain
    factor of the cosine argument.
    """
    x_spectrum = np.asarray(x_spectrum)
    weights = np.abs(x_spectrum) ** 2
    n_fft = 2 * (x_spectrum.size - 1)
    k = np.arange(x_spectrum.size, dtype=np.float64)
    dhat_arr = np.atleast_1d(np.asarray(dhat, dtype=np.float64))
    arg = 2.0 * np.pi * np.outer(dhat_arr - delay_target, k) / n_fft
    loss = np.sum(weights * (1.0 - np.cos(arg)), axis=1)
    slope = np.sum(weights * (2.0 * np.pi * k / n_fft) * np.sin(arg), axis=1)
    if np.isscalar(dhat) or np.asarray(dhat).ndim == 0:
        return float(loss[0]), float(slope[0])
    return loss, slope


def delay_loss_surface(
    delay_target: float,
    x_spectrum: np.ndarray,
    dhat_range: np.ndarray | None = None,
) -> LossSurface:
    x_spectrum = np.asarray(x_spectrum)
    n_fft = 2 * (x_spectrum.size - 1)
    if dhat_range is None:
        dhat_range = np.linspace(0.0, float(n_fft), 4 * n_fft + 1)
    loss, _ = delay_loss(dhat_range, delay_target, x_spectrum)
    return LossSurface(
        grid=dhat_range,
        values=loss,
        weights=np.abs(x_spectrum) ** 2,
        metadata={"n_fft": n_fft, "delay_target": delay_target},
        param_name="Dhat",
    )


def apf_loss_surface(
    pole_target: float,
    count: int,
    x_spectrum: np.ndarray,
    phat_grid: np.ndarray,
) -> LossSurface:
    """Weighted pole-estimation loss over a grid of candidate poles.

    The surface is indexed by 1 - pole (ascending), which is roughly
    proportional to the all-pass break frequency.
    """
    x_spectrum = np.asarray(x_spectrum)
    phat_grid = np.asarray(phat_grid, dtype=np.float64)
    if np.any(np.abs(phat_grid) >= 1.0) or abs(pole_target) >= 1.0:
        raise ValueError("all poles must satisfy |p| < 1")
    n_fft = 2 * (x_spectrum.size - 1)
    grid = FreqGrid.for_length(n_fft)
    weights = np.abs(x_spectrum) ** 2
    target = apf_cascade_response(pole_target, count, grid)
    values = np.array(
        [
            float(np.sum(weights * np.abs(target - apf_cascade_response(p, count, grid)) ** 2))
            for p in phat_grid
        ]
    )
    order = np.argsort(1.0 - phat_grid)
    return LossSurface(
        grid=(1.0 - phat_grid)[order],
        values=values[order],
        weights=weights,
        metadata={"n_fft": n_fft, "pole_target": pole_target, "sections": count},
        param_name="one_minus_pole",
    )


@dataclass
class DescentResult:
    trajectory: np.ndarray  # Dhat per step, including the start point
    final_loss: float

    @property
    def final(self) -> float:
        return float(self.trajectory[-1])


def descend_delay(
    dhat0: float,
    delay_target: float,
    x_spectrum: np.ndarray,
    steps: int = 5000,
    lr: float = 1e-3,
) -> DescentResult:
    """Plain gradient descent on the delay-estimation loss.

    With a flat input spectrum the basin around the optimum is about a
    sample wide, so a distant start converges to a nearby local minimum
    instead; low-passed spectra repair this.
    """
    dhat = float(dhat0)
    traj = np.empty(steps + 1)
    traj[0] = dhat
    for i in range(steps):
        _, slope = delay_loss(dhat, delay_target, x_spectrum)
        dhat -= lr * slope
        traj[i + 1] = dhat
    loss, _ = delay_loss(dhat, delay_target, x_spectrum)
    return DescentResult(trajectory=traj, final_loss=loss)


# -- CSV export ----------------------------------------------------------------


def export_surface(surface: LossSurface, path) -> Path:
    """Write a 1-D surface as (param, loss) CSV; floats use repr so a
    round-trip read reproduces the values bit-exactly."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([surface.param_name, "loss"])
        for g, v in zip(surface.grid, surface.values):
            writer.writerow([repr(float(g)), repr(float(v))])
    return path


def export_gamma(k, dhat, gamma, path) -> Path:
    """Long-format (k, Dhat, gamma) CSV of a 2-D per-bin surface."""
    path = Path(path)
    gamma = np.asarray(gamma)
    if gamma.size == 0:
        raise ValueError("empty surface grid")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "Dhat", "gamma"])
        for i, kv in enumerate(k):
            for j, dv in enumerate(dhat):
                writer.writerow([repr(float(kv)), repr(float(dv)), repr(float(gamma[i, j]))])
    return path


def export_trajectory(trajectory: np.ndarray, path) -> Path:
    """(step, Dhat) CSV of a descent trajectory."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "Dhat"])
        for i, d in enumerate(np.asarray(trajectory)):
            writer.writerow([i, repr(float(d))])
    return path


def read_surface_csv(path) -> tuple[list[str], np.ndarray]:
    """Read back any of the exported CSVs; returns (header, columns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader]
    return header, np.asarray(rows, dtype=np.float64).T
