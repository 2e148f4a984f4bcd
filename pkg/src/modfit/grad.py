"""Loss evaluation and reverse-mode gradients for the training model.

The training loss is a relative spectral error over all frames:

    L = sum_m || w . (Y_m - Yhat_m) ||^2  /  sum_m || w . Y_m ||^2

where the per-bin weight w combines the optional pre-emphasis response
with the conjugate-symmetry multiplicity of the half spectrum (interior
bins count twice), so that with no pre-emphasis the loss equals the
time-domain error-to-signal ratio whenever no time aliasing occurs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import diffmodel
from .diffmodel import ModelParams
from .errors import DegenerateSignalError, NumericAbortError
from .spectral import parseval_weights


@dataclass(frozen=True)
class Batch:
    """Input/target frame spectra plus the loss weighting."""

    x_re: np.ndarray  # (Mb, Nh)
    x_im: np.ndarray
    y_re: np.ndarray
    y_im: np.ndarray
    weights: np.ndarray  # (Nh,) pre-emphasis power x bin multiplicity
    denom: float  # sum_m ||w . Y_m||^2, constant wrt parameters
    frames: np.ndarray | None  # LUT indices; None = all frames in order
    n_fft: int


def make_batch(
    x_spectra: np.ndarray,
    y_spectra: np.ndarray,
    n_fft: int,
    preemph: np.ndarray | None = None,
    frames=None,
) -> Batch:
    """Bundle spectra into a training batch.

    ``preemph`` is an optional half-spectrum response whose squared
    magnitude weights every bin of the loss.
    """
    x_spectra = np.asarray(x_spectra, dtype=np.complex128)
    y_spectra = np.asarray(y_spectra, dtype=np.complex128)
    if x_spectra.shape != y_spectra.shape or x_spectra.ndim != 2:
        raise ValueError("input and target spectra must share shape (M, Nh)")
    if x_spectra.shape[1] != n_fft // 2 + 1:
        raise ValueError("spectra width does not match n_fft/2+1")
    weights = np.array(parseval_weights(n_fft))
    if preemph is not None:
        preemph = np.asarray(preemph)
        if preemph.shape != (n_fft // 2 + 1,):
            raise ValueError("pre-emphasis response must have length n_fft/2+1")
        weights = weights * np.abs(preemph) ** 2
    denom = float(
        np.sum(weights * (y_spectra.real**2 + y_spectra.imag**2))
    )
    if denom <= 0.0:
        raise DegenerateSignalError("target spectra carry no energy")
    if frames is not None:
        frames = np.asarray(frames, dtype=np.intp)
    return Batch(
        x_re=np.ascontiguousarray(x_spectra.real),
        x_im=np.ascontiguousarray(x_spectra.imag),
        y_re=np.ascontiguousarray(y_spectra.real),
        y_im=np.ascontiguousarray(y_spectra.imag),
        weights=weights,
        denom=denom,
        frames=frames,
        n_fft=n_fft,
    )


def _loss_expr(params_like, batch: Batch):
    """Loss as an expression tree (Vars) or a plain float (ndarrays)."""
    consts = diffmodel.response_consts(batch.n_fft)
    yh_re, yh_im = diffmodel.predict_pair(
        params_like, batch.x_re, batch.x_im, consts, frames=batch.frames
    )
    err_re = batch.y_re - yh_re
    err_im = batch.y_im - yh_im
    num = ad.sum(batch.weights * (err_re * err_re + err_im * err_im))
    return num * (1.0 / batch.denom)


def loss_value(params: ModelParams, batch: Batch) -> float:
    """Forward-only loss evaluation with plain numpy arrays."""
    return float(_loss_expr(params, batch))


def grad_of_loss(params: ModelParams, batch: Batch):
    """Loss plus exact reverse-mode gradients for every parameter leaf.

    Returns ``(loss, grads)`` with ``grads`` a dict keyed by the leaf
    paths of :func:`modfit.diffmodel.param_leaves`. A non-finite forward
    value triggers a diagnostic re-run that names the first offending
    operation.
    """
    from .autodiff import Tape

    tape = Tape()
    lifted = diffmodel.lift_params(tape, params)
    loss = _loss_expr(lifted, batch)
    if not np.isfinite(loss.value):
        diag = Tape(check_finite=True)
        _loss_expr(diffmodel.lift_params(diag, params), batch)
        raise NumericAbortError("loss is non-finite but no op flagged")  # pragma: no cover
    tape.backward(loss)
    return float(loss.value), diffmodel.grads_as_dict(lifted)


@dataclass
class GradCheckEntry:
    path: str
    index: int
    analytic: float
    numeric: float
    rel_err: float
    checked: bool  # False when |adjoint| <= 1e-8 (skipped by pass/fail)


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(e.rel_err <= self.tolerance for e in self.entries if e.checked)

    @property
    def max_rel_err(self) -> float:
        checked = [e.rel_err for e in self.entries if e.checked]
        return max(checked) if checked else 0.0

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.checked and e.rel_err > self.tolerance]


def check_gradients(
    params: ModelParams,
    batch: Batch,
    tolerance: float = 1e-3,
    step_scale: float = 1e-4,
) -> GradCheckReport:
    """Compare every adjoint against a central finite difference.

    Step size is ``step_scale * max(1, |theta|)`` per parameter.
    Parameters whose adjoint magnitude is at most 1e-8 are reported but
    excluded from the pass/fail decision (their relative error is
    dominated by round-off).
    """
    _, grads = grad_of_loss(params, batch)
    gvec = diffmodel.flatten_grad_dict(params, grads)
    vec = diffmodel.flatten_params(params)
    work = diffmodel.clone_params(params)

    # map flat positions back to leaf paths for reporting
    paths = []
    for path, owner, attr in diffmodel.param_leaves(params):
        size = np.asarray(getattr(owner, attr)).size
        paths.extend((path, j) for j in range(size))

    entries = []
    for i in range(vec.size):
        h = step_scale * max(1.0, abs(vec[i]))
        probe = vec.copy()
        probe[i] = vec[i] + h
        lp = loss_value(diffmodel.assign_flat(work, probe), batch)
        probe[i] = vec[i] - h
        lm = loss_value(diffmodel.assign_flat(work, probe), batch)
        fd = (lp - lm) / (2.0 * h)
        analytic = gvec[i]
        scale = max(abs(fd), abs(analytic))
        rel = abs(fd - analytic) / scale if scale > 0 else 0.0
        path, j = paths[i]
        entries.append(
            GradCheckEntry(
                path=path,
                index=j,
                analytic=float(analytic),
                numeric=float(fd),
                rel_err=float(rel),
                checked=abs(analytic) > 1e-8,
            )
        )
    diffmodel.assign_flat(work, vec)
    return GradCheckReport(entries=entries, tolerance=tolerance)
