"""Band reconstruction from sub-Nyquist samples, SOMP baseline and DDC."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DegenerateSupportError, LengthError, ShapeError
from .sampler import Measurement, SensingMatrix, pinv

RANK_TOL = 1e-9


def _check(sm: SensingMatrix, m: Measurement) -> None:
    if m.z.ndim != 2 or m.z.shape[0] != sm.k:
        raise ShapeError(f"measurement shape {m.z.shape} does not match a {sm.k}x{sm.n} sensing matrix")


def as_support(indices: Iterable[int], n: Optional[int] = None) -> tuple:
    """Sorted, de-duplicated support tuple; validates the range when ``n`` is given."""
    s = tuple(sorted({int(i) for i in indices}))
    if n is not None and s and (s[0] < 0 or s[-1] >= n):
        raise ConfigError(f"support {s} outside [0, {n - 1}]")
    return s


def pseudo_reconstruct(sm: SensingMatrix, m: Measurement) -> np.ndarray:
    """Aliased band estimate ``A^+ Z`` (no thresholding)."""
    _check(sm, m)
    return sm.pinv @ m.z


def support_reconstruct(sm: SensingMatrix, m: Measurement, support: Iterable[int]) -> np.ndarray:
    """Least-squares rows on ``support``; every other row is exactly zero."""
    _check(sm, m)
    s = as_support(support, sm.n)
    xhat = np.zeros((sm.n, m.z.shape[1]), dtype=complex)
    if not s:
        return xhat
    if len(s) > sm.k:
        raise DegenerateSupportError(f"support size {len(s)} exceeds k={sm.k}")
    a_new = sm.a[:, s]
    sv = np.linalg.svd(a_new, compute_uv=False)
    if sv[-1] < RANK_TOL * sv[0]:
        raise DegenerateSupportError(f"columns {s} are rank deficient (smallest singular value {sv[-1]:.3g})")
    xhat[list(s)] = pinv(a_new) @ m.z
    return xhat


@dataclass
class SompResult:
    support: tuple
    residual: np.ndarray
    residual_norms: list = field(default_factory=list)  # Frobenius, before/after each step
    order: list = field(default_factory=list)  # columns in selection order


def somp(sm: SensingMatrix, m: Measurement, sparsity: int) -> SompResult:
    """Simultaneous OMP over all measurement columns.

    Each step picks the column maximizing ``sum_q |a_j^H r_q|`` (lowest index
    on ties), then re-solves least squares on the selected columns.
    """
    _check(sm, m)
    if not 0 <= sparsity <= sm.k:
        raise ConfigError(f"sparsity must lie in [0, {sm.k}], got {sparsity}")
    z = m.z
    residual = z.copy()
    chosen: list = []
    norms = [float(np.linalg.norm(residual))]
    for _ in range(sparsity):
        score = np.abs(sm.a.conj().T @ residual).sum(axis=1)
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
        a_s = sm.a[:, chosen]
        coef = pinv(a_s) @ z
        residual = z - a_s @ coef
        norms.append(float(np.linalg.norm(residual)))
    return SompResult(support=as_support(chosen), residual=residual, residual_norms=norms, order=chosen)


def ddc(xhat_row: np.ndarray, taps: np.ndarray, sps: int, l: int) -> np.ndarray:
    """Matched-filter, delay-compensate and decimate one band row to ``l`` symbols.

    Rows are already at baseband, so no mixer is applied. Symbol peaks are
    assumed at row samples that are multiples of ``sps``; output ``m`` is
    the symbol peaking at row sample ``(m0 + m) * sps`` where ``m0`` is the
    first index whose matched-filter window lies fully inside the row.
    """
    row = np.asarray(xhat_row)
    delay = (len(taps) - 1) // 2
    first = -(-delay // sps) * sps - delay  # first valid-output index on the symbol grid
    need = first + (l - 1) * sps + len(taps)
    if len(row) < need:
        raise LengthError(f"row of {len(row)} samples yields fewer than {l} symbols (need {need})")
    mf = np.convolve(row, taps[::-1], mode="valid")
    return mf[first : first + (l - 1) * sps + 1 : sps]


def ddc_samples_needed(l: int, sps: int, span_symbols: int) -> int:
    """Row length for which :func:`ddc` yields exactly ``l`` symbols (even ``span*sps``)."""
    return (l + span_symbols) * sps


def ddc_symbol_offset(sps: int, span_symbols: int) -> int:
    """Index into :func:`sigsynth.synth_band` symbols of the first DDC output."""
    delay = span_symbols * sps // 2
    return span_symbols // 2 + -(-delay // sps)


def evm(received: np.ndarray, reference: np.ndarray) -> float:
    """RMS error vector magnitude after the best complex gain, relative to the reference."""
    received = np.asarray(received).ravel()
    reference = np.asarray(reference).ravel()
    denom = np.vdot(received, received)
    if denom == 0:
        return 0.0 if not np.any(reference) else 1.0
    gain = np.vdot(received, reference) / denom
    err = gain * received - reference
    return float(np.sqrt(np.mean(np.abs(err) ** 2) / np.mean(np.abs(reference) ** 2)))
