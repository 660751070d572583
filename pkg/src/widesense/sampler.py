"""Multi-coset sensing matrix and sub-Nyquist measurements ``Z = A X``."""
from __future__ import annotations

import functools
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .sigsynth import WidebandFrame

DEFAULT_OFFSET_SEED = 20210
DEFAULT_OFFSET_TRIALS = 512

_MAGIC = b"SNSA"
_VERSION = 1
_HEADER = struct.Struct("<4sHHH")


def pinv(a: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD, dropping singular values below ``rcond * s_max``."""
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    keep = s > rcond * (s[0] if s.size else 0.0)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * s_inv) @ u.conj().T


def mutual_coherence(a: np.ndarray) -> float:
    """max over column pairs i != j of |a_i^H a_j| / (||a_i|| ||a_j||)."""
    cols = a / np.linalg.norm(a, axis=0, keepdims=True)
    gram = np.abs(cols.conj().T @ cols)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max())


def multicoset_matrix(offsets: Sequence[int], n: int) -> np.ndarray:
    """Partial-DFT rows ``exp(-2j*pi*o*c/n)/sqrt(n)`` scaled to unit row norm."""
    offs = np.asarray(offsets, dtype=float)[:, None]
    a = np.exp(-2j * np.pi * offs * np.arange(n)[None, :] / n) / np.sqrt(n)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


@dataclass(frozen=True)
class SensingMatrix:
    a: np.ndarray
    coset_offsets: tuple
    pinv: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def coherence(self) -> float:
        return mutual_coherence(self.a)

    @classmethod
    def from_matrix(cls, a: np.ndarray, offsets: Sequence[int] = ()) -> "SensingMatrix":
        a = np.array(a, dtype=complex)
        a.setflags(write=False)
        p = pinv(a)
        p.setflags(write=False)
        return cls(a=a, coset_offsets=tuple(int(o) for o in offsets), pinv=p)


def _search_offsets(k: int, n: int, seed: int, trials: int) -> tuple:
    rng = np.random.default_rng(seed)
    best, best_mu = None, np.inf
    for _ in range(trials):
        offs = tuple(sorted(int(o) for o in rng.choice(n, size=k, replace=False)))
        mu = mutual_coherence(multicoset_matrix(offs, n))
        if mu < best_mu - 1e-12:
            best, best_mu = offs, mu
    return best


def build_sensing_matrix(
    k: int,
    n: int,
    offsets: Union[Sequence[int], str] = "auto",
    seed: int = DEFAULT_OFFSET_SEED,
    trials: int = DEFAULT_OFFSET_TRIALS,
) -> SensingMatrix:
    """Multi-coset sensing matrix with ``k`` cosets out of ``n`` bands.

    ``offsets="auto"`` runs a seeded random search for the coset set with
    the lowest mutual coherence.
    """
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if isinstance(offsets, str):
        if offsets != "auto":
            raise ConfigError(f"offsets must be a sequence or 'auto', got {offsets!r}")
        offsets = _search_offsets(k, n, seed, trials)
    offsets = [int(o) for o in offsets]
    if len(offsets) != k:
        raise ConfigError(f"expected {k} offsets, got {len(offsets)}")
    if len(set(offsets)) != k:
        raise ConfigError(f"coset offsets must be distinct: {offsets}")
    if any(not 0 <= o < n for o in offsets):
        raise ConfigError(f"coset offsets must lie in [0, {n - 1}]")
    return SensingMatrix.from_matrix(multicoset_matrix(offsets, n), offsets)


@functools.lru_cache(maxsize=8)
def default_sensing_matrix(k: int = 7, n: int = 14) -> SensingMatrix:
    return build_sensing_matrix(k, n)


def min_subset_singular_value(a: np.ndarray, max_size: int) -> float:
    """Smallest singular value over every column subset of size <= ``max_size``."""
    worst = np.inf
    for size in range(1, max_size + 1):
        for cols in itertools.combinations(range(a.shape[1]), size):
            worst = min(worst, np.linalg.svd(a[:, cols], compute_uv=False)[-1])
    return float(worst)


@dataclass
class Measurement:
    z: np.ndarray  # complex, k x q
    occupancy: Optional[np.ndarray] = None
    mods: Optional[np.ndarray] = None
    snr_db: Optional[float] = None
    seed: Optional[int] = None


def sample(frame: WidebandFrame, sm: SensingMatrix) -> Measurement:
    """Sub-Nyquist samples of ``frame``: ``z = A x`` column by column."""
    if frame.x.shape[0] != sm.n:
        raise ShapeError(f"frame has {frame.x.shape[0]} bands, sensing matrix expects {sm.n}")
    return Measurement(
        z=sm.a @ frame.x,
        occupancy=frame.occupancy.copy(),
        mods=frame.mods.copy(),
        snr_db=frame.snr_db,
        seed=frame.seed,
    )


def save_sensing_matrix(sm: SensingMatrix, path: Union[str, Path]) -> None:
    """Write the ``SNSA`` blob: header, complex64 LE matrix, u16 offsets."""
    if len(sm.coset_offsets) not in (0, sm.k):
        raise ConfigError("offset count must be 0 or k")
    offsets = list(sm.coset_offsets) or [0xFFFF] * sm.k
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, sm.k, sm.n))
        fh.write(np.ascontiguousarray(sm.a, dtype="<c8").tobytes())
        fh.write(np.asarray(offsets, dtype="<u2").tobytes())


def load_sensing_matrix(path: Union[str, Path]) -> SensingMatrix:
    """Read an ``SNSA`` blob.

    When the payload matches the multi-coset matrix of the stored offsets to
    complex64 precision, the exact double-precision matrix is rebuilt.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("sensing matrix file truncated")
    magic, version, k, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported sensing matrix version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * k * n + 2 * k:
        raise FormatError("sensing matrix payload has the wrong size")
    a = np.frombuffer(body, dtype="<c8", count=k * n).reshape(k, n).astype(complex)
    offsets = np.frombuffer(body, dtype="<u2", offset=8 * k * n, count=k)
    if np.all(offsets == 0xFFFF):
        return SensingMatrix.from_matrix(a)
    offsets = [int(o) for o in offsets]
    if len(set(offsets)) == k and max(offsets) < n:
        exact = multicoset_matrix(offsets, n)
        if np.max(np.abs(exact - a)) < 1e-6:
            return SensingMatrix.from_matrix(exact, offsets)
    return SensingMatrix.from_matrix(a, offsets)
