"""Multiband frame synthesis: constellations, RRC pulse shaping, flat fading.

A frame is stored band-decomposed: row ``n`` holds the complex baseband
samples of band ``n`` at the per-band rate. Because the sensing matrix is
frequency-flat, sampling and reconstruction can act on these rows directly.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, LengthError

NUM_SCHEMES = 7  # M; class index 0 is reserved for "vacant"


class ModScheme(enum.IntEnum):
    BPSK = 1
    QPSK = 2
    QAM16 = 3
    QAM64 = 4
    QAM128 = 5
    QAM256 = 6
    PAM8 = 7


def _square_qam(order: int) -> np.ndarray:
    m = int(round(math.sqrt(order)))
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    i, q = np.meshgrid(levels, levels)
    return (i + 1j * q).ravel()


def _cross_qam128() -> np.ndarray:
    levels = np.arange(-11, 12, 2, dtype=float)
    i, q = np.meshgrid(levels, levels)
    pts = (i + 1j * q).ravel()
    corner = (np.abs(pts.real) > 8) & (np.abs(pts.imag) > 8)
    return pts[~corner]


def _unit_power(points: np.ndarray) -> np.ndarray:
    points = points.astype(complex)
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


_CONSTELLATIONS = {
    ModScheme.BPSK: _unit_power(np.array([-1.0, 1.0])),
    ModScheme.QPSK: _unit_power(np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])),
    ModScheme.QAM16: _unit_power(_square_qam(16)),
    ModScheme.QAM64: _unit_power(_square_qam(64)),
    ModScheme.QAM128: _unit_power(_cross_qam128()),
    ModScheme.QAM256: _unit_power(_square_qam(256)),
    ModScheme.PAM8: _unit_power(np.arange(-7, 8, 2, dtype=float)),
}
for _pts in _CONSTELLATIONS.values():
    _pts.setflags(write=False)


def constellation(scheme: ModScheme) -> np.ndarray:
    """Unit-average-power constellation points of ``scheme`` (read-only)."""
    return _CONSTELLATIONS[ModScheme(scheme)]


def gen_symbols(scheme: ModScheme, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. uniform symbols from the normalized constellation."""
    if count < 1:
        raise LengthError(f"count must be >= 1, got {count}")
    pts = constellation(scheme)
    return pts[rng.integers(0, len(pts), size=count)]


def rrc_taps(rolloff: float, sps: int, span_symbols: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span_symbols * sps + 1`` long.

    The removable singularities at t = 0 and |t| = 1/(4*rolloff) use their
    analytic limits.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ConfigError(f"rolloff must lie in [0, 1], got {rolloff}")
    if sps < 1:
        raise ConfigError(f"sps must be >= 1, got {sps}")
    if span_symbols < 2:
        raise ConfigError(f"span_symbols must be >= 2, got {span_symbols}")

    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # in symbol periods
    b = rolloff
    h = np.empty(n)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 - b + 4.0 * b / np.pi
        elif b > 0 and abs(abs(4.0 * b * ti) - 1.0) < 1e-9:
            h[i] = (b / np.sqrt(2.0)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return h / np.linalg.norm(h)


def shape_band(
    symbols: np.ndarray,
    taps: np.ndarray,
    sps: int,
    out_len: int,
    discard: int = 0,
) -> np.ndarray:
    """Upsample by ``sps``, filter with ``taps``, keep ``out_len`` samples.

    ``discard`` leading samples of the full convolution are dropped first;
    passing ``len(taps) - 1`` removes the filter start-up transient. The
    result is scaled to unit mean power (an all-zero result stays zero).
    """
    symbols = np.asarray(symbols)
    up = np.zeros(len(symbols) * sps, dtype=complex)
    up[::sps] = symbols
    full_len = len(up) + len(taps) - 1
    if full_len < discard + out_len:
        raise LengthError(
            f"{len(symbols)} symbols give {full_len} samples; need {discard + out_len}"
        )
    y = np.convolve(up, taps)[discard : discard + out_len]
    power = np.mean(np.abs(y) ** 2)
    if power > 0:
        y = y / np.sqrt(power)
    return y


def symbols_needed(out_len: int, sps: int, span_symbols: int) -> int:
    """Symbols required to fill ``out_len`` samples with no filter transients."""
    return -(-out_len // sps) + span_symbols


def synth_band(
    scheme: ModScheme,
    out_len: int,
    rng: np.random.Generator,
    rolloff: float = 0.35,
    sps: int = 2,
    span_symbols: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Transient-free pulse-shaped band of ``out_len`` samples.

    Returns ``(samples, symbols)``. Sample ``m * sps`` carries the peak of
    ``symbols[m + span_symbols // 2]`` when ``span_symbols * sps`` is even.
    """
    taps = rrc_taps(rolloff, sps, span_symbols)
    symbols = gen_symbols(scheme, symbols_needed(out_len, sps, span_symbols), rng)
    return shape_band(symbols, taps, sps, out_len, discard=len(taps) - 1), symbols


CHANNEL_KINDS = ("awgn", "rayleigh", "rician")


@dataclass(frozen=True)
class ChannelCfg:
    """Flat-fading channel applied per band.

    ``normalized_doppler`` is the maximum Doppler shift in cycles per sample.
    """

    kind: str = "awgn"
    normalized_doppler: float = 1e-4
    rician_k: float = 4.0
    num_paths: int = 16

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ConfigError(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if self.normalized_doppler < 0:
            raise ConfigError("normalized_doppler must be >= 0")
        if self.rician_k < 0:
            raise ConfigError("rician_k must be >= 0")
        if self.kind != "awgn" and self.num_paths < 1:
            raise ConfigError("fading channels need num_paths >= 1")


def fading_taps(cfg: ChannelCfg, length: int, rng: np.random.Generator) -> np.ndarray:
    """Time-varying single complex tap from a sum-of-sinusoids model.

    Each path has a CN(0, 1/P) gain and Doppler ``fd * cos(alpha)`` with a
    uniform arrival angle, so every tap is exactly CN(0, 1) marginally.
    The Rician line-of-sight term is a static unit phasor.
    """
    if cfg.kind == "awgn":
        return np.ones(length, dtype=complex)
    p = cfg.num_paths
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2 * p)
    freqs = cfg.normalized_doppler * np.cos(rng.uniform(0, 2 * np.pi, p))
    n = np.arange(length)
    h = np.exp(2j * np.pi * np.outer(n, freqs)) @ gains
    if cfg.kind == "rician":
        kf = cfg.rician_k
        los = np.exp(1j * rng.uniform(0, 2 * np.pi))
        h = np.sqrt(kf / (kf + 1)) * los + np.sqrt(1 / (kf + 1)) * h
    return h


def apply_channel(band: np.ndarray, cfg: ChannelCfg, rng: np.random.Generator) -> np.ndarray:
    """Multiply ``band`` by a fading tap sequence; AWGN-only returns it as is.

    Noise is not added here; :func:`assemble_frame` adds it frame-wide.
    """
    band = np.asarray(band)
    if cfg.kind == "awgn":
        return band
    return band * fading_taps(cfg, len(band), rng)


@dataclass(frozen=True)
class FrameCfg:
    """Frame geometry and impairments.

    ``occupancy``/``mods`` force the labels (length ``n_bands``; mods are 0
    on vacant bands). The random draws for the labels are consumed either
    way, so a frame regenerated from its seed with its stored labels forced
    is identical to the original.
    """

    n_bands: int = 14
    n_adcs: int = 7
    n_samples: int = 299
    p_max: int = 4
    snr_db: float = 20.0
    channel: ChannelCfg = field(default_factory=ChannelCfg)
    rolloff: float = 0.35
    sps: int = 2
    span_symbols: int = 32
    occupancy: Optional[tuple] = None
    mods: Optional[tuple] = None

    def __post_init__(self):
        if self.p_max > self.n_adcs:
            raise ConfigError(
                f"p_max={self.p_max} exceeds n_adcs={self.n_adcs}; supports would not be identifiable"
            )
        if self.p_max < 1:
            raise ConfigError("p_max must be >= 1")
        if self.n_adcs > self.n_bands:
            raise ConfigError("n_adcs must not exceed n_bands")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.occupancy is not None and len(self.occupancy) != self.n_bands:
            raise ConfigError("forced occupancy must have n_bands entries")
        if self.mods is not None:
            if len(self.mods) != self.n_bands:
                raise ConfigError("forced mods must have n_bands entries")
            if any(not 0 <= int(m) <= NUM_SCHEMES for m in self.mods):
                raise ConfigError(f"mods must lie in [0, {NUM_SCHEMES}]")

    def replace(self, **changes) -> "FrameCfg":
        return dataclasses.replace(self, **changes)


@dataclass
class WidebandFrame:
    x: np.ndarray  # complex, n_bands x n_samples
    occupancy: np.ndarray  # uint8, n_bands
    mods: np.ndarray  # uint8, n_bands; 0 = vacant
    snr_db: float
    seed: int
    clean: Optional[np.ndarray] = None  # x before noise
    symbols: Optional[list] = None  # per band transmitted symbols (None if vacant)

    @property
    def support(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.occupancy))


def noise_std(snr_db: float) -> float:
    """Per-sample complex noise std for a unit-power band at ``snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return math.sqrt(10.0 ** (-snr_db / 10.0))


def assemble_frame(
    cfg: FrameCfg,
    rng: Union[np.random.Generator, int],
    seed: Optional[int] = None,
) -> WidebandFrame:
    """Build one sparse multiband frame.

    ``rng`` may be a seed, in which case it is also recorded on the frame.
    """
    if not isinstance(rng, np.random.Generator):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(int(rng))
    n, q = cfg.n_bands, cfg.n_samples

    n_occ = int(rng.integers(1, cfg.p_max + 1))
    drawn_bands = rng.choice(n, size=n_occ, replace=False)
    drawn_mods = rng.integers(1, NUM_SCHEMES + 1, size=n).astype(np.uint8)

    occupancy = np.zeros(n, dtype=np.uint8)
    if cfg.occupancy is None:
        occupancy[drawn_bands] = 1
    else:
        occupancy[:] = np.asarray(cfg.occupancy) != 0
    mods = np.where(occupancy != 0, drawn_mods, 0).astype(np.uint8)
    if cfg.mods is not None:
        forced = np.asarray(cfg.mods, dtype=np.uint8)
        if cfg.occupancy is not None and np.any((forced != 0) != (occupancy != 0)):
            raise ConfigError("forced mods disagree with forced occupancy")
        mods[:] = forced
        occupancy[:] = forced != 0
    if occupancy.sum() > cfg.n_adcs:
        raise ConfigError("more occupied bands than ADCs")

    clean = np.zeros((n, q), dtype=complex)
    symbols: list = [None] * n
    for band in np.flatnonzero(occupancy):
        row, syms = synth_band(
            ModScheme(int(mods[band])), q, rng, cfg.rolloff, cfg.sps, cfg.span_symbols
        )
        clean[band] = apply_channel(row, cfg.channel, rng)
        symbols[band] = syms

    sigma = noise_std(cfg.snr_db)
    if sigma > 0:
        noise = rng.standard_normal((n, q)) + 1j * rng.standard_normal((n, q))
        x = clean + (sigma / np.sqrt(2.0)) * noise
    else:
        x = clean.copy()
    return WidebandFrame(
        x=x,
        occupancy=occupancy,
        mods=mods,
        snr_db=float(cfg.snr_db),
        seed=0 if seed is None else int(seed),
        clean=clean,
        symbols=symbols,
    )


def snr_grid(start: float = -10, stop: float = 20, step: float = 2) -> list:
    """Inclusive SNR grid in dB."""
    count = int(round((stop - start) / step)) + 1
    return [float(start + i * step) for i in range(count)]

