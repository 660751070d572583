"""Dataset generation (D_WSS, D_NMC IQ/AP, D_WMC), normalization and persistence.

Binary layout (little-endian)::

    "SNSD" | version u16 | kind u8 | count u32 | N u16 | L u16 | C u16
    count x [ f32 input[N*L*C] | u8 s[N] | u8 k[N] | f32 snr | u64 seed ]
    CRC-64/XZ of everything above, u64

The channel kind and generation config live in a JSON sidecar
(``<file>.json``) together with per-key counts and the checksum.
"""
from __future__ import annotations

import csv
import enum
import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ChecksumError, ConfigError, DataError, FormatError
from .recon import ddc, ddc_samples_needed, pseudo_reconstruct, support_reconstruct
from .sampler import SensingMatrix, default_sensing_matrix, sample
from .sigsynth import NUM_SCHEMES, ChannelCfg, FrameCfg, assemble_frame, rrc_taps, snr_grid

FORMAT_VERSION = 1
_MAGIC = b"SNSD"
_HEADER = struct.Struct("<4sHBIHHH")
SYMBOLS_PER_BAND = 256
CHANNEL_CODES = {1: "awgn", 2: "rayleigh", 3: "rician"}


class DatasetKind(enum.IntEnum):
    DWSS = 1
    DNMC_IQ = 2
    DNMC_AP = 3
    DWMC = 4

    @classmethod
    def parse(cls, value) -> "DatasetKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        key = {"D_WSS": "DWSS", "D_WMC": "DWMC", "DNMC": "DNMC_IQ", "D_NMC_IQ": "DNMC_IQ",
               "D_NMC_AP": "DNMC_AP"}.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown dataset kind {value!r}") from None


def channel_name(channel) -> str:
    """Accept 1/2/3 or a channel kind name."""
    if isinstance(channel, str) and channel.isdigit():
        channel = int(channel)
    if isinstance(channel, (int, np.integer)):
        if int(channel) not in CHANNEL_CODES:
            raise ConfigError(f"channel code must be 1, 2 or 3, got {channel}")
        return CHANNEL_CODES[int(channel)]
    name = str(channel).lower()
    if name not in CHANNEL_CODES.values():
        raise ConfigError(f"unknown channel {channel!r}")
    return name


@dataclass
class Dataset:
    kind: DatasetKind
    x: np.ndarray  # float32 (frames, N, L, 2)
    s: np.ndarray  # uint8 (frames, N)
    k: np.ndarray  # uint8 (frames, N)
    snr: np.ndarray  # float32 (frames,)
    seed: np.ndarray  # uint64 (frames,)
    channel: str = "awgn"
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.kind, self.x[idx], self.s[idx], self.k[idx], self.snr[idx],
                       self.seed[idx], self.channel, dict(self.config))

    def key_counts(self) -> dict:
        """Busy-band counts per (scheme, SNR) key, as ``"scheme@snr"`` strings."""
        c: Counter = Counter()
        for row_k, snr in zip(self.k, self.snr):
            for kk in row_k[row_k != 0]:
                c[f"{int(kk)}@{float(snr):g}"] += 1
        return dict(sorted(c.items()))

    def snr_counts(self) -> dict:
        c = Counter(f"{float(v):g}" for v in self.snr)
        return dict(sorted(c.items(), key=lambda kv: float(kv[0])))

    def split(self, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple:
        """Seeded random partition into len(fractions) disjoint subsets."""
        if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
            raise ConfigError("split fractions must be non-negative and sum to 1")
        perm = np.random.default_rng(seed).permutation(len(self))
        bounds = np.round(np.cumsum(fractions) * len(self)).astype(int)
        parts = np.split(perm, bounds[:-1])
        return tuple(self.subset(np.sort(p)) for p in parts)


# normalization ---------------------------------------------------------------


def _finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DataError("input contains NaN or Inf")


def normalize_minmax(x: np.ndarray) -> np.ndarray:
    """Map the whole frame affinely onto [0, 1]; constant frames become zeros."""
    x = np.asarray(x, dtype=np.float64)
    _finite(x)
    if x.size == 0:
        return x
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def normalize_ap(symbols: np.ndarray) -> np.ndarray:
    """(N, L) complex -> (N, L, 2): unit-norm amplitude per band, phase / pi."""
    z = np.asarray(symbols)
    _finite(z)
    amp = np.abs(z)
    norms = np.linalg.norm(amp, axis=-1, keepdims=True)
    amp = np.divide(amp, norms, out=np.zeros_like(amp), where=norms > 0)
    return np.stack([amp, np.angle(z) / np.pi], axis=-1)


def split_complex(x: np.ndarray) -> np.ndarray:
    return np.stack([x.real, x.imag], axis=-1)


# generation ------------------------------------------------------------------


@dataclass(frozen=True)
class GenCfg:
    """What to generate around a base :class:`FrameCfg`.

    ``snrs`` are assigned round-robin; busy-band schemes are drawn from
    per-SNR shuffled decks of the seven schemes, so every (scheme, SNR) key
    is covered near-uniformly. A ``frame.mods``/``frame.occupancy`` override
    is applied to every frame instead.
    """

    frame: FrameCfg = FrameCfg()
    snrs: tuple = tuple(snr_grid())
    symbols_per_band: int = SYMBOLS_PER_BAND

    def __post_init__(self):
        if not self.snrs:
            raise ConfigError("SNR list must not be empty")
        if self.symbols_per_band < 1:
            raise ConfigError("symbols_per_band must be >= 1")


def example_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def plan_labels(gen: GenCfg, count: int, seed: int) -> tuple:
    """(snr, mods) per frame, balanced over (scheme, SNR) keys."""
    fc = gen.frame
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    decks = {i: [] for i in range(len(gen.snrs))}
    snrs = np.empty(count, dtype=np.float64)
    mods = np.zeros((count, fc.n_bands), dtype=np.uint8)
    for i in range(count):
        g = i % len(gen.snrs)
        snrs[i] = gen.snrs[g]
        if fc.mods is not None:
            mods[i] = np.asarray(fc.mods, dtype=np.uint8)
            continue
        if fc.occupancy is not None:
            busy = np.flatnonzero(np.asarray(fc.occupancy))
        else:
            n_occ = int(rng.integers(1, fc.p_max + 1))
            busy = np.sort(rng.choice(fc.n_bands, size=n_occ, replace=False))
        for b in busy:
            if not decks[g]:
                decks[g] = list(rng.permutation(np.arange(1, NUM_SCHEMES + 1)))
            mods[i, b] = decks[g].pop()
    return snrs, mods


def _frame_cfg(gen: GenCfg, kind: DatasetKind, channel: str) -> FrameCfg:
    fc = gen.frame.replace(channel=ChannelCfg(**{**asdict(gen.frame.channel), "kind": channel}))
    if kind in (DatasetKind.DNMC_IQ, DatasetKind.DNMC_AP):
        fc = fc.replace(n_samples=ddc_samples_needed(gen.symbols_per_band, fc.sps, fc.span_symbols))
    return fc


def _detect(detector, sm: SensingMatrix, m, width: int) -> np.ndarray:
    from .learning import infer_occupancy

    xt = pseudo_reconstruct(sm, m)[:, :width]
    return infer_occupancy(detector, normalize_minmax(split_complex(xt)))


def build_input(kind: DatasetKind, fc: FrameCfg, sm: SensingMatrix, m, support, symbols_per_band: int,
                taps: Optional[np.ndarray] = None) -> np.ndarray:
    """Network input for one measurement, before casting to float32."""
    if kind == DatasetKind.DWSS:
        return normalize_minmax(split_complex(pseudo_reconstruct(sm, m)))
    xhat = support_reconstruct(sm, m, support)
    if kind == DatasetKind.DWMC:
        return normalize_minmax(split_complex(xhat))
    taps = rrc_taps(fc.rolloff, fc.sps, fc.span_symbols) if taps is None else taps
    bb = np.zeros((fc.n_bands, symbols_per_band), dtype=complex)
    for band in support:
        bb[band] = ddc(xhat[band], taps, fc.sps, symbols_per_band)
    if kind == DatasetKind.DNMC_IQ:
        return normalize_minmax(split_complex(bb))
    return normalize_ap(bb)


def generate(kind, gen: GenCfg, count: int, seed: int, channel="awgn", sm: Optional[SensingMatrix] = None,
             detector=None, detector_width: int = 299) -> Dataset:
    """Run the synthesis -> sampling -> reconstruction pipeline ``count`` times.

    ``detector`` (a DLWSS network) switches the reconstruction support from
    the true occupancy to the detector's prediction. Labels stay the truth.
    """
    kind = DatasetKind.parse(kind)
    channel = channel_name(channel)
    if count < 0:
        raise ConfigError("count must be >= 0")
    fc = _frame_cfg(gen, kind, channel)
    sm = sm or default_sensing_matrix(fc.n_adcs, fc.n_bands)
    if sm.n != fc.n_bands:
        raise ConfigError(f"sensing matrix has {sm.n} bands, frames have {fc.n_bands}")
    length = gen.symbols_per_band if kind in (DatasetKind.DNMC_IQ, DatasetKind.DNMC_AP) else fc.n_samples
    snrs, mods = plan_labels(gen, count, seed)
    taps = rrc_taps(fc.rolloff, fc.sps, fc.span_symbols)
    x = np.empty((count, fc.n_bands, length, 2), dtype=np.float32)
    seeds = np.empty(count, dtype=np.uint64)
    for i in range(count):
        seeds[i] = example_seed(seed, i)
        frame = assemble_frame(fc.replace(snr_db=float(snrs[i]), mods=tuple(mods[i]), occupancy=None),
                               int(seeds[i]))
        m = sample(frame, sm)
        if detector is not None and kind != DatasetKind.DWSS:
            support = tuple(np.flatnonzero(_detect(detector, sm, m, detector_width)))
            support = support[: sm.k]
        else:
            support = frame.support
        x[i] = build_input(kind, fc, sm, m, support, gen.symbols_per_band, taps)
    s = (mods != 0).astype(np.uint8)
    config = {
        "frame": _jsonable(asdict(fc.replace(snr_db=0.0, mods=None, occupancy=None))),
        "forced_mods": None if gen.frame.mods is None else [int(v) for v in gen.frame.mods],
        "forced_occupancy": None if gen.frame.occupancy is None else [int(v) for v in gen.frame.occupancy],
        "snrs": [float(v) for v in gen.snrs],
        "symbols_per_band": gen.symbols_per_band,
        "seed": int(seed),
        "support": "detector" if detector is not None else "ground-truth",
        "coset_offsets": list(sm.coset_offsets),
    }
    return Dataset(kind, x, s, mods, snrs.astype(np.float32), seeds, channel, config)


def gen_dwss(cfg: GenCfg, count: int, seed: int, channel="awgn", sm=None) -> Dataset:
    """Normalized split-complex pseudo-reconstructions with occupancy labels."""
    return generate(DatasetKind.DWSS, cfg, count, seed, channel, sm)


def gen_dnmc(cfg: GenCfg, count: int, seed: int, form: str = "IQ", channel=1, sm=None, detector=None) -> Dataset:
    """Post-DDC symbol datasets in IQ (min-max) or AP form; ``channel`` 1/2/3."""
    form = str(form).upper()
    if form not in ("IQ", "AP"):
        raise ConfigError(f"form must be 'IQ' or 'AP', got {form!r}")
    kind = DatasetKind.DNMC_IQ if form == "IQ" else DatasetKind.DNMC_AP
    return generate(kind, cfg, count, seed, channel, sm, detector)


def gen_dwmc(cfg: GenCfg, count: int, seed: int, channel=1, sm=None, detector=None) -> Dataset:
    """Normalized split-complex support-restricted reconstructions with class labels."""
    return generate(DatasetKind.DWMC, cfg, count, seed, channel, sm, detector)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# persistence -----------------------------------------------------------------


def _record_dtype(n: int, length: int, channels: int) -> np.dtype:
    return np.dtype([
        ("x", "<f4", (n, length, channels)),
        ("s", "u1", (n,)),
        ("k", "u1", (n,)),
        ("snr", "<f4"),
        ("seed", "<u8"),
    ])


def to_bytes(ds: Dataset) -> bytes:
    count, n, length, channels = ds.x.shape
    if max(n, length, channels) > 0xFFFF:
        raise FormatError("dimensions exceed the u16 header fields")
    rec = np.empty(count, dtype=_record_dtype(n, length, channels))
    rec["x"] = ds.x
    rec["s"] = ds.s
    rec["k"] = ds.k
    rec["snr"] = ds.snr
    rec["seed"] = ds.seed
    body = _HEADER.pack(_MAGIC, FORMAT_VERSION, int(ds.kind), count, n, length, channels) + rec.tobytes()
    return body + struct.pack("<Q", kernels.crc64(body))


def from_bytes(raw: bytes) -> Dataset:
    if len(raw) < _HEADER.size + 8:
        raise FormatError("dataset file truncated")
    magic, version, kind, count, n, length, channels = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    dt = _record_dtype(n, length, channels)
    expected = _HEADER.size + count * dt.itemsize + 8
    if len(raw) != expected:
        raise FormatError(f"dataset file has {len(raw)} bytes, expected {expected}")
    (stored,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    actual = kernels.crc64(memoryview(raw)[: len(raw) - 8])
    if stored != actual:
        raise ChecksumError(f"dataset checksum mismatch: stored {stored:016x}, computed {actual:016x}")
    try:
        kind = DatasetKind(kind)
    except ValueError:
        raise FormatError(f"unknown dataset kind code {kind}") from None
    rec = np.frombuffer(raw, dtype=dt, count=count, offset=_HEADER.size)
    k = rec["k"].copy()
    s = rec["s"].copy()
    if np.any((k != 0) != (s != 0)) or (k.size and k.max() > NUM_SCHEMES):
        raise DataError("labels violate k == 0 <=> s == 0 or the class range")
    return Dataset(kind, rec["x"].copy(), s, k, rec["snr"].copy(), rec["seed"].copy())


def manifest(ds: Dataset, checksum: int) -> dict:
    return {
        "format": "SNSD",
        "version": FORMAT_VERSION,
        "kind": ds.kind.name,
        "count": len(ds),
        "shape": list(ds.x.shape[1:]),
        "channel": ds.channel,
        "snr_counts": ds.snr_counts(),
        "key_counts": ds.key_counts(),
        "checksum": f"{checksum:016x}",
        "config": _jsonable(ds.config),
    }


def sidecar_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_dataset(ds: Dataset, path: Union[str, Path]) -> dict:
    """Write the binary file and its JSON manifest; returns the manifest."""
    raw = to_bytes(ds)
    Path(path).write_bytes(raw)
    (checksum,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    man = manifest(ds, checksum)
    sidecar_path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def load_dataset(path: Union[str, Path], require_manifest: bool = False) -> Dataset:
    """Read and verify a dataset (checksum, and the manifest when present)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    ds = from_bytes(raw)
    side = sidecar_path(path)
    if not side.exists():
        if require_manifest:
            raise FormatError(f"missing manifest {side}")
        return ds
    try:
        man = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest {side}: {exc}") from None
    (checksum,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    if man.get("checksum") != f"{checksum:016x}":
        raise ChecksumError("manifest checksum does not match the dataset file")
    if man.get("count") != len(ds) or man.get("kind") != ds.kind.name:
        raise FormatError("manifest count/kind disagree with the dataset file")
    if man.get("key_counts") != ds.key_counts() or man.get("snr_counts") != ds.snr_counts():
        raise FormatError("manifest key counts disagree with the recounted labels")
    ds.channel = man.get("channel", ds.channel)
    ds.config = man.get("config", {})
    return ds


def export_csv(ds: Dataset, path: Union[str, Path]) -> None:
    """Lossy per-band summary: labels plus mean/RMS of each input channel."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example", "band", "s", "k", "snr_db", "seed", "mean_ch0", "mean_ch1", "rms_ch0", "rms_ch1"])
        for i in range(len(ds)):
            mean = ds.x[i].mean(axis=1)
            rms = np.sqrt((ds.x[i].astype(np.float64) ** 2).mean(axis=1))
            for b in range(ds.x.shape[1]):
                w.writerow([i, b, int(ds.s[i, b]), int(ds.k[i, b]), f"{float(ds.snr[i]):g}", int(ds.seed[i]),
                            f"{mean[b, 0]:.6g}", f"{mean[b, 1]:.6g}", f"{rms[b, 0]:.6g}", f"{rms[b, 1]:.6g}"])


def regenerate_frame(ds: Dataset, index: int):
    """Rebuild the synthetic frame behind example ``index`` from its stored seed and labels."""
    fc = ds.config.get("frame")
    if fc is None:
        raise ConfigError("dataset has no generation config")
    fc = dict(fc)
    fc["channel"] = ChannelCfg(**fc["channel"])
    frame_cfg = FrameCfg(**{k: tuple(v) if isinstance(v, list) else v for k, v in fc.items()})
    frame_cfg = frame_cfg.replace(snr_db=float(ds.snr[index]), mods=tuple(int(v) for v in ds.k[index]))
    return assemble_frame(frame_cfg, int(ds.seed[index]))
