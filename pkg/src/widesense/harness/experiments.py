"""Experiment drivers: SOMP baseline, full-pipeline replay and SNR sweeps."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..datasets import (
    Dataset,
    DatasetKind,
    GenCfg,
    _frame_cfg,
    example_seed,
    generate,
    normalize_ap,
    normalize_minmax,
    plan_labels,
    regenerate_frame,
    split_complex,
)
from ..errors import ConfigError, ShapeError
from ..learning import (
    Arch,
    ModelSpec,
    TrainCfg,
    infer_modulation,
    infer_occupancy,
    train_dlmc,
    train_dlwss,
)
from ..neuralcore import Network
from ..recon import ddc, pseudo_reconstruct, somp, support_reconstruct
from ..sampler import SensingMatrix, default_sensing_matrix, sample
from ..sigsynth import assemble_frame, rrc_taps
from .metrics import (
    MetricReport,
    classification_accuracy,
    confusion_matrix,
    frame_accuracy,
    sensing_accuracy,
)


def parse_sparsity_mode(mode: str):
    """``"oracle"`` -> None; ``"fixed:k"`` -> k."""
    if mode == "oracle":
        return None
    if mode.startswith("fixed:"):
        try:
            return int(mode.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"sparsity mode must be 'oracle' or 'fixed:<k>', got {mode!r}")


def somp_occupancy(sm: SensingMatrix, m, sparsity: int) -> np.ndarray:
    occ = np.zeros(sm.n, dtype=np.uint8)
    occ[list(somp(sm, m, sparsity).support)] = 1
    return occ


def _frames_for_snr(gen: GenCfg, snr: float, count: int, seed: int, channel: str):
    fc = _frame_cfg(gen, DatasetKind.DWSS, channel)
    g = GenCfg(frame=gen.frame, snrs=(snr,), symbols_per_band=gen.symbols_per_band)
    _, mods = plan_labels(g, count, seed)
    for i in range(count):
        yield assemble_frame(fc.replace(snr_db=float(snr), mods=tuple(mods[i]), occupancy=None),
                             example_seed(seed, i))


def run_somp_baseline(source: Union[GenCfg, Sequence], sparsity_mode: str = "oracle",
                      sm: Optional[SensingMatrix] = None, count_per_snr: int = 200, seed: int = 0,
                      channel: str = "awgn") -> MetricReport:
    """Sensing accuracy of SOMP with known (oracle) or fixed sparsity.

    ``source`` is either a :class:`GenCfg` (frames are generated per SNR)
    or a sequence of measurements carrying ``occupancy`` and ``snr_db``.
    """
    t0 = time.perf_counter()
    fixed = parse_sparsity_mode(sparsity_mode)
    if isinstance(source, GenCfg):
        sm = sm or default_sensing_matrix(source.frame.n_adcs, source.frame.n_bands)
        meas = []
        for i, snr in enumerate(source.snrs):
            for frame in _frames_for_snr(source, snr, count_per_snr, example_seed(seed, 10_000 + i), channel):
                meas.append(sample(frame, sm))
    else:
        meas = list(source)
        sm = sm or default_sensing_matrix()
    by_snr: dict = {}
    for m in meas:
        k = int(np.sum(m.occupancy)) if fixed is None else fixed
        k = min(k, sm.k)
        pred = somp_occupancy(sm, m, k)
        by_snr.setdefault(float(m.snr_db), ([], []))
        by_snr[float(m.snr_db)][0].append(pred)
        by_snr[float(m.snr_db)][1].append(m.occupancy)
    report = MetricReport()
    report.extras["frame_acc"] = {}
    for snr, (p, l) in sorted(by_snr.items()):
        report.sensing_acc[snr] = sensing_accuracy(np.array(p), np.array(l))
        report.extras["frame_acc"][snr] = frame_accuracy(np.array(p), np.array(l))
    report.runtime_s = time.perf_counter() - t0
    return report


# Algorithm-1 replay -------------------------------------------------------------


@dataclass
class PipelineOutput:
    xtilde: np.ndarray  # N x Q pseudo reconstruction
    s_hat: np.ndarray  # N
    xhat: np.ndarray  # N x Q restricted reconstruction
    xbb: Optional[np.ndarray]  # N x L after DDC (narrowband classifiers only)
    k_hat: np.ndarray  # N

    def shapes(self) -> dict:
        out = {"xtilde": self.xtilde.shape, "s_hat": self.s_hat.shape, "xhat": self.xhat.shape}
        if self.xbb is not None:
            out["xbb"] = self.xbb.shape
        out["k_hat"] = self.k_hat.shape
        return out


def run_pipeline(m, sm: SensingMatrix, detector: Network, classifier: Network, classifier_arch: Arch,
                 frame_cfg, symbols_per_band: int = 256, detector_width: int = 299,
                 form: str = "IQ", taps: Optional[np.ndarray] = None) -> PipelineOutput:
    """Sensing then classification for one measurement, in receiver order.

    The detector sees the first ``detector_width`` samples of the pseudo
    reconstruction; at most ``K`` detected bands are kept for the
    restricted least-squares solve.
    """
    xtilde = pseudo_reconstruct(sm, m)
    s_hat = infer_occupancy(detector, normalize_minmax(split_complex(xtilde[:, :detector_width])))
    support = tuple(np.flatnonzero(s_hat))
    if len(support) > sm.k:
        # keep the K most confident detections
        from ..learning import predict_occupancy_prob

        prob = predict_occupancy_prob(detector, normalize_minmax(split_complex(xtilde[:, :detector_width])))
        support = tuple(sorted(np.argsort(-prob, kind="stable")[: sm.k]))
        s_hat = np.zeros_like(s_hat)
        s_hat[list(support)] = 1
    xhat = support_reconstruct(sm, m, support)
    xbb = None
    if classifier_arch in (Arch.NDLMC_BASELINE, Arch.NDLMC_INCEPTION):
        taps = rrc_taps(frame_cfg.rolloff, frame_cfg.sps, frame_cfg.span_symbols) if taps is None else taps
        xbb = np.zeros((sm.n, symbols_per_band), dtype=complex)
        for band in support:
            xbb[band] = ddc(xhat[band], taps, frame_cfg.sps, symbols_per_band)
        feats = normalize_minmax(split_complex(xbb)) if form == "IQ" else normalize_ap(xbb)
    else:
        feats = normalize_minmax(split_complex(xhat))
    k_hat = infer_modulation(classifier, feats.astype(np.float32), s_hat)
    return PipelineOutput(xtilde, s_hat, xhat, xbb, k_hat)


def evaluate_pipeline(gen: GenCfg, detector: Network, classifier: Network, classifier_arch,
                      count_per_snr: int, seed: int, channel: str = "awgn",
                      sm: Optional[SensingMatrix] = None, form: str = "IQ") -> MetricReport:
    """End-to-end metrics: sensing from the detector, classification on true busy bands."""
    t0 = time.perf_counter()
    classifier_arch = Arch.parse(classifier_arch)
    narrow = classifier_arch in (Arch.NDLMC_BASELINE, Arch.NDLMC_INCEPTION)
    kind = DatasetKind.DNMC_IQ if narrow else DatasetKind.DWMC
    fc = _frame_cfg(gen, kind, channel)
    sm = sm or default_sensing_matrix(fc.n_adcs, fc.n_bands)
    taps = rrc_taps(fc.rolloff, fc.sps, fc.span_symbols)
    report = MetricReport()
    report.extras["frame_acc"] = {}
    for i, snr in enumerate(gen.snrs):
        g = GenCfg(frame=gen.frame, snrs=(snr,), symbols_per_band=gen.symbols_per_band)
        s_seed = example_seed(seed, 20_000 + i)
        _, mods = plan_labels(g, count_per_snr, s_seed)
        s_true, s_pred, k_true, k_pred = [], [], [], []
        for j in range(count_per_snr):
            frame = assemble_frame(fc.replace(snr_db=float(snr), mods=tuple(mods[j]), occupancy=None),
                                   example_seed(s_seed, j))
            out = run_pipeline(sample(frame, sm), sm, detector, classifier, classifier_arch, fc,
                               gen.symbols_per_band, gen.frame.n_samples, form, taps)
            s_true.append(frame.occupancy)
            s_pred.append(out.s_hat)
            k_true.append(frame.mods)
            k_pred.append(out.k_hat)
        s_true, s_pred, k_true, k_pred = map(np.array, (s_true, s_pred, k_true, k_pred))
        report.sensing_acc[snr] = sensing_accuracy(s_pred, s_true)
        report.extras["frame_acc"][snr] = frame_accuracy(s_pred, s_true)
        report.class_acc[snr] = classification_accuracy(k_pred, k_true, s_true)
        report.confusion[snr] = confusion_matrix(k_pred, k_true, s_true)
    report.runtime_s = time.perf_counter() - t0
    return report


# SNR sweep ----------------------------------------------------------------------

STAGES = ("sensing", "classify")


def classifier_kind(arch: Arch, form: str = "IQ") -> DatasetKind:
    if arch == Arch.WDLMC:
        return DatasetKind.DWMC
    if arch in (Arch.NDLMC_BASELINE, Arch.NDLMC_INCEPTION):
        return DatasetKind.DNMC_IQ if form == "IQ" else DatasetKind.DNMC_AP
    raise ConfigError(f"{arch.name} is not a classifier")


@dataclass
class ExperimentCfg:
    gen: GenCfg = field(default_factory=GenCfg)
    channel: str = "awgn"
    stages: tuple = STAGES
    sensing_spec: ModelSpec = field(default_factory=lambda: ModelSpec.preset(Arch.DLWSS, "desk"))
    classifier_spec: ModelSpec = field(default_factory=lambda: ModelSpec.preset(Arch.NDLMC_BASELINE, "desk"))
    train: TrainCfg = field(default_factory=TrainCfg)
    sensing_count: int = 6000
    class_count: int = 16000
    count_per_snr: int = 200
    sparsity_mode: str = "oracle"
    form: str = "IQ"
    out_dir: Optional[Path] = None
    seed: int = 0
    detector_checkpoint: Optional[Path] = None
    classifier_checkpoint: Optional[Path] = None

    def __post_init__(self):
        bad = set(self.stages) - set(STAGES)
        if bad or not self.stages:
            raise ConfigError(f"stages must be a non-empty subset of {STAGES}, got {self.stages}")
        if self.sensing_spec.arch != Arch.DLWSS:
            raise ConfigError("sensing_spec must be a DLWSS spec")
        classifier_kind(self.classifier_spec.arch, self.form)
        if self.detector_checkpoint is not None and not Path(self.detector_checkpoint).exists():
            raise FileNotFoundError(self.detector_checkpoint)
        if self.classifier_checkpoint is not None and not Path(self.classifier_checkpoint).exists():
            raise FileNotFoundError(self.classifier_checkpoint)


def _train_or_load(exp: ExperimentCfg, stage: str, log=None):
    out = Path(exp.out_dir) if exp.out_dir is not None else None
    train = exp.train.replace(seed=example_seed(exp.seed, 1 if stage == "sensing" else 2))
    if stage == "sensing":
        if exp.detector_checkpoint is not None:
            return Network.load(exp.detector_checkpoint)
        ds = generate(DatasetKind.DWSS, exp.gen, exp.sensing_count, example_seed(exp.seed, 3), exp.channel)
        res = train_dlwss(ds, exp.sensing_spec, train, history_path=out / "history_dlwss.csv" if out else None,
                          log=log)
        name = "dlwss.snsm"
    else:
        if exp.classifier_checkpoint is not None:
            return Network.load(exp.classifier_checkpoint)
        kind = classifier_kind(exp.classifier_spec.arch, exp.form)
        ds = generate(kind, exp.gen, exp.class_count, example_seed(exp.seed, 4), exp.channel)
        res = train_dlmc(ds, exp.classifier_spec, train,
                         history_path=out / f"history_{exp.classifier_spec.arch.name.lower()}.csv" if out else None,
                         log=log)
        name = f"{exp.classifier_spec.arch.name.lower()}.snsm"
    if out is not None:
        res.model.save(out / name)
    return res.model


def sweep_snr(exp: ExperimentCfg, log=None) -> MetricReport:
    """Train (or load) the selected stages once, then score every SNR of the grid.

    Columns: ``sensing_acc`` (DLWSS per-band), ``class_acc`` (busy-band,
    true support), ``frame_acc`` (DLWSS frame-exact) and ``somp_acc``
    (SOMP with the configured sparsity mode, same frames as ``sensing_acc``).
    """
    t0 = time.perf_counter()
    if exp.out_dir is not None:
        Path(exp.out_dir).mkdir(parents=True, exist_ok=True)
    detector = _train_or_load(exp, "sensing", log) if "sensing" in exp.stages else None
    classifier = _train_or_load(exp, "classify", log) if "classify" in exp.stages else None
    report = MetricReport()
    report.extras.update({"frame_acc": {}, "somp_acc": {}})
    fixed = parse_sparsity_mode(exp.sparsity_mode)
    sm = default_sensing_matrix(exp.gen.frame.n_adcs, exp.gen.frame.n_bands)
    for i, snr in enumerate(exp.gen.snrs):
        g = GenCfg(frame=exp.gen.frame, snrs=(snr,), symbols_per_band=exp.gen.symbols_per_band)
        if detector is not None:
            ds = generate(DatasetKind.DWSS, g, exp.count_per_snr, example_seed(exp.seed, 100 + i), exp.channel, sm)
            pred = infer_occupancy(detector, ds.x)
            report.sensing_acc[snr] = sensing_accuracy(pred, ds.s)
            report.extras["frame_acc"][snr] = frame_accuracy(pred, ds.s)
            somp_pred = []
            for j in range(len(ds)):
                m = sample(regenerate_frame(ds, j), sm)
                k = int(ds.s[j].sum()) if fixed is None else fixed
                somp_pred.append(somp_occupancy(sm, m, min(k, sm.k)))
            report.extras["somp_acc"][snr] = sensing_accuracy(np.array(somp_pred), ds.s)
        if classifier is not None:
            kind = classifier_kind(exp.classifier_spec.arch, exp.form)
            ds = generate(kind, g, exp.count_per_snr, example_seed(exp.seed, 200 + i), exp.channel, sm)
            k_hat = infer_modulation(classifier, ds.x, ds.s)
            report.class_acc[snr] = classification_accuracy(k_hat, ds.k, ds.s)
            report.confusion[snr] = confusion_matrix(k_hat, ds.k, ds.s)
    report.runtime_s = time.perf_counter() - t0
    if exp.out_dir is not None:
        report.write_csv(exp.out_dir)
        (Path(exp.out_dir) / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report
