"""``widesense`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag),
3 malformed or invalid configuration, 4 missing input file.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, WidesenseError
from .config import Config

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3, 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=None, help="config file, or 'defaults'")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--json", action="store_true", help="print a JSON summary")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="widesense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="generate and save a dataset")
    sub.add_parser("train", parents=[common], help="train [model] arch on [dataset] path")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--pipeline", choices=("standard", "full"), default=None)
    sub.add_parser("somp-baseline", parents=[common], help="SOMP sensing accuracy per SNR")
    sub.add_parser("sweep-snr", parents=[common], help="train once, evaluate across the SNR grid")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gc.add_argument("--trials", type=int, default=100)
    sub.add_parser("selftest", parents=[common], help="run the built-in invariant checks")
    return parser


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not set")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def _emit(args, summary: dict, lines: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    else:
        for line in lines:
            print(line)


def cmd_gen_dataset(args, cfg: Config) -> int:
    from ..datasets import generate, save_dataset

    kind = cfg.get("dataset", "kind")
    ds = generate(kind, cfg.gen_cfg(), cfg.typed("dataset", "count", int), cfg.seed,
                  channel=cfg.channel_cfg().kind)
    path = _out_dir(cfg) / f"{ds.kind.name.lower()}.snsd"
    man = save_dataset(ds, path)
    _emit(args, {"path": str(path), **{k: man[k] for k in ("kind", "count", "shape", "checksum", "channel")}},
          [f"wrote {path}: {man['count']} x {man['shape']} ({man['kind']}, {man['channel']}), crc {man['checksum']}"])
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    from ..datasets import load_dataset
    from ..learning import train_dlmc, train_dlwss

    ds = load_dataset(_require(cfg.get("dataset", "path"), "dataset.path"))
    val = cfg.get("dataset", "val_path")
    val = load_dataset(_require(val, "dataset.val_path")) if val else None
    spec = cfg.model_spec(input_len=ds.x.shape[2])
    tc = cfg.train_cfg()
    out = _out_dir(cfg)
    hist = out / "history.csv"
    if spec.is_classifier:
        res = train_dlmc(ds, spec, tc, cfg.get("learning", "mask_source"), val=val, history_path=hist,
                         predicted_mask=_predicted_mask(cfg, ds), val_mask=_predicted_mask(cfg, val))
    else:
        res = train_dlwss(ds, spec, tc, val=val, history_path=hist)
    ckpt = out / "model.snsm"
    res.model.save(ckpt)
    last = res.history[-1] if res.history else {}
    _emit(args, {"checkpoint": str(ckpt), "history": str(hist), "epochs": len(res.history),
                 "best_epoch": res.best_epoch, "last": last},
          [f"trained {spec.arch.name} for {len(res.history)} epochs (best {res.best_epoch}); wrote {ckpt}"])
    return EXIT_OK


def _predicted_mask(cfg: Config, ds):
    if ds is None or cfg.get("learning", "mask_source") != "predicted":
        return None
    from ..learning import infer_occupancy
    from ..neuralcore import Network

    det = Network.load(_require(cfg.get("model", "detector"), "model.detector"))
    if ds.config.get("frame") is None:
        raise ConfigError("predicted masks need a dataset with its generation manifest")
    from ..datasets import DatasetKind, build_input, regenerate_frame
    from ..sampler import default_sensing_matrix, sample

    sm = default_sensing_matrix(cfg.typed("frame", "n_adcs", int), cfg.typed("frame", "n_bands", int))
    xs = []
    width = cfg.typed("frame", "n_samples", int)
    for i in range(len(ds)):
        m = sample(regenerate_frame(ds, i), sm)
        xs.append(build_input(DatasetKind.DWSS, None, sm, m, (), 0)[:, :width])
    return infer_occupancy(det, np.asarray(xs, dtype=np.float32))


def cmd_eval(args, cfg: Config) -> int:
    from ..learning import Arch, infer_modulation, infer_occupancy
    from ..neuralcore import Network
    from .experiments import evaluate_pipeline
    from .metrics import MetricReport, classification_accuracy, confusion_matrix, sensing_accuracy

    pipeline = args.pipeline or cfg.get("eval", "pipeline")
    out = _out_dir(cfg)
    if pipeline == "full":
        det = Network.load(_require(cfg.get("model", "detector"), "model.detector"))
        clf = Network.load(_require(cfg.get("model", "checkpoint"), "model.checkpoint"))
        arch = Arch(clf.arch_id)
        report = evaluate_pipeline(cfg.gen_cfg(), det, clf, arch, cfg.typed("eval", "count_per_snr", int),
                                   cfg.seed, cfg.channel_cfg().kind)
    elif pipeline == "standard":
        from ..datasets import load_dataset

        net = Network.load(_require(cfg.get("model", "checkpoint"), "model.checkpoint"))
        ds = load_dataset(_require(cfg.get("dataset", "path"), "dataset.path"))
        report = MetricReport()
        for snr in sorted(set(float(v) for v in ds.snr)):
            sub = ds.subset(np.flatnonzero(ds.snr == snr))
            if net.arch_id == Arch.DLWSS:
                report.sensing_acc[snr] = sensing_accuracy(infer_occupancy(net, sub.x), sub.s)
            elif sub.s.any():
                k = infer_modulation(net, sub.x, sub.s)
                report.class_acc[snr] = classification_accuracy(k, sub.k, sub.s)
                report.confusion[snr] = confusion_matrix(k, sub.k, sub.s)
    else:
        raise ConfigError(f"eval.pipeline must be 'standard' or 'full', got {pipeline!r}")
    path = report.write_csv(out, "eval.csv")
    _emit(args, {"csv": str(path), **report.to_json()},
          [",".join(r) for r in report.rows()] + [f"wrote {path}"])
    return EXIT_OK


def cmd_somp(args, cfg: Config) -> int:
    from .experiments import run_somp_baseline

    report = run_somp_baseline(cfg.gen_cfg(), cfg.get("eval", "sparsity_mode"),
                               count_per_snr=cfg.typed("eval", "count_per_snr", int), seed=cfg.seed,
                               channel=cfg.channel_cfg().kind)
    path = report.write_csv(_out_dir(cfg), "somp.csv")
    _emit(args, {"csv": str(path), **report.to_json()}, [",".join(r) for r in report.rows()] + [f"wrote {path}"])
    return EXIT_OK


def experiment_from_config(cfg: Config):
    from ..learning import Arch
    from .experiments import ExperimentCfg

    stages = tuple(s.strip() for s in cfg.get("sweep", "stages").split(",") if s.strip())
    clf_arch = Arch.parse(cfg.get("sweep", "classifier"))
    clf_len = cfg.typed("dataset", "symbols_per_band", int) if clf_arch in (
        Arch.NDLMC_BASELINE, Arch.NDLMC_INCEPTION) else cfg.typed("frame", "n_samples", int)
    det = cfg.get("model", "detector")
    ckpt = cfg.get("model", "checkpoint")
    return ExperimentCfg(
        gen=cfg.gen_cfg(),
        channel=cfg.channel_cfg().kind,
        stages=stages,
        sensing_spec=cfg.model_spec("DLWSS", cfg.typed("frame", "n_samples", int)),
        classifier_spec=cfg.model_spec(clf_arch.name, clf_len),
        train=cfg.train_cfg(),
        sensing_count=cfg.typed("sweep", "sensing_count", int),
        class_count=cfg.typed("sweep", "class_count", int),
        count_per_snr=cfg.typed("eval", "count_per_snr", int),
        sparsity_mode=cfg.get("eval", "sparsity_mode"),
        out_dir=_out_dir(cfg),
        seed=cfg.seed,
        detector_checkpoint=Path(det) if det else None,
        classifier_checkpoint=Path(ckpt) if ckpt else None,
    )


def cmd_sweep(args, cfg: Config) -> int:
    from .experiments import sweep_snr

    exp = experiment_from_config(cfg)
    log = None if args.json else (lambda row: print(
        f"epoch {row['epoch']}: train_loss={row['train_loss']:.4f} val_loss={row['val_loss']:.4f} "
        f"val_acc={row['val_acc']:.4f}", flush=True))
    report = sweep_snr(exp, log=log)
    _emit(args, {"csv": str(exp.out_dir / "sweep.csv"), **report.to_json()},
          [",".join(r) for r in report.rows()] + [f"wrote {exp.out_dir / 'sweep.csv'}"])
    return EXIT_OK


def cmd_gradcheck(args, cfg: Config) -> int:
    from .checks import GRAD_TOL, gradcheck_suite

    res = gradcheck_suite(trials=args.trials, seed=cfg.seed)
    ok = all(v < GRAD_TOL for v in res.values())
    _emit(args, {"max_rel_error": res, "tolerance": GRAD_TOL, "pass": ok},
          [f"{'PASS' if v < GRAD_TOL else 'FAIL'} {k}: {v:.2e}" for k, v in res.items()])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_selftest(args, cfg: Config) -> int:
    from .checks import selftest

    results = selftest()
    ok = all(r[1] for r in results)
    _emit(args, {"checks": [{"name": n, "pass": p, "detail": d} for n, p, d in results], "pass": ok},
          [f"{'PASS' if p else 'FAIL'} {n}: {d}" for n, p, d in results])
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "somp-baseline": cmd_somp,
    "sweep-snr": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def load_config(args) -> Config:
    cfg = Config.load(args.config)
    cfg.apply_overrides(args.overrides)
    if args.seed is not None:
        cfg.parser["run"]["seed"] = str(args.seed)
    if args.out is not None:
        cfg.parser["run"]["out"] = args.out
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except WidesenseError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
