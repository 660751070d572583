"""Sectioned ``key = value`` configuration and its conversion to typed configs.

Sections and keys::

    [run]      seed, out
    [frame]    n_bands, n_adcs, n_samples, p_max, rolloff, sps, span_symbols
    [channel]  kind (awgn|rayleigh|rician or 1|2|3), normalized_doppler, rician_k, num_paths
    [dataset]  kind, count, snr_start, snr_stop, snr_step, symbols_per_band, path, val_path
    [model]    arch, size, checkpoint, detector, input_offset
    [learning] learning_rate, batch_size, max_epochs, beta1, beta2, eps, patience,
               optimizer, val_fraction, mask_source
    [eval]     pipeline, sparsity_mode, count_per_snr
    [sweep]    stages, sensing_count, class_count, classifier

``--set section.key=value`` overrides one entry; an unqualified key goes to
the only section defining it (``[run]`` when none does).
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Optional, Union

from ..datasets import GenCfg, channel_name
from ..errors import ConfigError
from ..learning import ModelSpec, TrainCfg
from ..sigsynth import ChannelCfg, FrameCfg, snr_grid

DEFAULTS = {
    "run": {"seed": "0", "out": "out"},
    "frame": {
        "n_bands": "14", "n_adcs": "7", "n_samples": "299", "p_max": "4",
        "rolloff": "0.35", "sps": "2", "span_symbols": "32",
    },
    "channel": {"kind": "awgn", "normalized_doppler": "1e-4", "rician_k": "4.0", "num_paths": "16"},
    "dataset": {
        "kind": "DWSS", "count": "1024", "snr_start": "-10", "snr_stop": "20", "snr_step": "2",
        "symbols_per_band": "256", "path": "", "val_path": "",
    },
    "model": {"arch": "DLWSS", "size": "desk", "checkpoint": "", "detector": "", "input_offset": "0.5"},
    "learning": {
        "learning_rate": "1e-3", "batch_size": "64", "max_epochs": "30", "beta1": "0.9",
        "beta2": "0.999", "eps": "1e-7", "patience": "5", "optimizer": "adam",
        "val_fraction": "0.1", "mask_source": "ground-truth",
    },
    "eval": {"pipeline": "standard", "sparsity_mode": "oracle", "count_per_snr": "200"},
    "sweep": {
        "stages": "sensing,classify", "sensing_count": "6000", "class_count": "16000",
        "classifier": "NDLMC_BASELINE",
    },
}


class Config:
    """Thin wrapper over :class:`configparser.ConfigParser` with typed getters."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    @classmethod
    def defaults(cls) -> "Config":
        p = configparser.ConfigParser(interpolation=None)
        p.read_dict(DEFAULTS)
        return cls(p)

    @classmethod
    def load(cls, source: Optional[Union[str, Path]] = None) -> "Config":
        """``None`` or ``"defaults"`` gives the built-in defaults; otherwise a file on top of them."""
        cfg = cls.defaults()
        if source is None or str(source) == "defaults":
            return cfg
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(path)
        try:
            cfg.parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        cfg._check_keys()
        return cfg

    def _check_keys(self):
        for section in self.parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key in self.parser[section]:
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")

    def resolve(self, key: str) -> tuple:
        if "." in key:
            section, name = key.split(".", 1)
            if section not in DEFAULTS or name not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {key!r}")
            return section, name
        owners = [s for s, keys in DEFAULTS.items() if key in keys]
        if len(owners) > 1:
            raise ConfigError(f"ambiguous key {key!r}; qualify it as one of " + ", ".join(f"{s}.{key}" for s in owners))
        if not owners:
            raise ConfigError(f"unknown config key {key!r}")
        return owners[0], key

    def apply_overrides(self, items: Iterable[str]) -> "Config":
        for item in items:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            section, name = self.resolve(key.strip())
            self.parser[section][name] = value.strip()
        return self

    def get(self, section: str, key: str) -> str:
        return self.parser[section][key]

    def typed(self, section: str, key: str, kind):
        raw = self.get(section, key)
        if kind is bool:
            try:
                return self.parser.getboolean(section, key)
            except ValueError:
                raise ConfigError(f"{section}.{key}={raw!r} is not a boolean") from None
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}={raw!r} is not a valid {kind.__name__}") from None

    def dump(self) -> dict:
        return {s: dict(self.parser[s]) for s in self.parser.sections()}

    # typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.typed("run", "seed", int)

    def channel_cfg(self) -> ChannelCfg:
        return ChannelCfg(
            kind=channel_name(self.get("channel", "kind")),
            normalized_doppler=self.typed("channel", "normalized_doppler", float),
            rician_k=self.typed("channel", "rician_k", float),
            num_paths=self.typed("channel", "num_paths", int),
        )

    def frame_cfg(self) -> FrameCfg:
        kw = {}
        for f in fields(FrameCfg):
            if f.name in DEFAULTS["frame"]:
                kw[f.name] = self.typed("frame", f.name, type(getattr(FrameCfg(), f.name)))
        return FrameCfg(channel=self.channel_cfg(), **kw)

    def snrs(self) -> list:
        return snr_grid(
            self.typed("dataset", "snr_start", float),
            self.typed("dataset", "snr_stop", float),
            self.typed("dataset", "snr_step", float),
        )

    def gen_cfg(self) -> GenCfg:
        return GenCfg(frame=self.frame_cfg(), snrs=tuple(self.snrs()),
                      symbols_per_band=self.typed("dataset", "symbols_per_band", int))

    def train_cfg(self) -> TrainCfg:
        kw = {}
        for f in fields(TrainCfg):
            if f.name in DEFAULTS["learning"]:
                kw[f.name] = self.typed("learning", f.name, type(getattr(TrainCfg(), f.name)))
        return TrainCfg(seed=self.seed, **kw)

    def validate(self) -> "Config":
        """Type-check every section now so bad values fail before any work starts."""
        self.gen_cfg()
        self.train_cfg()
        for key in ("count",):
            self.typed("dataset", key, int)
        for key in ("count_per_snr",):
            self.typed("eval", key, int)
        for key in ("sensing_count", "class_count"):
            self.typed("sweep", key, int)
        return self

    def model_spec(self, arch: Optional[str] = None, input_len: Optional[int] = None) -> ModelSpec:
        kw = {"bands": self.typed("frame", "n_bands", int),
              "input_offset": self.typed("model", "input_offset", float)}
        if input_len is not None:
            kw["input_len"] = input_len
        return ModelSpec.preset(arch or self.get("model", "arch"), self.get("model", "size"), **kw)
