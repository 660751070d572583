"""Expected output dimensions of the four architectures, per table row."""
from __future__ import annotations

from ..learning import Arch, ModelSpec, build_model

N, Q, L, M1 = 14, 299, 256, 8

# (arch, input length, [(row name, expected per-frame output shape), ...])
TABLES = {
    "DLWSS": (Arch.DLWSS, Q, [
        ("Conv/relu 1x150", (N, 150, 256)),
        ("Conv/relu 1x100", (N, 51, 128)),
        ("Conv/relu 1x51", (N, 1, 64)),
        ("Custom pool", (N, 1, 64)),
        ("FC/sigmoid", (N,)),
    ]),
    "NDLMC-Baseline": (Arch.NDLMC_BASELINE, L, [
        ("Conv/relu 1x3", (N, L, 64)),
        ("Conv/relu 1x3", (N, L, 64)),
        ("Conv 1x1", (N, L, M1)),
        ("Custom pool/softmax", (N, M1)),
    ]),
    "NDLMC-Inception": (Arch.NDLMC_INCEPTION, L, [
        ("Inception block", (N, L, 192)),
        ("Inception block", (N, L, 192)),
        ("1x1 Conv/relu", (N, L, M1)),
        ("Custom pool/softmax", (N, M1)),
    ]),
    "WDLMC": (Arch.WDLMC, Q, [
        ("Conv/relu 1x150", (N, 150, 256)),
        ("Conv/relu 1x100", (N, 51, 128)),
        ("Conv/relu 1x51", (N, 1, 64)),
        ("Conv/relu 1x1", (N, 1, M1)),
        ("Custom pool/softmax", (N, M1)),
    ]),
}


def check_table_shapes() -> list:
    """``(table, row, expected, got, ok)`` for every output-dimension cell, full-size models."""
    out = []
    for table, (arch, length, rows) in TABLES.items():
        net = build_model(ModelSpec.preset(arch, "full", input_len=length, bands=N), seed=0)
        got = net.stage_shapes(N, length, 2)
        if len(got) != len(rows):
            out.append((table, "stage count", len(rows), len(got), False))
            continue
        for (name, want), (_, shape) in zip(rows, got):
            out.append((table, name, want, shape, tuple(shape) == want))
    return out
