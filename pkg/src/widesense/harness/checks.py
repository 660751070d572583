"""Built-in invariant checks behind the ``gradcheck`` and ``selftest`` commands."""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..learning import Arch, ModelSpec, bce_loss, build_model, masked_ce_loss
from ..neuralcore import (
    AvgPool3,
    Conv1xW,
    CustomPool,
    Dense,
    InceptionBlock,
    Network,
    ReLU,
    Sigmoid,
    Softmax,
    numeric_grad,
    rel_error,
)

GRAD_TOL = 1e-4
FD_EPS = 1e-5


def layer_gradcheck(layer, shape, rng, eps: float = FD_EPS) -> float:
    """Worst relative error over input and parameter gradients of ``sum(u * layer(x))``."""
    layer.astype(np.float64)
    for p in layer.params():
        if p.data.ndim == 1:
            # zero biases behind a ReLU put pre-activations exactly on the kink
            p.data[:] = rng.standard_normal(p.data.shape)
    x = rng.standard_normal(shape)
    if isinstance(layer, ReLU):
        # keep entries away from the kink so central differences are valid
        x = np.where(np.abs(x) < 10 * eps, x + np.sign(x + 1e-300) * 20 * eps, x)
    u = rng.standard_normal(layer.forward(x).shape)
    f = lambda: float(np.sum(layer.forward(x) * u))  # noqa: E731
    layer.forward(x)
    dx = layer.backward(u)
    grads = [p.grad.copy() for p in layer.params()]
    worst = rel_error(dx, numeric_grad(f, x, eps))
    for p, g in zip(layer.params(), grads):
        worst = max(worst, rel_error(g, numeric_grad(f, p.data, eps)))
    return worst


LAYER_CASES: dict = {
    "conv1xw": lambda r: (Conv1xW(int(r.integers(2, 5)), 2, 3, "valid", rng=r), (2, 7, 2)),
    "conv1xw_same": lambda r: (Conv1xW(int(r.integers(2, 6)), 2, 3, "same", rng=r), (2, 7, 2)),
    "conv1x1": lambda r: (Conv1xW(1, 3, 2, rng=r), (2, 5, 3)),
    "relu": lambda r: (ReLU(), (2, 5, 3)),
    "sigmoid": lambda r: (Sigmoid(), (2, 5, 3)),
    "softmax": lambda r: (Softmax(), (3, 8)),
    "custom_pool": lambda r: (CustomPool(), (2, 5, 3)),
    "dense": lambda r: (Dense(4, 3, rng=r), (3, 4)),
    "avgpool3": lambda r: (AvgPool3(), (2, 6, 2)),
    "inception": lambda r: (InceptionBlock(2, 4, 3, 4, 2, 2, 2, out_channels=12, rng=r), (1, 8, 2)),
}


def bce_gradcheck(rng, eps: float = FD_EPS) -> float:
    n = int(rng.integers(1, 15))
    pred = rng.uniform(0.05, 0.95, size=(2, n))
    label = rng.integers(0, 2, size=(2, n)).astype(float)
    _, g = bce_loss(pred, label)
    return rel_error(g, numeric_grad(lambda: bce_loss(pred, label)[0], pred, eps))


def masked_ce_gradcheck(rng, eps: float = FD_EPS) -> float:
    n = int(rng.integers(1, 15))
    logits = rng.standard_normal((2, n, 8)) * 2
    k = rng.integers(1, 8, size=(2, n))
    mask = rng.integers(0, 2, size=(2, n))
    mask[0, 0] = 1
    k = np.where(mask > 0, k, 0)
    _, g = masked_ce_loss(logits, k, mask)
    return rel_error(g, numeric_grad(lambda: masked_ce_loss(logits, k, mask)[0], logits, eps))


def gradcheck_suite(trials: int = 100, seed: int = 0) -> dict:
    """Worst relative error per layer kind and loss over ``trials`` random instances each."""
    results = {}
    for name, make in LAYER_CASES.items():
        rng = np.random.default_rng([seed, len(name)])
        results[name] = max(layer_gradcheck(*make(rng), rng) for _ in range(trials))
    rng = np.random.default_rng([seed, 101])
    results["bce_loss"] = max(bce_gradcheck(rng) for _ in range(trials))
    rng = np.random.default_rng([seed, 102])
    results["masked_ce_loss"] = max(masked_ce_gradcheck(rng) for _ in range(trials))
    return results


# selftest ---------------------------------------------------------------------------


def _check_crc():
    return kernels.crc64(b"123456789") == 0x995DC9BBDF1939FA, kernels.BACKEND


def _check_sensing_matrix():
    from ..sampler import default_sensing_matrix

    sm = default_sensing_matrix()
    err = float(np.max(np.abs(sm.a @ sm.a.conj().T - np.eye(sm.k))))
    return err < 1e-12, f"|AA^H - I| = {err:.2e}"


def _check_exact_recovery():
    from ..recon import somp, support_reconstruct
    from ..sampler import default_sensing_matrix, sample
    from ..sigsynth import FrameCfg, assemble_frame

    sm = default_sensing_matrix()
    worst, hits = 0.0, 0
    for seed in range(20):
        frame = assemble_frame(FrameCfg(snr_db=float("inf"), p_max=3), seed)
        m = sample(frame, sm)
        xhat = support_reconstruct(sm, m, frame.support)
        worst = max(worst, float(np.linalg.norm(xhat - frame.x) / np.linalg.norm(frame.x)))
        hits += somp(sm, m, len(frame.support)).support == frame.support
    return worst < 1e-9 and hits == 20, f"rel err {worst:.1e}, SOMP {hits}/20"


def _check_gradients():
    res = gradcheck_suite(trials=3, seed=7)
    worst = max(res.values())
    return worst < GRAD_TOL, f"worst rel err {worst:.1e}"


def _check_losses():
    loss, _ = bce_loss(np.full(14, 0.5), np.arange(14) % 2)
    ce, g = masked_ce_loss(np.random.default_rng(0).standard_normal((14, 8)), np.zeros(14, int), np.zeros(14))
    ok = abs(loss - 14 * np.log(2)) < 1e-12 and ce == 0 and not g.any()
    return ok, f"bce(0.5)-14ln2 = {loss - 14 * np.log(2):.1e}"


def _check_shapes():
    from .tables import check_table_shapes

    bad = [c for c in check_table_shapes() if not c[-1]]
    return not bad, f"{len(bad)} mismatching cells"


def _check_checkpoint():
    net = build_model(ModelSpec.preset(Arch.NDLMC_BASELINE, "desk"), seed=1)
    raw = net.to_bytes()
    return Network.from_bytes(raw).to_bytes() == raw, f"{len(raw)} bytes"


def _check_dataset_roundtrip():
    from ..datasets import GenCfg, from_bytes, generate, to_bytes

    ds = generate("DWSS", GenCfg(snrs=(10.0,)), 4, seed=3)
    raw = to_bytes(ds)
    return to_bytes(from_bytes(raw)) == raw, f"{len(raw)} bytes"


SELFTESTS: dict = {
    "crc64 check value": _check_crc,
    "sensing matrix orthonormal rows": _check_sensing_matrix,
    "noiseless exact recovery": _check_exact_recovery,
    "layer and loss gradients": _check_gradients,
    "loss identities": _check_losses,
    "architecture table shapes": _check_shapes,
    "checkpoint round trip": _check_checkpoint,
    "dataset round trip": _check_dataset_roundtrip,
}


def selftest() -> list:
    """Run every check; returns ``(name, ok, detail)`` tuples."""
    out = []
    for name, fn in SELFTESTS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), str(detail)))
    return out
