"""Small numpy CNN engine: the layer set needed by the sensing and
classification networks, each with an analytic backward pass.

Arrays inside a network are laid out ``(rows, length, channels)`` where
``rows = batch * bands``. Every layer acts on rows independently, which is
what makes the networks band-equivariant and band-count agnostic.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChecksumError, ConfigError, FormatError, ShapeError
from .kernels import crc64

_CHUNK_ELEMS = 1 << 22


class Param:
    """A learnable array and its gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = np.zeros_like(data)

    def __repr__(self):
        return f"Param(shape={self.data.shape}, dtype={self.data.dtype})"


def glorot_uniform(shape, fan_in, fan_out, rng, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = ""
    need_input_grad = True

    def params(self) -> list:
        return []

    def hparams(self) -> tuple:
        return ()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def astype(self, dtype):
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self


class Conv1xW(Layer):
    """1 x ``width`` cross-correlation along the length axis, stride 1.

    ``padding="valid"`` shrinks the length by ``width - 1``; ``"same"`` pads
    with zeros (extra zero on the right for even widths).
    """

    kind = "conv"

    def __init__(self, width, cin, cout, padding="valid", rng=None, dtype=np.float32):
        if padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {padding!r}")
        if min(width, cin, cout) < 1:
            raise ConfigError("conv width and channel counts must be >= 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.width, self.cin, self.cout, self.padding = width, cin, cout, padding
        self.w = Param(glorot_uniform((width, cin, cout), width * cin, width * cout, rng, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def hparams(self):
        return (self.width, self.cin, self.cout, int(self.padding == "same"))

    def _pads(self):
        if self.padding == "valid":
            return 0, 0
        left = (self.width - 1) // 2
        return left, self.width - 1 - left

    def output_shape(self, shape):
        *lead, length, _ = shape
        left, right = self._pads()
        return (*lead, length + left + right - self.width + 1, self.cout)

    def _rows_per_chunk(self, lout):
        return max(1, _CHUNK_ELEMS // max(1, lout * self.width * self.cin))

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.cin:
            raise ShapeError(f"conv expects (rows, length, {self.cin}), got {x.shape}")
        left, right = self._pads()
        if left or right:
            x = np.pad(x, ((0, 0), (left, right), (0, 0)))
        rows, length, _ = x.shape
        if length < self.width:
            raise ShapeError(f"input length {length} shorter than filter width {self.width}")
        self._x = x
        lout = length - self.width + 1
        wmat = self.w.data.reshape(self.width * self.cin, self.cout)
        if self.width == 1:
            out = x @ self.w.data[0]
        else:
            out = np.empty((rows, lout, self.cout), dtype=np.result_type(x, wmat))
            step = self._rows_per_chunk(lout)
            for r0 in range(0, rows, step):
                cols = self._cols(x[r0 : r0 + step], lout)
                out[r0 : r0 + step] = (cols @ wmat).reshape(-1, lout, self.cout)
        return out + self.b.data

    def _cols(self, x, lout):
        # (r, lout, cin, width) -> (r*lout, width*cin), tap-major like self.w
        win = sliding_window_view(x, self.width, axis=1)
        return win.transpose(0, 1, 3, 2).reshape(-1, self.width * self.cin)

    def backward(self, g):
        x = self._x
        rows, length, _ = x.shape
        lout = length - self.width + 1
        self.b.grad = g.sum(axis=(0, 1))
        wmat = self.w.data.reshape(self.width * self.cin, self.cout)
        if self.width == 1:
            self.w.grad = (x.reshape(-1, self.cin).T @ g.reshape(-1, self.cout))[None]
            dx = g @ self.w.data[0].T if self.need_input_grad else None
        else:
            dw = np.zeros_like(wmat)
            dx = np.zeros_like(x) if self.need_input_grad else None
            step = self._rows_per_chunk(lout)
            for r0 in range(0, rows, step):
                gc = g[r0 : r0 + step].reshape(-1, self.cout)
                dw += self._cols(x[r0 : r0 + step], lout).T @ gc
                if dx is not None:
                    dcols = (gc @ wmat.T).reshape(-1, lout, self.width, self.cin)
                    dxc = dx[r0 : r0 + step]
                    for k in range(self.width):
                        dxc[:, k : k + lout] += dcols[:, :, k]
            self.w.grad = dw.reshape(self.w.data.shape)
        if dx is None:
            return None
        left, right = self._pads()
        if left or right:
            dx = dx[:, left : dx.shape[1] - right]
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return np.where(self._mask, g, 0).astype(g.dtype, copy=False)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, g):
        return g * self._out * (1.0 - self._out)


class Softmax(Layer):
    """Softmax over the last axis with max subtraction."""

    kind = "softmax"

    def forward(self, x):
        self._out = softmax(x)
        return self._out

    def backward(self, g):
        s = self._out
        return s * (g - np.sum(g * s, axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


class CustomPool(Layer):
    """Mean over the length axis of ``(rows, length, channels)``."""

    kind = "pool"

    def __init__(self, keepdims: bool = False):
        self.keepdims = keepdims

    def hparams(self):
        return (int(self.keepdims),)

    def output_shape(self, shape):
        *lead, _, c = shape
        return (*lead, 1, c) if self.keepdims else (*lead, c)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] < 1:
            raise ShapeError(f"pool expects (rows, length>=1, channels), got {x.shape}")
        self._length = x.shape[1]
        return x.mean(axis=1, keepdims=self.keepdims)

    def backward(self, g):
        if not self.keepdims:
            g = g[:, None, :]
        return np.broadcast_to(g / self._length, (g.shape[0], self._length, g.shape[2])).copy()


class AvgPool3(Layer):
    """Width-3 moving average, stride 1, zero padded to keep the length."""

    kind = "avgpool3"

    def forward(self, x):
        p = np.pad(x, ((0, 0), (1, 1), (0, 0)))
        return (p[:, :-2] + p[:, 1:-1] + p[:, 2:]) / 3.0

    def backward(self, g):
        # symmetric kernel: the adjoint is the same moving average
        return self.forward(g)


class Offset(Layer):
    """Fixed shift ``y = x - c``.

    Placed before the first convolution it re-centers [0, 1] inputs. It is
    an exact reparametrization of that convolution's bias, so the model's
    function class is unchanged; what changes is that weight gradients no
    longer carry the inputs' large common mean.
    """

    kind = "offset"

    def __init__(self, c: float = 0.5):
        self.c = float(c)

    def hparams(self):
        return (int(round(self.c * 1_000_000)),)

    def forward(self, x):
        return x - np.asarray(self.c, dtype=x.dtype)

    def backward(self, g):
        return g


class Dense(Layer):
    """Affine map on the last axis, shared across all leading axes."""

    kind = "dense"

    def __init__(self, cin, cout, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cin, self.cout = cin, cout
        self.w = Param(glorot_uniform((cin, cout), cin, cout, rng, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def hparams(self):
        return (self.cin, self.cout)

    def output_shape(self, shape):
        return (*shape[:-1], self.cout)

    def forward(self, x):
        if x.shape[-1] != self.cin:
            raise ShapeError(f"dense expects last axis {self.cin}, got {x.shape}")
        self._x = x
        return x @ self.w.data + self.b.data

    def backward(self, g):
        x2 = self._x.reshape(-1, self.cin)
        g2 = g.reshape(-1, self.cout)
        self.w.grad = x2.T @ g2
        self.b.grad = g2.sum(axis=0)
        return g @ self.w.data.T


class Sequential(Layer):
    kind = "seq"

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


class InceptionBlock(Layer):
    """Four parallel same-length branches concatenated on channels.

    1x1 conv | 1x1 -> 1x3 conv | 1x1 -> 1x5 conv | 3-wide average pool -> 1x1 conv,
    each conv followed by ReLU.
    """

    kind = "inception"

    def __init__(self, cin, c1=64, c3r=48, c3=64, c5r=16, c5=32, cp=32, out_channels=192,
                 rng=None, dtype=np.float32):
        if c1 + c3 + c5 + cp != out_channels:
            raise ConfigError(
                f"inception branch channels {c1}+{c3}+{c5}+{cp} do not sum to {out_channels}"
            )
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = (cin, c1, c3r, c3, c5r, c5, cp)
        conv = lambda w, i, o: Conv1xW(w, i, o, "same", rng=rng, dtype=dtype)  # noqa: E731
        self.branches = [
            Sequential([conv(1, cin, c1), ReLU()]),
            Sequential([conv(1, cin, c3r), ReLU(), conv(3, c3r, c3), ReLU()]),
            Sequential([conv(1, cin, c5r), ReLU(), conv(5, c5r, c5), ReLU()]),
            Sequential([AvgPool3(), conv(1, cin, cp), ReLU()]),
        ]
        self.splits = np.cumsum([c1, c3, c5])

    @property
    def out_channels(self):
        _, c1, _, c3, _, c5, cp = self.cfg
        return c1 + c3 + c5 + cp

    def params(self):
        return [p for b in self.branches for p in b.params()]

    def hparams(self):
        return self.cfg

    def output_shape(self, shape):
        return (*shape[:-1], self.out_channels)

    def forward(self, x):
        if x.shape[-1] != self.cfg[0]:
            raise ShapeError(f"inception expects {self.cfg[0]} input channels, got {x.shape}")
        return np.concatenate([b.forward(x) for b in self.branches], axis=-1)

    def backward(self, g):
        parts = np.split(g, self.splits, axis=-1)
        dx = None
        for branch, gp in zip(self.branches, parts):
            d = branch.backward(np.ascontiguousarray(gp))
            dx = d if dx is None else dx + d
        return dx


_KINDS = {
    "conv": 1, "relu": 2, "sigmoid": 3, "softmax": 4, "pool": 5, "dense": 6,
    "inception": 7, "avgpool3": 8, "offset": 9,
}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


def layer_from_hparams(kind: str, hp: Sequence[int], dtype=np.float32) -> Layer:
    if kind == "conv":
        width, cin, cout, same = hp
        return Conv1xW(width, cin, cout, "same" if same else "valid", dtype=dtype)
    if kind == "dense":
        return Dense(*hp, dtype=dtype)
    if kind == "pool":
        return CustomPool(bool(hp[0]))
    if kind == "offset":
        return Offset(hp[0] / 1_000_000)
    if kind == "inception":
        cin, c1, c3r, c3, c5r, c5, cp = hp
        return InceptionBlock(cin, c1, c3r, c3, c5r, c5, cp, out_channels=c1 + c3 + c5 + cp, dtype=dtype)
    return {"relu": ReLU, "sigmoid": Sigmoid, "softmax": Softmax, "avgpool3": AvgPool3}[kind]()


class Network:
    """A layer stack applied band-wise to ``(batch, bands, length, channels)`` inputs.

    ``stages`` groups consecutive layers into named rows for shape reports;
    ``squeeze_output`` drops trailing singleton axes of the final output.
    """

    def __init__(self, layers, stage_of=None, stage_names=(), arch_id=0, squeeze_output=False):
        self.layers = list(layers)
        self.stage_of = list(stage_of) if stage_of is not None else list(range(len(self.layers)))
        self.stage_names = list(stage_names)
        self.arch_id = arch_id
        self.squeeze_output = squeeze_output

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    @property
    def dtype(self):
        ps = self.params()
        return ps[0].data.dtype if ps else np.dtype(np.float64)

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params())

    def _squeeze(self, out):
        if self.squeeze_output:
            while out.ndim > 1 and out.shape[-1] == 1:
                out = out[..., 0]
        return out

    def forward_rows(self, x: np.ndarray) -> np.ndarray:
        """Forward on ``(rows, length, channels)``."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x)
        return self._squeeze(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected (batch, bands, length, channels), got {x.shape}")
        b, n = x.shape[:2]
        out = self.forward_rows(x.reshape(b * n, *x.shape[2:]))
        return out.reshape(b, n, *out.shape[1:])

    def backward_rows(self, g: np.ndarray, need_input_grad: bool = False):
        """Backward from the gradient of the (squeezed) output; fills ``Param.grad``."""
        # layers in front of the first parameterized one only pass gradients
        # through, so the input gradient stops there unless asked for
        lead = True
        for layer in self.layers:
            layer.need_input_grad = need_input_grad or not lead
            if layer.params():
                lead = False
        g = np.asarray(g, dtype=self.dtype)
        while g.ndim < self._last_ndim:
            g = g[..., None]
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g

    def backward(self, g: np.ndarray, need_input_grad: bool = False):
        b, n = g.shape[:2]
        dx = self.backward_rows(g.reshape(b * n, *g.shape[2:]), need_input_grad)
        return None if dx is None else dx.reshape(b, n, *dx.shape[1:])

    @property
    def _last_ndim(self):
        # rank of the unsqueezed row output
        return len(self.row_output_shape((1, 1, 1)))

    def row_output_shape(self, shape: tuple) -> tuple:
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def stage_shapes(self, bands: int, length: int, channels: int) -> list:
        """(stage name, per-frame output shape) for every stage, from shape algebra."""
        shape = (bands, length, channels)
        out = []
        for i, layer in enumerate(self.layers):
            shape = layer.output_shape(shape)
            last = i == len(self.layers) - 1 or self.stage_of[i + 1] != self.stage_of[i]
            if last:
                s = shape
                if i == len(self.layers) - 1 and self.squeeze_output:
                    while len(s) > 1 and s[-1] == 1:
                        s = s[:-1]
                name = self.stage_names[self.stage_of[i]] if self.stage_names else self.layers[i].kind
                out.append((name, tuple(s)))
        return out

    # checkpoint I/O -------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, self.arch_id, len(self.layers),
                                    int(self.squeeze_output)))
        buf.write(struct.pack("<B", len(self.stage_names)))
        for name in self.stage_names:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<B", len(raw)) + raw)
        for layer, stage in zip(self.layers, self.stage_of):
            hp = layer.hparams()
            ps = layer.params()
            buf.write(struct.pack("<BBB", _KINDS[layer.kind], stage, len(hp)))
            buf.write(struct.pack(f"<{len(hp)}i", *hp))
            buf.write(struct.pack("<H", len(ps)))
            for p in ps:
                buf.write(struct.pack("<B", p.data.ndim))
                buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        for p in self.params():
            buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        body = buf.getvalue()
        return body + struct.pack("<Q", crc64(body))

    @classmethod
    def from_bytes(cls, raw: bytes, dtype=np.float32) -> "Network":
        if len(raw) < 8:
            raise FormatError("truncated checkpoint")
        body = memoryview(raw)[:-8]
        (stored,) = struct.unpack_from("<Q", raw, len(raw) - 8)
        try:
            net = cls._parse(body, dtype)
        except struct.error as exc:
            raise FormatError(f"truncated checkpoint: {exc}") from None
        if crc64(body) != stored:
            raise ChecksumError("checkpoint checksum mismatch")
        return net

    @classmethod
    def _parse(cls, raw, dtype):
        magic, version, arch, n_layers, squeeze = _CKPT_HEADER.unpack_from(raw, 0)
        if magic != _CKPT_MAGIC:
            raise FormatError(f"bad checkpoint magic {bytes(magic)!r}")
        if version != _CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = _CKPT_HEADER.size
        (n_stages,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        names = []
        for _ in range(n_stages):
            (ln,) = struct.unpack_from("<B", raw, pos)
            names.append(bytes(raw[pos + 1 : pos + 1 + ln]).decode("utf-8"))
            pos += 1 + ln
        layers, stages, shapes = [], [], []
        for _ in range(n_layers):
            kind_id, stage, n_hp = struct.unpack_from("<BBB", raw, pos)
            pos += 3
            hp = struct.unpack_from(f"<{n_hp}i", raw, pos)
            pos += 4 * n_hp
            (n_p,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            if kind_id not in _KIND_NAMES:
                raise FormatError(f"unknown layer kind {kind_id}")
            layer = layer_from_hparams(_KIND_NAMES[kind_id], hp, dtype)
            if len(layer.params()) != n_p:
                raise FormatError("parameter count mismatch in checkpoint")
            for _ in range(n_p):
                (nd,) = struct.unpack_from("<B", raw, pos)
                shapes.append(struct.unpack_from(f"<{nd}I", raw, pos + 1))
                pos += 1 + 4 * nd
            layers.append(layer)
            stages.append(stage)
        net = cls(layers, stages, names, arch, bool(squeeze))
        params = net.params()
        for p, shape in zip(params, shapes):
            if tuple(p.data.shape) != tuple(shape):
                raise FormatError(f"parameter shape {shape} does not match layer {p.data.shape}")
            count = int(np.prod(shape))
            if pos + 4 * count > len(raw):
                raise FormatError("truncated checkpoint payload")
            p.data = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(dtype)
            p.grad = np.zeros_like(p.data)
            pos += 4 * count
        if pos != len(raw):
            raise FormatError("trailing bytes after checkpoint payload")
        return net

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path], dtype=np.float32) -> "Network":
        return cls.from_bytes(Path(path).read_bytes(), dtype)


_CKPT_MAGIC = b"SNSM"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHBHB")


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4, index=None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``x`` (modified in place).

    ``index`` restricts the evaluation to a subset of flat indices.
    """
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if index is None else index
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, tiny) over all entries (scale-aware)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)
