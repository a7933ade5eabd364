"""Layer graph with two forward semantics over one weight store.

``surrogate`` mode runs the quantized activation (clip + grid snap) followed
by a dense multiply-accumulate per layer; ``spike`` mode encodes each layer
input into a K-step train and integrates coefficient-scaled spikes through
the same weights, one timestep at a time.  In floor rounding the two modes
produce identical outputs up to accumulation noise, which is the contract
the training loop relies on.  The final layer always emits raw membrane
potentials.

Backward is the spatial surrogate rule: gradients pass through the grid snap
unchanged and are gated to the un-clipped band by each layer's activation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .dlnet import QuantizerConfig, activation_backward, activation_forward
from .neurons import FsnConfig, fsn_encode_array

__all__ = [
    "LayerSpec",
    "Network",
    "SpikeStats",
    "ChecksumError",
    "forward",
    "backward",
    "verify_equivalence",
    "mlp2",
    "convtiny",
    "save_checkpoint",
    "load_checkpoint",
]

LAYER_KINDS = ("conv2d", "dense", "flatten", "pool-avg")


class ChecksumError(ValueError):
    """Checkpoint blob does not match the checksum recorded in its header."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the graph.

    ``fsn`` is the schedule used to encode this layer's *input* (None for
    flatten, which is a pure reshape).  Convolutions are 3x3 or 1x1 with
    zero padding.
    """

    kind: str
    out_channels: int = 0       # conv2d
    units: int = 0              # dense
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 2               # pool-avg window and stride
    fsn: FsnConfig | None = None

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and self.kernel not in (1, 3):
            raise ValueError(f"conv kernel must be 1 or 3, got {self.kernel}")
        if self.kind != "flatten" and self.fsn is None:
            raise ValueError(f"{self.kind} layer needs an input FsnConfig")

    @property
    def weighted(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv2d":
            d.update(out_channels=self.out_channels, kernel=self.kernel,
                     stride=self.stride, padding=self.padding)
        elif self.kind == "dense":
            d.update(units=self.units)
        elif self.kind == "pool-avg":
            d.update(pool=self.pool)
        if self.fsn is not None:
            d["fsn"] = {"alpha": self.fsn.alpha, "K": self.fsn.K}
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        fsn = FsnConfig(**d["fsn"]) if "fsn" in d else None
        kw = {k: v for k, v in d.items() if k != "fsn"}
        return LayerSpec(fsn=fsn, **kw)


@dataclass
class SpikeStats:
    """Per-encoding-site spike counts; slots = neurons * K * batch."""

    spikes: list[int] = field(default_factory=list)
    slots: list[int] = field(default_factory=list)

    def record(self, n_spikes: int, n_slots: int) -> None:
        self.spikes.append(int(n_spikes))
        self.slots.append(int(n_slots))

    @property
    def firing_rate(self) -> float:
        total = sum(self.slots)
        return sum(self.spikes) / total if total else 0.0

    def layer_rates(self) -> list[float]:
        return [s / n if n else 0.0 for s, n in zip(self.spikes, self.slots)]


@dataclass
class Network:
    """Ordered layers plus their shared weight and bias tensors."""

    specs: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    weights: list[np.ndarray | None]
    biases: list[np.ndarray | None]
    shapes: list[tuple]  # output shape (without batch) after each layer

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights if w is not None) + sum(
            b.size for b in self.biases if b is not None
        )

    def copy_weights(self) -> list[np.ndarray]:
        return [w.copy() if w is not None else None for w in self.weights + self.biases]

    def restore_weights(self, saved: list[np.ndarray]) -> None:
        n = len(self.weights)
        for i in range(n):
            if saved[i] is not None:
                self.weights[i][...] = saved[i]
            if saved[n + i] is not None:
                self.biases[i][...] = saved[n + i]

    @staticmethod
    def build(specs, input_shape: tuple[int, int, int], seed: int = 0) -> "Network":
        """Shape-check the graph and initialize weights (He-uniform, zero bias)."""
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        shape = tuple(input_shape)
        weights, biases, shapes = [], [], []
        for spec in specs:
            if spec.kind == "conv2d":
                if len(shape) != 3:
                    raise ValueError(f"conv2d needs a (C,H,W) input, got {shape}")
                c, h, w = shape
                oh = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
                ow = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
                fan_in = c * spec.kernel * spec.kernel
                limit = np.sqrt(6.0 / fan_in)
                weights.append(rng.uniform(-limit, limit,
                                           (spec.out_channels, c, spec.kernel, spec.kernel)))
                biases.append(np.zeros(spec.out_channels))
                shape = (spec.out_channels, oh, ow)
            elif spec.kind == "dense":
                if len(shape) != 1:
                    raise ValueError(f"dense needs a flat input, got {shape}; add a flatten layer")
                fan_in = shape[0]
                limit = np.sqrt(6.0 / fan_in)
                weights.append(rng.uniform(-limit, limit, (spec.units, fan_in)))
                biases.append(np.zeros(spec.units))
                shape = (spec.units,)
            elif spec.kind == "flatten":
                weights.append(None)
                biases.append(None)
                shape = (int(np.prod(shape)),)
            else:  # pool-avg
                c, h, w = shape
                if h % spec.pool or w % spec.pool:
                    raise ValueError(f"pool window {spec.pool} does not tile {h}x{w}")
                weights.append(None)
                biases.append(None)
                shape = (c, h // spec.pool, w // spec.pool)
            shapes.append(shape)
        if not specs or not specs[-1].weighted:
            raise ValueError("the final layer must be a weighted readout")
        return Network(tuple(specs), tuple(input_shape), weights, biases, shapes)


def mlp2(input_shape: tuple[int, int, int], outputs: int, K: int = 5,
         input_alpha: float = 1.0, hidden_alpha: float = 3.0) -> list[LayerSpec]:
    """dense-128 -> dense-outputs on the flattened frame."""
    return [
        LayerSpec("flatten"),
        LayerSpec("dense", units=128, fsn=FsnConfig(input_alpha, K)),
        LayerSpec("dense", units=outputs, fsn=FsnConfig(hidden_alpha, K)),
    ]


def convtiny(input_shape: tuple[int, int, int], outputs: int, K: int = 5,
             input_alpha: float = 1.0, hidden_alpha: float = 3.0) -> list[LayerSpec]:
    """conv16/s2 -> conv32/s2 -> dense-outputs."""
    return [
        LayerSpec("conv2d", out_channels=16, kernel=3, stride=2, padding=1,
                  fsn=FsnConfig(input_alpha, K)),
        LayerSpec("conv2d", out_channels=32, kernel=3, stride=2, padding=1,
                  fsn=FsnConfig(hidden_alpha, K)),
        LayerSpec("flatten"),
        LayerSpec("dense", units=outputs, fsn=FsnConfig(hidden_alpha, K)),
    ]


# ---------------------------------------------------------------------------
# linear pieces


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*k*k, OH*OW) patch matrix."""
    n, c, h, w = x.shape
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, OH, OW, k, k)
    n, c, oh, ow, _, _ = win.shape
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return np.ascontiguousarray(cols)


def _col2im(d_cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    d = d_cols.reshape(n, c, k, k, oh, ow)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for ky in range(k):
        for kx in range(k):
            dx[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += d[:, :, ky, kx]
    return dx[:, :, pad:pad + h, pad:pad + w]


def _apply_linear(spec: LayerSpec, weight, bias, x_p, with_bias=True, keep_cols=False):
    """The weighted map of a layer on already-encoded inputs."""
    if spec.kind == "dense":
        out = x_p @ weight.T
        if with_bias:
            out = out + bias
        return out, x_p
    if spec.kind == "conv2d":
        cols = _im2col(x_p, spec.kernel, spec.stride, spec.padding)
        w_mat = weight.reshape(weight.shape[0], -1)
        out = np.einsum("ok,nkl->nol", w_mat, cols, optimize=True)
        n, oc, l = out.shape
        oh = (x_p.shape[2] + 2 * spec.padding - spec.kernel) // spec.stride + 1
        out = out.reshape(n, oc, oh, l // oh)
        if with_bias:
            out = out + bias[None, :, None, None]
        return out, (cols if keep_cols else None)
    if spec.kind == "pool-avg":
        n, c, h, w = x_p.shape
        p = spec.pool
        out = x_p.reshape(n, c, h // p, p, w // p, p).mean(axis=(3, 5))
        return out, None
    raise AssertionError(spec.kind)


_POPCOUNT_CACHE: dict[int, np.ndarray] = {}


def _count_spikes_from_levels(x_p: np.ndarray, fsn: FsnConfig) -> int:
    """Total spikes implied by on-grid activations (bits of the level index)."""
    levels = np.rint(x_p / fsn.x_min).astype(np.int64)
    total = 0
    for t in range(fsn.K):
        total += int(((levels >> t) & 1).sum())
    return total


def forward(net: Network, x: np.ndarray, mode: str = "surrogate",
            rounding: str = "floor") -> tuple[np.ndarray, SpikeStats]:
    """Run a batch through the network.

    ``x`` is (N, C, H, W) (or (C, H, W) for a single sample) with values in
    [0, 1].  Returns the readout membrane potentials and spike statistics.
    Both modes read the same weight tensors; in floor rounding their outputs
    agree to ~1e-12 per element.
    """
    if mode == "surrogate":
        out, stats, _ = _forward_surrogate(net, x, rounding, want_cache=False)
        return out, stats
    if mode == "spike":
        return _forward_spike(net, x)
    raise ValueError(f"unknown mode {mode!r}")


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == len(net.input_shape):
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} != network input {net.input_shape}")
    return x


def _forward_surrogate(net: Network, x, rounding: str, want_cache: bool):
    x = _check_input(net, x)
    stats = SpikeStats()
    cache = []
    for i, spec in enumerate(net.specs):
        if spec.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
            cache.append(None)
            continue
        qcfg = QuantizerConfig(spec.fsn, rounding)
        x_pre = x
        x_p = activation_forward(x_pre, qcfg)
        if rounding in ("floor", "round"):
            stats.record(_count_spikes_from_levels(x_p, spec.fsn),
                         x_p.size * spec.fsn.K)
        x, cols = _apply_linear(spec, net.weights[i], net.biases[i], x_p,
                                keep_cols=want_cache)
        cache.append({"x_pre": x_pre, "x_p": x_p, "cols": cols, "qcfg": qcfg})
    return x, stats, (cache if want_cache else None)


def _forward_spike(net: Network, x):
    x = _check_input(net, x)
    stats = SpikeStats()
    for i, spec in enumerate(net.specs):
        if spec.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
            continue
        fsn = spec.fsn
        bits = fsn_encode_array(x, fsn)  # (K, N, ...)
        stats.record(int(bits.sum()), x.size * fsn.K)
        acc = None
        for t, d_t in enumerate(fsn.coefficients):
            term, _ = _apply_linear(spec, net.weights[i], net.biases[i], bits[t],
                                    with_bias=False)
            acc = d_t * term if acc is None else acc + d_t * term
        if spec.kind == "dense":
            x = acc + net.biases[i]
        elif spec.kind == "conv2d":
            x = acc + net.biases[i][None, :, None, None]
        else:
            x = acc
    return x, stats


def backward(net: Network, cache: list, d_out: np.ndarray) -> list[tuple]:
    """Propagate d(loss)/d(readout) back to all weights.

    ``cache`` comes from a surrogate-semantics forward.  Returns one
    (d_weight, d_bias) pair per layer (None for unweighted layers).  The
    error entering each layer passes the grid snap as identity and is gated
    by that layer's clip band.
    """
    if cache is None:
        raise ValueError("backward requires the cache of a prior forward pass")
    grads: list = [None] * len(net.specs)
    eps = np.asarray(d_out, dtype=np.float64)
    for i in range(len(net.specs) - 1, -1, -1):
        spec = net.specs[i]
        if spec.kind == "flatten":
            below = net.shapes[i - 1] if i > 0 else net.input_shape
            eps = eps.reshape((eps.shape[0],) + tuple(below))
            continue
        entry = cache[i]
        if spec.kind == "dense":
            grads[i] = (eps.T @ entry["x_p"], eps.sum(axis=0))
            d_xp = eps @ net.weights[i]
        elif spec.kind == "conv2d":
            n, oc = eps.shape[0], eps.shape[1]
            eps_mat = eps.reshape(n, oc, -1)
            cols = entry["cols"]
            dw = np.einsum("nol,nkl->ok", eps_mat, cols, optimize=True)
            grads[i] = (dw.reshape(net.weights[i].shape), eps_mat.sum(axis=(0, 2)))
            w_mat = net.weights[i].reshape(oc, -1)
            d_cols = np.einsum("ok,nol->nkl", w_mat, eps_mat, optimize=True)
            d_xp = _col2im(d_cols, entry["x_p"].shape, spec.kernel, spec.stride, spec.padding)
        else:  # pool-avg
            p = spec.pool
            d_xp = np.repeat(np.repeat(eps, p, axis=2), p, axis=3) / (p * p)
        eps = activation_backward(d_xp, entry["x_pre"], entry["qcfg"])
    return grads


def verify_equivalence(net: Network, n_samples: int, seed: int = 0,
                       rounding: str = "floor") -> float:
    """Max |spike-mode - surrogate-mode| readout over random [0,1] inputs."""
    if n_samples <= 0:
        return 0.0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.uniform(0.0, 1.0, (n_samples,) + net.input_shape)
    out_s, _ = forward(net, x, mode="surrogate", rounding=rounding)
    out_k, _ = forward(net, x, mode="spike")
    return float(np.abs(out_s - out_k).max())


# ---------------------------------------------------------------------------
# checkpoints: one-line JSON header, newline, then float32 little-endian blob


def save_checkpoint(net: Network, path, epoch: int = 0) -> None:
    tensors = []
    blob = bytearray()
    for i, spec in enumerate(net.specs):
        if not spec.weighted:
            continue
        for name, arr in ((f"layer{i}.weight", net.weights[i]), (f"layer{i}.bias", net.biases[i])):
            data = arr.astype("<f4").tobytes()
            tensors.append({"name": name, "shape": list(arr.shape),
                            "offset": len(blob), "nbytes": len(data)})
            blob.extend(data)
    header = {
        "format": "fewspikes-ckpt-v1",
        "epoch": epoch,
        "input_shape": list(net.input_shape),
        "layers": [s.to_dict() for s in net.specs],
        "tensors": tensors,
        "blob_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[Network, int]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line)
    if header.get("format") != "fewspikes-ckpt-v1":
        raise ValueError(f"{path}: not a fewspikes checkpoint")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header["blob_sha256"]:
        raise ChecksumError(f"{path}: checksum mismatch (corrupted checkpoint)")
    specs = [LayerSpec.from_dict(d) for d in header["layers"]]
    net = Network.build(specs, tuple(header["input_shape"]))
    by_name = {t["name"]: t for t in header["tensors"]}
    for i, spec in enumerate(net.specs):
        if not spec.weighted:
            continue
        for name, target in ((f"layer{i}.weight", net.weights[i]), (f"layer{i}.bias", net.biases[i])):
            t = by_name[name]
            flat = np.frombuffer(blob, dtype="<f4", count=t["nbytes"] // 4,
                                 offset=t["offset"]).astype(np.float64)
            target[...] = flat.reshape(t["shape"])
    return net, int(header["epoch"])
