"""Small numpy MLPs with hand-written backprop, Adam and spectral normalization.

Rows are samples throughout. Everything is float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _unit(v: np.ndarray) -> Optional[np.ndarray]:
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        return None
    return v / n


class AffineLayer:
    """``y = x @ W.T + b`` with optional spectral normalization of ``W``.

    With SN enabled the layer keeps persistent singular vector estimates ``u``
    (length n_out) and ``v`` (length n_in). They only move in
    :meth:`power_iterate`; in between, ``sigma = u @ W @ v`` is a linear
    function of ``W`` and gradients flow through it with ``u`` and ``v`` fixed.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, sn: bool = False, u=None, v=None):
        self.weight = np.array(weight, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} do not agree")
        self.sn = sn
        self.u = self.v = None
        if sn:
            u = _unit(np.ones(self.n_out) if u is None else np.asarray(u, dtype=np.float64))
            if u is None or u.shape != (self.n_out,):
                raise ShapeError("u must be a non-zero vector of length n_out")
            self.u = u
            if v is None:
                v = _unit(self.weight.T @ u)
                v = np.full(self.n_in, self.n_in ** -0.5) if v is None else v
            self.v = np.asarray(v, dtype=np.float64)
            if self.v.shape != (self.n_in,):
                raise ShapeError("v must have length n_in")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, sn: bool = False) -> "AffineLayer":
        w = glorot_uniform(rng, n_in, n_out)
        u = rng.standard_normal(n_out) if sn else None
        layer = cls(w, np.zeros(n_out), sn=sn, u=u)
        if sn:
            layer.power_iterate()
        return layer

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def _raw_sigma(self) -> float:
        return float(self.u @ self.weight @ self.v)

    @property
    def sn_degenerate(self) -> bool:
        """True when SN is on but no positive sigma is available (e.g. ``W == 0``)."""
        if not self.sn:
            return False
        s = self._raw_sigma()
        return not (s > 0.0 and np.isfinite(s))

    @property
    def sigma(self) -> float:
        """Current spectral norm estimate; 1 when SN is off or degenerate."""
        if not self.sn or self.sn_degenerate:
            return 1.0
        return self._raw_sigma()

    @property
    def effective_weight(self) -> np.ndarray:
        if self.sn:
            return self.weight / self.sigma
        return self.weight

    def power_iterate(self, n_iter: int = 1) -> float:
        """Advance the power iteration ``n_iter`` steps and return the new sigma.

        A zero weight matrix leaves the effective weight equal to ``W`` and
        sets ``sn_degenerate``.
        """
        w = self.weight
        if not np.any(w):
            return self.sigma
        u, v = self.u, self.v
        for _ in range(n_iter):
            v = _unit(w.T @ u)
            if v is None:
                # u fell into the left null space; restart from the heaviest row
                u = np.zeros(self.n_out)
                u[int(np.argmax(np.linalg.norm(w, axis=1)))] = 1.0
                v = _unit(w.T @ u)
            u = _unit(w @ v)
        self.u, self.v = u, v
        return self.sigma

    def weight_grad(self, grad_effective: np.ndarray) -> np.ndarray:
        """Map ``dL/dW_eff`` to ``dL/dW`` through ``W_eff = W / (u @ W @ v)``."""
        if not self.sn or self.sn_degenerate:
            return grad_effective
        sigma = self.sigma
        w_eff = self.weight / sigma
        return (grad_effective - np.sum(grad_effective * w_eff) * np.outer(self.u, self.v)) / sigma


def spectral_normalize(layer: AffineLayer, n_iter: int = 1) -> np.ndarray:
    """One (or ``n_iter``) power-iteration update, then ``W / sigma``."""
    if not layer.sn:
        raise ValueError("spectral normalization is not enabled on this layer")
    layer.power_iterate(n_iter)
    return layer.effective_weight


@dataclass
class GradientBundle:
    weights: list
    biases: list
    input: np.ndarray
    loss: Optional[float] = None

    def as_list(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class _Cache:
    net_id: int
    version: int
    squeeze: bool
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer


class Mlp:
    """Stack of affine layers with LeakyReLU between them; the last layer is linear."""

    def __init__(self, layers: Sequence[AffineLayer], slope: float = LEAKY_SLOPE):
        self.layers = list(layers)
        self.slope = slope
        self.version = 0
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")

    @classmethod
    def build(cls, widths: Sequence[int], rng: np.random.Generator, sn: bool = False,
              slope: float = LEAKY_SLOPE) -> "Mlp":
        layers = [AffineLayer.init(a, b, rng, sn=sn) for a, b in zip(widths, widths[1:])]
        return cls(layers, slope)

    @property
    def widths(self) -> tuple:
        return (self.layers[0].n_in,) + tuple(l.n_out for l in self.layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def refresh_sn(self, n_iter: int = 1) -> None:
        for layer in self.layers:
            if layer.sn:
                layer.power_iterate(n_iter)
        self.version += 1

    def forward(self, x):
        """Return ``(output, cache)``. A 1-D input gives a 1-D output."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.n_in:
            raise ShapeError(f"expected input width {self.n_in}, got shape {x.shape}")
        inputs, pre = [], []
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            inputs.append(h)
            a = h @ layer.effective_weight.T + layer.bias
            pre.append(a)
            h = a if k == last else np.where(a > 0, a, self.slope * a)
        cache = _Cache(id(self), self.version, squeeze, inputs, pre)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: _Cache, upstream) -> GradientBundle:
        """Gradients of ``sum(upstream * output)`` w.r.t. raw parameters and input."""
        if cache.net_id != id(self) or cache.version != self.version:
            raise ValueError("forward cache is stale or belongs to another network")
        g = np.asarray(upstream, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.pre[-1].shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {cache.pre[-1].shape}")
        n = len(self.layers)
        dws, dbs = [None] * n, [None] * n
        for k in range(n - 1, -1, -1):
            layer = self.layers[k]
            if k != n - 1:
                g = np.where(cache.pre[k] > 0, g, self.slope * g)
            dws[k] = layer.weight_grad(g.T @ cache.inputs[k])
            dbs[k] = g.sum(axis=0)
            g = g @ layer.effective_weight
        return GradientBundle(dws, dbs, g[0] if cache.squeeze else g)

    def step(self, optimizer: "AdamState", grads: GradientBundle) -> None:
        adam_step(optimizer, self.parameters(), grads.as_list())
        self.version += 1


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"parameter shape {p.shape} != gradient shape {np.shape(g)}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif [m.shape for m in state.m] != [p.shape for p in params]:
        raise ShapeError("optimizer state does not match parameter shapes")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# checkpoints ----------------------------------------------------------------

MAGIC = b"EBGANCKP"
CHECKPOINT_VERSION = 1
_F8 = np.dtype("<f8")


def mlp_to_bytes(net: Mlp) -> bytes:
    """Serialize ``net``; the byte layout is documented in README.md."""
    out = [MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(net.layers)), struct.pack("<d", net.slope)]
    for layer in net.layers:
        out.append(struct.pack("<III", layer.n_out, layer.n_in, 1 if layer.sn else 0))
        out.append(np.ascontiguousarray(layer.weight, dtype=_F8).tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype=_F8).tobytes())
        if layer.sn:
            out.append(np.ascontiguousarray(layer.u, dtype=_F8).tobytes())
            out.append(np.ascontiguousarray(layer.v, dtype=_F8).tobytes())
    return b"".join(out)


def mlp_from_bytes(data: bytes) -> Mlp:
    if data[:8] != MAGIC:
        raise ValueError("not an ids-ebgan checkpoint (bad magic)")
    pos = 8
    version, n_layers = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (slope,) = struct.unpack_from("<d", data, pos)
    pos += 8

    def take(n):
        nonlocal pos
        arr = np.frombuffer(data, dtype=_F8, count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    layers = []
    for _ in range(n_layers):
        n_out, n_in, flags = struct.unpack_from("<III", data, pos)
        pos += 12
        w = take(n_out * n_in).reshape(n_out, n_in)
        b = take(n_out)
        if flags & 1:
            u, v = take(n_out), take(n_in)
            layer = AffineLayer(w, b, sn=True, u=u, v=v)
            layer.u = u  # keep the stored bits exactly
        else:
            layer = AffineLayer(w, b)
        layers.append(layer)
    if pos != len(data):
        raise ValueError(f"trailing bytes in checkpoint ({len(data) - pos})")
    return Mlp(layers, slope)
