"""Small dense-network engine on numpy.

Networks are a chain of fully connected layers, optionally preceded by an
embedding table indexed by integer message ids. ``forward`` returns a cache
that ``backward`` consumes; gradients are returned as plain lists of arrays in
the same order as :meth:`DenseNet.params`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "elu", "linear", "softmax")
FORMAT_VERSION = 1
_MAGIC = b"WTNN"
LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Dense:
    W: np.ndarray  # [out x in]
    b: np.ndarray  # [out]
    activation: str = "linear"

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


@dataclass
class DenseNet:
    layers: list[Dense]
    embedding: np.ndarray | None = None  # [M x embed_dim]
    name: str = "net"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        width = self.embedding.shape[1] if self.embedding is not None else self.layers[0].n_in
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValueError("softmax is only allowed on the final layer")
            if layer.n_in != width:
                raise ShapeError(f"layer {i} expects width {layer.n_in}, previous width is {width}")
            if layer.b.shape != (layer.n_out,):
                raise ShapeError(f"layer {i} bias shape {layer.b.shape} != ({layer.n_out},)")
            width = layer.n_out

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> list[np.ndarray]:
        out = [] if self.embedding is None else [self.embedding]
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> DenseNet:
        return DenseNet(
            layers=[Dense(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            embedding=None if self.embedding is None else self.embedding.copy(),
            name=self.name,
            meta=dict(self.meta),
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def __call__(self, x):
        return forward(self, x)


def init_dense_net(sizes, activations, rng, *, n_embed=None, name="net", meta=None) -> DenseNet:
    """Glorot-uniform weights, zero biases.

    ``sizes`` lists the layer widths including the input width. With
    ``n_embed`` set, ``sizes[0]`` is the embedding dimension and the network
    takes integer ids in ``[0, n_embed)``.
    """
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    embedding = None
    if n_embed is not None:
        lim = np.sqrt(6.0 / (n_embed + sizes[0]))
        embedding = rng.uniform(-lim, lim, size=(n_embed, sizes[0]))
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        lim = np.sqrt(6.0 / (n_in + n_out))
        layers.append(Dense(rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out), act))
    return DenseNet(layers, embedding, name=name, meta=dict(meta or {}))


def elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "elu":
        return elu(z)
    if act == "softmax":
        return softmax(z)
    return z


def _activation_backward(z, a, g, act):
    if act == "relu":
        return g * (z > 0)
    if act == "elu":
        return g * np.where(z >= 0, 1.0, a + 1.0)
    if act == "softmax":
        return a * (g - np.sum(g * a, axis=1, keepdims=True))
    return g


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray]  # pre-activations per layer
    post: list[np.ndarray]  # layer inputs, then final output


def forward(net: DenseNet, x, return_cache: bool = False):
    """Evaluate the layer chain on a batch.

    For embedding networks ``x`` is an integer array of ids, otherwise a real
    ``[k x d_in]`` array.
    """
    if net.embedding is not None:
        ids = np.asarray(x)
        if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
            raise ShapeError(f"embedding input must be a 1-D integer array, got {ids.dtype} {ids.shape}")
        if ids.size == 0:
            raise ShapeError("empty batch")
        if ids.min() < 0 or ids.max() >= net.embedding.shape[0]:
            raise ValueError(f"ids must lie in [0, {net.embedding.shape[0]})")
        h = net.embedding[ids]
    else:
        ids = None
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != net.n_in or h.shape[0] < 1:
            raise ShapeError(f"{net.name}: expected input [k x {net.n_in}], got {h.shape}")
    pre, post = [], []
    for layer in net.layers:
        post.append(h)
        z = h @ layer.W.T + layer.b
        pre.append(z)
        h = _activate(z, layer.activation)
    post.append(h)
    if return_cache:
        return h, ForwardCache(ids if ids is not None else post[0], pre, post)
    return h


def backward(net: DenseNet, cache: ForwardCache | None, grad_out, need_input_grad: bool = False,
             wrt_logits: bool = False):
    """Reverse pass for the upstream gradient ``grad_out`` (dL/d output).

    With ``wrt_logits`` the upstream gradient is taken w.r.t. the final
    pre-activation instead, which is how softmax + cross-entropy is fed in.
    Returns the gradient list aligned with ``net.params()`` and, when
    requested, dL/d input (real-input networks only).
    """
    if cache is None:
        raise ValueError(f"{net.name}: backward needs the cache from forward(..., return_cache=True)")
    g = np.asarray(grad_out, dtype=float)
    if g.shape != cache.post[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} != output {cache.post[-1].shape}")
    if not np.isfinite(g).all():
        raise NonFiniteError(f"{net.name}: non-finite upstream gradient")
    layer_grads = []
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if wrt_logits and i == len(net.layers) - 1:
            gz = g
        else:
            gz = _activation_backward(cache.pre[i], cache.post[i + 1], g, layer.activation)
        layer_grads.append((gz.T @ cache.post[i], gz.sum(axis=0)))
        g = gz @ layer.W
    grads = []
    if net.embedding is not None:
        g_emb = np.zeros_like(net.embedding)
        np.add.at(g_emb, cache.inputs, g)
        grads.append(g_emb)
    for dW, db in reversed(layer_grads):
        grads += [dW, db]
    if need_input_grad:
        if net.embedding is not None:
            raise ValueError("input gradient is undefined for embedding networks")
        return grads, g
    return grads


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood in nats, probabilities clamped at 1e-12."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} disagree")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def cross_entropy_grad(probs, labels):
    """dCE/dprobs for :func:`cross_entropy` (clamp treated as inactive)."""
    probs = np.asarray(probs, dtype=float)
    k = probs.shape[0]
    g = np.zeros_like(probs)
    rows = np.arange(k)
    g[rows, labels] = -1.0 / (k * np.maximum(probs[rows, labels], LOG_CLAMP))
    return g


def softmax_ce_logit_grad(probs, labels):
    """Gradient of mean cross-entropy w.r.t. the logits feeding a softmax."""
    g = np.array(probs, dtype=float)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    u_product: float = 1.0

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, **kw) -> OptimizerState:
        params = net.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr, **kw)

    def copy(self) -> OptimizerState:
        return OptimizerState(
            [a.copy() for a in self.m], [a.copy() for a in self.v],
            self.step, self.lr, self.beta1, self.beta2, self.eps, self.u_product,
        )


def nadam_step(net: DenseNet, grads, state: OptimizerState):
    """One Nadam update (Dozat's momentum schedule, Keras formulation), in place.

    Returns ``(net, state)`` for convenience.
    """
    params = net.params()
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} / moment {m.shape} vs parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"{net.name}: non-finite gradient at step {state.step + 1}; update rejected")
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    u_t = b1 * (1.0 - 0.5 * 0.96 ** (t * 0.004))
    u_next = b1 * (1.0 - 0.5 * 0.96 ** ((t + 1) * 0.004))
    u_prod = state.u_product * u_t
    u_prod_next = u_prod * u_next
    bias2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = u_next * m / (1.0 - u_prod_next) + (1.0 - u_t) * g / (1.0 - u_prod)
        p -= state.lr * m_hat / (np.sqrt(v / bias2) + state.eps)
    state.step = t
    state.u_product = u_prod
    if not net.all_finite():
        raise NonFiniteError(f"{net.name}: parameters became non-finite at step {t}")
    return net, state


# -- persistence -------------------------------------------------------------

def save_net(net: DenseNet, path) -> None:
    """Header line (JSON) then little-endian float64 parameters in params() order."""
    header = {
        "format_version": FORMAT_VERSION,
        "module": net.name,
        "layers": [[l.n_out, l.n_in] for l in net.layers],
        "activations": [l.activation for l in net.layers],
        "embedding": None if net.embedding is None else list(net.embedding.shape),
        "meta": net.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params())
    path = Path(path)
    path.write_bytes(_MAGIC + struct.pack("<I", len(blob)) + blob + payload)


def load_net(path) -> DenseNet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a weight file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    shapes = []
    if header["embedding"] is not None:
        shapes.append(tuple(header["embedding"]))
    for out_, in_ in header["layers"]:
        shapes += [(out_, in_), (out_,)]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    body = raw[8 + hlen :]
    if len(body) != expected:
        raise ShapeError(f"{path}: header declares {expected} parameter bytes, file has {len(body)}")
    values = np.frombuffer(body, dtype="<f8")
    arrays, off = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(values[off : off + size].reshape(s).astype(np.float64))
        off += size
    embedding = arrays.pop(0) if header["embedding"] is not None else None
    layers = [
        Dense(arrays[2 * i], arrays[2 * i + 1], act) for i, act in enumerate(header["activations"])
    ]
    return DenseNet(layers, embedding, name=header["module"], meta=header["meta"])
