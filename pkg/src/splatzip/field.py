"""Appearance field: per-Gaussian features fused with a tiny coordinate network.

Four small MLPs share one layout (linear layers, ReLU between them):

* ``s``: positional encoding of the normalized center -> space feature F
* ``t``: cat(T, F) -> SH DC coefficients
* ``o``: cat(T, F) -> opacity logit
* ``v``: cat(V, F) -> 45 higher-order SH coefficients

Gradients are written out by hand; :func:`loss_and_grads` is the single
source of truth for both training and the finite-difference check.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .core import SH_REST_DIM, OmgGaussianSet, SourceGaussianSet

log = logging.getLogger(__name__)

MLP_NAMES = ("s", "t", "o", "v")
FIELD_BUDGET_BYTES = 30_000
OUTPUT_INIT_SCALE = 0.1

Layers = List[Tuple[np.ndarray, np.ndarray]]


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"distillation diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration


@dataclass(frozen=True)
class FieldArch:
    pe_frequencies: int = 6
    feature_dim: int = 16
    hidden: int = 32
    hidden_layers: int = 1

    @property
    def pe_dim(self) -> int:
        return 3 + 6 * self.pe_frequencies

    def mlp_dims(self) -> Dict[str, Tuple[int, int]]:
        f = self.feature_dim
        return {"s": (self.pe_dim, f), "t": (3 + f, 3), "o": (3 + f, 1), "v": (3 + f, SH_REST_DIM)}


@dataclass(frozen=True)
class FieldWeights:
    arch: FieldArch
    aabb: np.ndarray  # (2, 3): min row, max row
    mlps: Dict[str, Layers]

    @classmethod
    def init(cls, arch: FieldArch, aabb, rng: np.random.Generator, dtype=np.float64) -> "FieldWeights":
        mlps = {}
        for name, (d_in, d_out) in arch.mlp_dims().items():
            dims = [d_in] + [arch.hidden] * arch.hidden_layers + [d_out]
            layers = []
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                bound = np.sqrt(6.0 / (a + b))
                if i == len(dims) - 2:
                    bound *= OUTPUT_INIT_SCALE  # start near the bias, not at a random offset
                layers.append((rng.uniform(-bound, bound, (a, b)).astype(dtype), np.zeros(b, dtype)))
            mlps[name] = layers
        return cls(arch, np.asarray(aabb, dtype=np.float64).reshape(2, 3), mlps)

    def arrays(self) -> List[np.ndarray]:
        """Every parameter array in serialization order."""
        return [a for name in MLP_NAMES for layer in self.mlps[name] for a in layer]

    def with_arrays(self, arrays) -> "FieldWeights":
        it = iter(arrays)
        mlps = {name: [(next(it), next(it)) for _ in self.mlps[name]] for name in MLP_NAMES}
        return replace(self, mlps=mlps)

    def astype(self, dtype) -> "FieldWeights":
        return self.with_arrays([a.astype(dtype) for a in self.arrays()])

    def to_half(self) -> "FieldWeights":
        """Round every weight to float16 (values kept in float32 arrays)."""
        return self.with_arrays([a.astype(np.float16).astype(np.float32) for a in self.arrays()])

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_bytes(self) -> bytes:
        a = self.arch
        head = struct.pack("<4H", a.pe_frequencies, a.feature_dim, a.hidden, a.hidden_layers)
        head += np.asarray(self.aabb, dtype="<f4").tobytes()
        body = b"".join(np.asarray(x, dtype="<f2").tobytes() for x in self.arrays())
        return head + body

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FieldWeights":
        arch = FieldArch(*struct.unpack_from("<4H", buf, 0))
        aabb = np.frombuffer(buf, dtype="<f4", count=6, offset=8).astype(np.float64).reshape(2, 3)
        template = cls.init(arch, aabb, np.random.default_rng(0))
        off = 32
        arrays = []
        for t in template.arrays():
            n = t.size
            a = np.frombuffer(buf, dtype="<f2", count=n, offset=off).astype(np.float32).reshape(t.shape)
            arrays.append(a)
            off += 2 * n
        if off != len(buf):
            raise ValueError(f"field weight block has {len(buf) - off} trailing bytes")
        return template.with_arrays(arrays)

    @property
    def serialized_size(self) -> int:
        return 32 + 2 * self.param_count


def normalize_positions(p, aabb) -> np.ndarray:
    lo, hi = np.asarray(aabb, dtype=np.float64)
    ext = np.maximum(hi - lo, 1e-9)
    return np.clip(2.0 * (np.asarray(p, dtype=np.float64) - lo) / ext - 1.0, -1.0, 1.0)


def positional_encoding(p, frequencies: int) -> np.ndarray:
    """[p, sin(2^k pi p), cos(2^k pi p) for k < frequencies] for already-normalized p."""
    if frequencies < 0:
        raise ValueError("frequencies must be >= 0")
    p = np.asarray(p)
    parts = [p]
    for k in range(frequencies):
        arg = (2.0**k * np.pi) * p
        parts += [np.sin(arg), np.cos(arg)]
    return np.concatenate(parts, axis=-1)


def mlp_forward(x, layers: Layers):
    acts = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def mlp_backward(dout, acts, layers: Layers):
    grads = [None] * len(layers)
    d = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (acts[i].T @ d, d.sum(axis=0))
        d = d @ W.T
        if i > 0:
            d = d * (acts[i] > 0)
    return d, grads


def space_feature(weights: FieldWeights, p) -> np.ndarray:
    """Space feature F for raw world positions ``p`` (N, 3)."""
    dt = weights.mlps["s"][0][0].dtype
    g = positional_encoding(normalize_positions(p, weights.aabb), weights.arch.pe_frequencies).astype(dt)
    return mlp_forward(g, weights.mlps["s"])[0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_features(weights: FieldWeights, positions, T, V):
    """Batched decode to (sh_dc, opacity, sh_rest)."""
    dt = weights.mlps["s"][0][0].dtype
    F = space_feature(weights, positions)
    xt = np.concatenate([np.asarray(T, dt), F], axis=1)
    xv = np.concatenate([np.asarray(V, dt), F], axis=1)
    h0 = mlp_forward(xt, weights.mlps["t"])[0]
    o = _sigmoid(mlp_forward(xt, weights.mlps["o"])[0][:, 0])
    hr = mlp_forward(xv, weights.mlps["v"])[0]
    return h0, o, hr


def decode(gset: OmgGaussianSet, n: int):
    if not 0 <= n < gset.count:
        raise IndexError(f"Gaussian index {n} out of range for {gset.count}")
    h0, o, hr = decode_features(gset.field, gset.positions[n:n + 1], gset.static_features[n:n + 1],
                                gset.view_features[n:n + 1])
    return h0[0], float(o[0]), hr[0]


def export_decoded(gset: OmgGaussianSet, chunk: int = 65536) -> SourceGaussianSet:
    if gset.count == 0:
        return SourceGaussianSet.empty()
    parts = [decode_features(gset.field, gset.positions[s:s + chunk], gset.static_features[s:s + chunk],
                             gset.view_features[s:s + chunk]) for s in range(0, gset.count, chunk)]
    h0 = np.concatenate([p[0] for p in parts]).astype(np.float64)
    o = np.concatenate([p[1] for p in parts]).astype(np.float64)
    hr = np.concatenate([p[2] for p in parts]).astype(np.float64)
    return SourceGaussianSet(gset.positions, gset.log_scales, gset.rotations, np.clip(o, 0.0, 1.0), h0, hr)


@dataclass(frozen=True)
class DistillConfig:
    arch: FieldArch = field(default_factory=FieldArch)
    iterations: int = 5000
    batch_size: int = 4096
    lr_features: float = 1e-2
    lr_weights: float = 1e-3
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 0.25)
    eval_every: int = 250
    seed: int = 0
    dtype: str = "float32"


def loss_and_grads(weights: FieldWeights, pe, T, V, targets, loss_weights, want_grads=True):
    """Distillation loss on one batch and its gradients.

    ``pe`` is the positional encoding of the batch, ``targets`` the tuple
    (sh_dc, opacity, sh_rest). Returns (loss, weight_grads, dT, dV) with
    ``weight_grads`` aligned to ``weights.arrays()``.
    """
    t0, to, tr = targets
    w0, w1, w2 = loss_weights
    n = len(pe)
    m = weights.mlps
    F, acts_s = mlp_forward(pe, m["s"])
    xt = np.concatenate([T, F], axis=1)
    xv = np.concatenate([V, F], axis=1)
    h0, acts_t = mlp_forward(xt, m["t"])
    oraw, acts_o = mlp_forward(xt, m["o"])
    o = _sigmoid(oraw[:, 0])
    hr, acts_v = mlp_forward(xv, m["v"])
    e0, eo, er = h0 - t0, o - to, hr - tr
    loss = (w0 * np.sum(e0 * e0) + w1 * np.sum(eo * eo) + w2 * np.sum(er * er)) / n
    if not want_grads:
        return float(loss), None, None, None
    dxt_t, g_t = mlp_backward((2.0 * w0 / n) * e0, acts_t, m["t"])
    do = ((2.0 * w1 / n) * eo * o * (1.0 - o))[:, None]
    dxt_o, g_o = mlp_backward(do, acts_o, m["o"])
    dxv, g_v = mlp_backward((2.0 * w2 / n) * er, acts_v, m["v"])
    dxt = dxt_t + dxt_o
    dF = dxt[:, 3:] + dxv[:, 3:]
    _, g_s = mlp_backward(dF, acts_s, m["s"])
    grads = {"s": g_s, "t": g_t, "o": g_o, "v": g_v}
    flat = [g for name in MLP_NAMES for layer in grads[name] for g in layer]
    return float(loss), flat, dxt[:, :3], dxv[:, :3]


class _Adam:
    def __init__(self, shape, lr, dtype, beta1=0.9, beta2=0.999, eps=1e-15):
        self.m = np.zeros(shape, dtype)
        self.v = np.zeros(shape, dtype)
        self.t = np.zeros(shape[:1], np.int64) if len(shape) > 1 else None
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0

    def step(self, param, grad):
        self.step_count += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1**self.step_count)
        vh = self.v / (1 - self.b2**self.step_count)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)

    def sparse_step(self, param, rows, grad):
        """Lazy update touching only ``rows`` (per-row step counters)."""
        self.t[rows] += 1
        t = self.t[rows][:, None]
        m = self.b1 * self.m[rows] + (1 - self.b1) * grad
        v = self.b2 * self.v[rows] + (1 - self.b2) * grad * grad
        self.m[rows], self.v[rows] = m, v
        mh = m / (1 - self.b1**t)
        vh = v / (1 - self.b2**t)
        param[rows] -= self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class DistillResult:
    scene: OmgGaussianSet
    loss_trace: List[Tuple[int, float]]
    best_iteration: int

    @property
    def final_loss(self) -> float:
        return dict(self.loss_trace)[self.best_iteration]


def scene_aabb(positions) -> np.ndarray:
    """float32-representable bounds, widened where an axis is degenerate."""
    p = np.asarray(positions, dtype=np.float64)
    if len(p) == 0:
        return np.array([[0.0] * 3, [1.0] * 3])
    lo, hi = p.min(axis=0), p.max(axis=0)
    flat = hi - lo < 1e-9
    lo = np.where(flat, lo - 0.5e-3, lo)
    hi = np.where(flat, hi + 0.5e-3, hi)
    lo32 = lo.astype(np.float32)
    hi32 = hi.astype(np.float32)
    lo32 = np.where(lo32 > lo, np.nextafter(lo32, np.float32(-np.inf)), lo32)
    hi32 = np.where(hi32 < hi, np.nextafter(hi32, np.float32(np.inf)), hi32)
    return np.stack([lo32, hi32]).astype(np.float64)


def full_loss(weights: FieldWeights, source: SourceGaussianSet, T, V, loss_weights, chunk=32768) -> float:
    dt = weights.mlps["s"][0][0].dtype
    total = 0.0
    n = source.count
    for s in range(0, n, chunk):
        sl = slice(s, s + chunk)
        pe = positional_encoding(normalize_positions(source.positions[sl], weights.aabb),
                                 weights.arch.pe_frequencies).astype(dt)
        tg = (source.sh_dc[sl].astype(dt), source.opacities[sl].astype(dt), source.sh_rest[sl].astype(dt))
        loss, *_ = loss_and_grads(weights, pe, T[sl], V[sl], tg, loss_weights, want_grads=False)
        total += loss * len(pe)
    return total / max(n, 1)


def distill_fit(source: SourceGaussianSet, config: DistillConfig = DistillConfig(), aabb=None) -> DistillResult:
    """Fit static/view features and field weights so decoding reproduces ``source``.

    Features start at T = sh_dc, V = 0. Minibatch Adam; the full-set loss is
    evaluated every ``eval_every`` steps and the best checkpoint is returned.
    """
    dt = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    aabb = scene_aabb(source.positions) if aabb is None else np.asarray(aabb, dtype=np.float64)
    weights = FieldWeights.init(config.arch, aabb, rng, dtype=dt)
    n = source.count
    T = source.sh_dc.astype(dt).copy()
    V = np.zeros((n, 3), dt)

    def snapshot():
        return [a.copy() for a in weights.arrays()], T.copy(), V.copy()

    if n == 0 or config.iterations <= 0:
        loss0 = full_loss(weights, source, T, V, config.loss_weights) if n else 0.0
        scene = OmgGaussianSet(source.positions, source.log_scales, source.rotations, T, V, weights)
        return DistillResult(scene, [(0, loss0)], 0)

    pe_all = positional_encoding(normalize_positions(source.positions, aabb), config.arch.pe_frequencies).astype(dt)
    targets = (source.sh_dc.astype(dt), source.opacities.astype(dt), source.sh_rest.astype(dt))
    params = weights.arrays()
    opts = [_Adam(a.shape, config.lr_weights, dt) for a in params]
    opt_T = _Adam(T.shape, config.lr_features, dt)
    opt_V = _Adam(V.shape, config.lr_features, dt)

    best_loss = full_loss(weights, source, T, V, config.loss_weights)
    trace = [(0, best_loss)]
    best_it, best = 0, snapshot()
    bs = min(config.batch_size, n)
    perm = rng.permutation(n)
    cursor = 0
    for it in range(1, config.iterations + 1):
        if cursor + bs > n:
            perm = rng.permutation(n)
            cursor = 0
        rows = np.sort(perm[cursor:cursor + bs])
        cursor += bs
        tg = tuple(t[rows] for t in targets)
        loss, grads, dT, dV = loss_and_grads(weights, pe_all[rows], T[rows], V[rows], tg, config.loss_weights)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        for p, g, opt in zip(params, grads, opts):
            opt.step(p, g)
        opt_T.sparse_step(T, rows, dT)
        opt_V.sparse_step(V, rows, dV)
        if it % config.eval_every == 0 or it == config.iterations:
            cur = full_loss(weights, source, T, V, config.loss_weights)
            if not np.isfinite(cur):
                raise TrainingDivergedError(it, cur)
            trace.append((it, cur))
            log.debug("distill it=%d loss=%.6g", it, cur)
            if cur < best_loss:
                best_loss, best_it, best = cur, it, snapshot()

    arrays, T, V = best
    weights = weights.with_arrays(arrays)
    scene = OmgGaussianSet(source.positions, source.log_scales, source.rotations, T, V, weights)
    return DistillResult(scene, trace, best_it)
