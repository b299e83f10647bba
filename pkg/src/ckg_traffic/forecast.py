"""Dual-view attention fusion of context features feeding a diffusion-convolution
GRU encoder-decoder that predicts road speeds ``b`` slots ahead."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import DisconnectedNode, NonFiniteValue, HeadDivisibility, InsufficientData, ShapeMismatch
from .integration import GROUP_LABELS, N_GROUPS, N_SPATIAL, ContextTensor

VARIANTS = ("baseline", "S", "T", "ST")


@dataclass
class ForecastConfig:
    a: int = 12                      # input slots
    b: int = 12                      # output slots
    context_heads: int = 10
    sequence_heads: int = 4
    seq_head_dim: int = 8
    seq_out: int = 16                # context features per node entering the encoder
    epochs: int = 500
    batch_size: int = 16
    lr: float = 1e-3
    milestones: tuple = (150, 250, 350, 450)
    gamma: float = 0.5
    split: tuple = (0.7, 0.1, 0.2)
    hidden: int = 64
    K: int = 2
    teacher_forcing: float = 0.5
    mape_eps: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError("a and b must be >= 1")
        self.milestones = tuple(self.milestones)
        self.split = tuple(self.split)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["split"] = list(self.split)
        return d


# -- attention ----------------------------------------------------------------

@dataclass
class AttentionBlock:
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    W0: Tensor
    heads: int
    causal: bool = False

    @property
    def head_dim(self) -> int:
        return self.Wq.shape[1] // self.heads

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("Wq", "Wk", "Wv", "W0")}


def init_attention(rng: np.random.Generator, d_in: int, heads: int, head_dim: int | None = None,
                   d_out: int | None = None, causal: bool = False) -> AttentionBlock:
    if d_in % heads:
        raise HeadDivisibility(f"model dim {d_in} not divisible by {heads} heads")
    head_dim = head_dim or d_in // heads
    d_out = d_out or d_in
    inner = heads * head_dim
    return AttentionBlock(*(E.parameter(E.glorot(rng, s)) for s in
                            [(d_in, inner), (d_in, inner), (d_in, inner), (inner, d_out)]),
                          heads=heads, causal=causal)


def causal_mask(n: int) -> np.ndarray:
    """True strictly above the diagonal: position i may attend to j <= i only."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, dim = x.shape
    x = E.reshape(x, tuple(lead) + (n, heads, dim // heads))
    nl = len(lead)
    return E.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nl = len(lead)
    x = E.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))
    return E.reshape(x, tuple(lead) + (n, h * dh))


def project_qkv(X, block: AttentionBlock) -> tuple[Tensor, Tensor, Tensor]:
    X = E.as_tensor(X)
    if X.shape[-1] % block.heads:
        raise HeadDivisibility(f"model dim {X.shape[-1]} not divisible by {block.heads} heads")
    if X.shape[-1] != block.Wq.shape[0]:
        raise ShapeMismatch(f"token dim {X.shape[-1]} != block input {block.Wq.shape[0]}")
    return X @ block.Wq, X @ block.Wk, X @ block.Wv


def attend(Q: Tensor, K: Tensor, V: Tensor, block: AttentionBlock,
           causal: bool | None = None) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention on projected tokens (..., n, H*dh).

    Returns the output projection and the per-head weights (..., H, n, n).
    """
    causal = block.causal if causal is None else causal
    q, k, v = (_split_heads(t, block.heads) for t in (Q, K, V))
    n = Q.shape[-2]
    scores = (q @ E.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) \
        * (1.0 / math.sqrt(block.head_dim))
    A = E.softmax(scores, axis=-1, mask=causal_mask(n) if causal else None)
    out = _merge_heads(A @ v) @ block.W0
    return out, A.data


def mhsa(X, block: AttentionBlock, causal: bool | None = None) -> tuple[Tensor, np.ndarray]:
    """Multi-head self-attention over the token axis (-2) of ``X``."""
    return attend(*project_qkv(X, block), block, causal)


def context_view(tokens, block: AttentionBlock) -> tuple[Tensor, np.ndarray]:
    """Unmasked attention over the group tokens of each cell.

    ``tokens`` is (..., 17, d); returns the flattened (..., 17*d) fusion and
    the head-averaged weights (..., 17, 17).
    """
    out, A = mhsa(tokens, block, causal=False)
    *lead, g, d = out.shape
    return E.reshape(out, tuple(lead) + (g * d,)), A.mean(axis=-3)


def sequence_view(seq, block: AttentionBlock) -> tuple[Tensor, np.ndarray]:
    """Causally masked attention over time (..., a, D); weights (..., a, a)."""
    out, A = mhsa(seq, block, causal=True)
    return out, A.mean(axis=-3)


# -- diffusion convolution ----------------------------------------------------

def transition_matrices(W: np.ndarray, strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Forward D_O^-1 W and backward D_I^-1 W^T random-walk matrices.

    Roads without any edge get a self-loop unless ``strict``.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeMismatch("adjacency must be square")
    iso = (W.sum(axis=1) == 0) & (W.sum(axis=0) == 0)
    if iso.any():
        if strict:
            raise DisconnectedNode(f"roads without edges: {np.flatnonzero(iso)[:5].tolist()}")
        W = W + np.diag(iso.astype(np.float64))
    out_deg = W.sum(axis=1, keepdims=True)
    in_deg = W.sum(axis=0)[:, None]
    fwd = np.divide(W, out_deg, out=np.zeros_like(W), where=out_deg > 0)
    bwd = np.divide(W.T, in_deg, out=np.zeros_like(W), where=in_deg > 0)
    return fwd, bwd


def diffusion_supports(W: np.ndarray, K: int) -> list[np.ndarray]:
    """[P_f, P_f^2, ..., P_b, P_b^2, ...] up to order K (identity excluded).

    On a symmetric road graph the backward walk equals the forward one; the
    duplicate powers are dropped since their weights would only add up.
    """
    fwd, bwd = transition_matrices(W)
    out = []
    for P in ((fwd,) if np.array_equal(fwd, bwd) else (fwd, bwd)):
        M = np.eye(len(W))
        for _ in range(K):
            M = M @ P
            out.append(M)
    return out


def diffusion_conv(X, W: np.ndarray, K: int, theta) -> Tensor:
    """sum_k (P_f^k X) theta[k,0] + (P_b^k X) theta[k,1] for node features X.

    ``X`` is (..., N, F); ``theta`` is (K+1, 2, F, F_out).
    """
    X = E.as_tensor(X)
    theta = E.as_tensor(theta)
    if K < 0:
        raise ValueError("K must be >= 0")
    if theta.shape[:2] != (K + 1, 2) or theta.shape[2] != X.shape[-1]:
        raise ShapeMismatch(f"theta shape {theta.shape} does not fit K={K}, F={X.shape[-1]}")
    fwd, bwd = transition_matrices(W)
    total = None
    for d, P in enumerate((fwd, bwd)):
        Xk = X
        for k in range(K + 1):
            if k:
                Xk = E.matmul(Tensor(P), Xk)
            term = Xk @ theta[k, d]
            total = term if total is None else total + term
    return total


def _node_matmul(S: np.ndarray, X: Tensor) -> Tensor:
    """S @ X over the leading node axis of a (N, ..., F) tensor, as one GEMM."""
    shape = X.shape
    return E.reshape(E.matmul(Tensor(S), E.reshape(X, (shape[0], -1))), shape)


def _feature_matmul(X: Tensor, W: Tensor) -> Tensor:
    shape = X.shape
    return E.reshape(E.reshape(X, (-1, shape[-1])) @ W, shape[:-1] + (W.shape[-1],))


def diffuse_features(X: Tensor, supports: list[np.ndarray]) -> Tensor:
    """Concatenate node-first X (N, ..., F) with every support applied to it."""
    return E.concat([X] + [_node_matmul(S, X) for S in supports], axis=-1)


def init_dcgru(rng: np.random.Generator, n_in: int, hidden: int, n_supports: int) -> dict[str, Tensor]:
    f = (1 + n_supports) * (n_in + hidden)
    return {"Wg": E.parameter(E.glorot(rng, (f, 2 * hidden))),
            "bg": E.parameter(np.ones(2 * hidden)),
            "Wc": E.parameter(E.glorot(rng, (f, hidden))),
            "bc": E.parameter(np.zeros(hidden))}


def dcgru_cell(x, h, supports: list[np.ndarray], p: Mapping[str, Tensor]) -> Tensor:
    """One diffusion-convolution GRU step; ``x`` and ``h`` are node-first,
    (N, F) or (N, B, F)."""
    x, h = E.as_tensor(x), E.as_tensor(h)
    hidden = h.shape[-1]
    n_feat = (1 + len(supports)) * (x.shape[-1] + hidden)
    if x.shape[:-1] != h.shape[:-1] or p["Wg"].shape != (n_feat, 2 * hidden) \
            or p["Wc"].shape != (n_feat, hidden):
        raise ShapeMismatch(f"dcgru dims: x {x.shape}, h {h.shape}, Wg {p['Wg'].shape}")
    g = E.sigmoid(_feature_matmul(diffuse_features(E.concat([x, h], axis=-1), supports), p["Wg"]) + p["bg"])
    r, u = g[..., :hidden], g[..., hidden:]
    c = E.tanh(_feature_matmul(diffuse_features(E.concat([x, r * h], axis=-1), supports), p["Wc"]) + p["bc"])
    return u * h + (1.0 - u) * c


# -- model --------------------------------------------------------------------

@dataclass
class ForecastModel:
    cfg: ForecastConfig
    variant: str
    n_roads: int
    ctx_dim: int
    params: dict[str, Tensor]
    ctx_block: AttentionBlock | None
    seq_block: AttentionBlock | None
    supports: list[np.ndarray]
    speed_mean: np.ndarray
    speed_std: np.ndarray
    ctx_mean: np.ndarray | None = None
    ctx_std: np.ndarray | None = None
    heatmaps: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def uses_context(self) -> bool:
        return self.variant != "baseline"

    def group_keep(self) -> np.ndarray:
        keep = np.ones(N_GROUPS)
        if self.variant == "S":
            keep[N_SPATIAL:] = 0.0
        elif self.variant == "T":
            keep[:N_SPATIAL] = 0.0
        return keep

    def save(self, path: str | Path) -> None:
        arrays = {k: p.data for k, p in self.params.items()}
        arrays["norm.speed_mean"] = self.speed_mean
        arrays["norm.speed_std"] = self.speed_std
        if self.ctx_mean is not None:
            arrays["norm.ctx_mean"] = self.ctx_mean
            arrays["norm.ctx_std"] = self.ctx_std
        E.save_params(path, arrays, meta={"variant": self.variant, "n_roads": self.n_roads,
                                          "ctx_dim": self.ctx_dim, "config": self.cfg.to_dict()})


def build_model(cfg: ForecastConfig, variant: str, adjacency: np.ndarray, ctx_dim: int,
                speed_mean: np.ndarray, speed_std: np.ndarray, rng: np.random.Generator) -> ForecastModel:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    supports = diffusion_supports(adjacency, cfg.K)
    params: dict[str, Tensor] = {}
    ctx_block = seq_block = None
    if variant != "baseline":
        ctx_block = init_attention(rng, ctx_dim, cfg.context_heads)
        seq_block = init_attention(rng, N_GROUPS * ctx_dim, cfg.sequence_heads, cfg.seq_head_dim,
                                   cfg.seq_out, causal=True)
        params.update(ctx_block.params("ctx"))
        params.update(seq_block.params("seq"))
    for k, v in init_dcgru(rng, 1 + cfg.seq_out, cfg.hidden, len(supports)).items():
        params[f"enc.{k}"] = v
    for k, v in init_dcgru(rng, 1, cfg.hidden, len(supports)).items():
        params[f"dec.{k}"] = v
    params["out.W"] = E.parameter(E.glorot(rng, (cfg.hidden, 1)))
    params["out.b"] = E.parameter(np.zeros(1))
    return ForecastModel(cfg, variant, len(adjacency), ctx_dim, params, ctx_block, seq_block, supports,
                         np.asarray(speed_mean, float), np.asarray(speed_std, float))


def _sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def context_features(model: ForecastModel, ctx_cells: np.ndarray, windows: np.ndarray,
                     record: dict | None = None) -> Tensor:
    """Fused context per (input slot, road, sample): (a, N, B, seq_out).

    ``ctx_cells`` holds the standardised tokens of the unique slots,
    (U, N, 17, d); ``windows`` (B, a) indexes into its first axis.
    """
    if model.variant == "S":
        # temporal groups are masked, so every slot carries the same tokens
        ctx_cells, windows = ctx_cells[:1], np.zeros_like(windows)
    tokens = Tensor(ctx_cells * model.group_keep()[:, None])
    fused, A_ctx = context_view(tokens, model.ctx_block)              # (U, N, 17d)
    Q, K, V = project_qkv(fused, model.seq_block)                      # (U, N, H*dh)
    Q, K, V = (E.transpose(E.take(t, windows, axis=0), (0, 2, 1, 3)) for t in (Q, K, V))   # (B, N, a, .)
    out, A_seq = attend(Q, K, V, model.seq_block, causal=True)
    if record is not None:
        record["ctx"] = record.get("ctx", 0.0) + A_ctx.sum(axis=(0, 1))
        record["ctx_n"] = record.get("ctx_n", 0) + A_ctx.shape[0] * A_ctx.shape[1]
        seq = A_seq.mean(axis=2)
        record["seq"] = record.get("seq", 0.0) + seq.sum(axis=(0, 1))
        record["seq_n"] = record.get("seq_n", 0) + seq.shape[0] * seq.shape[1]
    return E.transpose(out, (2, 1, 0, 3))


def forward(model: ForecastModel, x_speed: np.ndarray, ctx_feat: Tensor | None,
            y_true: np.ndarray | None = None, tf_mask: np.ndarray | None = None) -> Tensor:
    """Encoder-decoder pass on z-scored speeds.

    ``x_speed`` is (B, a, N) and ``ctx_feat`` (a, N, B, seq_out); returns
    predictions (B, b, N). Decoder step j is fed the true value of step j-1
    where ``tf_mask[j]`` is set.
    """
    cfg = model.cfg
    B, a, N = x_speed.shape
    enc, dec = _sub(model.params, "enc"), _sub(model.params, "dec")
    xs_all = np.transpose(x_speed, (1, 2, 0))[..., None]           # (a, N, B, 1)
    h = Tensor(np.zeros((N, B, cfg.hidden)))
    zeros_ctx = Tensor(np.zeros((N, B, cfg.seq_out)))
    for t in range(a):
        feat = ctx_feat[t] if ctx_feat is not None else zeros_ctx
        h = dcgru_cell(E.concat([Tensor(xs_all[t]), feat], axis=-1), h, model.supports, enc)
    yt = None if y_true is None else np.transpose(y_true, (1, 2, 0))[..., None]
    prev: Tensor = Tensor(xs_all[-1])
    outs = []
    for j in range(cfg.b):
        if j and tf_mask is not None and tf_mask[j] and yt is not None:
            prev = Tensor(yt[j - 1])
        h = dcgru_cell(prev, h, model.supports, dec)
        y = _feature_matmul(h, model.params["out.W"]) + model.params["out.b"]
        outs.append(y)
        prev = y
    return E.transpose(E.concat(outs, axis=-1), (1, 2, 0))


# -- metrics ------------------------------------------------------------------

def mae(pred, true) -> float:
    p, t = np.asarray(pred, float), np.asarray(true, float)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs true {t.shape}")
    return float(np.mean(np.abs(p - t)))


def mape(pred, true, eps: float = 1.0) -> float:
    """Percent error over cells whose true value is at least ``eps``."""
    p, t = np.asarray(pred, float), np.asarray(true, float)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs true {t.shape}")
    keep = t >= eps
    if not keep.any():
        return float("nan")
    return float(np.mean(np.abs(p[keep] - t[keep]) / t[keep]) * 100.0)


def horizon_metrics(pred: np.ndarray, true: np.ndarray, slot_minutes: int = 10, eps: float = 1.0) -> list[dict]:
    """Per-horizon rows for (samples, b, roads) arrays plus an ``avg`` row."""
    rows = [{"horizon_min": (j + 1) * slot_minutes, "MAE": mae(pred[:, j], true[:, j]),
             "MAPE": mape(pred[:, j], true[:, j], eps)} for j in range(pred.shape[1])]
    rows.append({"horizon_min": "avg", "MAE": mae(pred, true), "MAPE": mape(pred, true, eps)})
    return rows


METRIC_COLUMNS = ["model", "horizon_min", "MAE", "MAPE", "seed"]


def write_metrics_csv(path: str | Path | None, rows: list[dict]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else str(r[c])
                              for c in METRIC_COLUMNS))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# -- data ---------------------------------------------------------------------

@dataclass
class Splits:
    train: np.ndarray      # sample start slots
    val: np.ndarray
    test: np.ndarray
    n_train_slots: int


def make_splits(n_slots: int, cfg: ForecastConfig) -> Splits:
    """Chronological slot split; a sample (a inputs, b targets) stays inside one part."""
    fr = np.asarray(cfg.split, float)
    if fr.shape != (3,) or np.any(fr <= 0):
        raise ValueError("split needs three positive fractions")
    cuts = np.floor(np.cumsum(fr / fr.sum()) * n_slots).astype(int)
    bounds = [0, cuts[0], cuts[1], n_slots]
    w = cfg.a + cfg.b
    parts = [np.arange(bounds[i], bounds[i + 1] - w + 1) for i in range(3)]
    if any(len(p) == 0 for p in parts):
        raise InsufficientData(f"{n_slots} slots cannot hold a {w}-slot window in every split part")
    return Splits(*parts, n_train_slots=int(bounds[1]))


def _context_stats(ctx: ContextTensor, train_slots: int) -> tuple[np.ndarray, np.ndarray]:
    sp_m, sp_s = ctx.spatial.mean(axis=0), ctx.spatial.std(axis=0)
    tm = ctx.temporal[:train_slots]
    tm_m, tm_s = tm.mean(axis=(0, 1)), tm.std(axis=(0, 1))
    m = np.concatenate([sp_m, tm_m], axis=0)
    s = np.concatenate([sp_s, tm_s], axis=0)
    return m, np.where(s > 1e-8, s, 1.0)


class _Data:
    def __init__(self, model: ForecastModel, speed: np.ndarray, ctx: ContextTensor | None):
        self.model = model
        self.speed = speed
        self.z = (speed - model.speed_mean) / model.speed_std
        self.ctx = ctx

    def batch(self, starts: np.ndarray, record: dict | None = None):
        cfg = self.model.cfg
        a, b = cfg.a, cfg.b
        x = self.z[starts[:, None] + np.arange(a)]                 # (B, a, N)
        y = self.z[starts[:, None] + a + np.arange(b)]             # (B, b, N)
        feat = None
        if self.model.uses_context:
            lo, hi = starts.min(), starts.max() + a
            cells = (self.ctx.at(np.arange(lo, hi)) - self.model.ctx_mean) / self.model.ctx_std
            windows = (starts - lo)[:, None] + np.arange(a)
            feat = context_features(self.model, cells, windows, record)
        return x, y, feat


def _chunks(starts: np.ndarray, size: int) -> list[np.ndarray]:
    return [starts[i:i + size] for i in range(0, len(starts), size)]


def predict(model: ForecastModel, speed: np.ndarray, ctx: ContextTensor | None, starts: np.ndarray,
            batch_size: int = 64, record: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(pred, true) in km/h with shape (samples, b, roads)."""
    data = _Data(model, speed, ctx)
    preds, trues = [], []
    with E.no_grad():
        for s in _chunks(np.asarray(starts), batch_size):
            x, y, feat = data.batch(s, record)
            preds.append(forward(model, x, feat).data)
            trues.append(y)
    p = np.concatenate(preds) * model.speed_std + model.speed_mean
    t = np.concatenate(trues) * model.speed_std + model.speed_mean
    return p, t


@dataclass
class ForecastResult:
    model: ForecastModel
    metrics: list[dict]
    val_history: list[float]
    train_history: list[float]
    best_epoch: int
    seconds: float


def train_forecaster(speed: np.ndarray, adjacency: np.ndarray, context: ContextTensor | None = None,
                     cfg: ForecastConfig | None = None, variant: str = "ST",
                     log=None) -> ForecastResult:
    """Fit on the training part, keep the parameters with the best validation
    MAE (the untrained model counts as epoch 0), and score the test part."""
    cfg = cfg or ForecastConfig()
    t0 = time.perf_counter()
    speed = np.asarray(speed, dtype=np.float64)
    if speed.ndim != 2 or speed.shape[1] != len(adjacency):
        raise ShapeMismatch(f"speed {speed.shape} vs adjacency {np.shape(adjacency)}")
    if not np.all(np.isfinite(speed)) or np.any(speed <= 0):
        raise ValueError("speeds must be positive and finite")
    if variant != "baseline":
        if context is None:
            raise ValueError(f"variant {variant} needs a context tensor")
        if context.n_slots != speed.shape[0] or context.n_roads != speed.shape[1]:
            raise ShapeMismatch("context tensor does not match the speed matrix")
    splits = make_splits(speed.shape[0], cfg)
    rng = np.random.default_rng(cfg.seed)
    tr = speed[:splits.n_train_slots]
    sd = tr.std(axis=0)
    model = build_model(cfg, variant, adjacency, context.dim if context is not None else 0,
                        tr.mean(axis=0), np.where(sd > 1e-8, sd, 1.0), rng)
    if model.uses_context:
        model.ctx_mean, model.ctx_std = _context_stats(context, splits.n_train_slots)
    data = _Data(model, speed, context)
    opt = E.Adam(model.params, lr=cfg.lr)

    def val_mae() -> float:
        p, t = predict(model, speed, context, splits.val)
        return mae(p, t)

    best = val_mae()
    best_params = {k: p.data.copy() for k, p in model.params.items()}
    best_epoch = 0
    val_hist, train_hist = [best], []
    batches = _chunks(splits.train, cfg.batch_size)
    # per-op finiteness checks are costly on the attention tensors; the loss is checked instead
    prev_check = E.set_check_finite(False)
    try:
        for epoch in range(cfg.epochs):
            opt.lr = E.multistep_lr(cfg.lr, epoch, cfg.milestones, cfg.gamma)
            order = rng.permutation(len(batches))
            total = 0.0
            for bi in order:
                s = batches[bi]
                tf = rng.random(cfg.b) < cfg.teacher_forcing
                opt.zero_grad()
                x, y, feat = data.batch(s)
                pred = forward(model, x, feat, y, tf)
                loss = E.mean(E.abs_(pred - y))
                if not np.isfinite(loss.item()):
                    raise NonFiniteValue(f"{variant} loss diverged at epoch {epoch + 1}")
                loss.backward()
                opt.step()
                total += loss.item() * len(s)
            train_hist.append(total / len(splits.train))
            v = val_mae()
            val_hist.append(v)
            if v < best:
                best, best_epoch = v, epoch + 1
                best_params = {k: p.data.copy() for k, p in model.params.items()}
            if log is not None:
                log(f"{variant} epoch {epoch + 1}: train {train_hist[-1]:.4f} val MAE {v:.4f}")
    finally:
        E.set_check_finite(prev_check)
    for k, p in model.params.items():
        p.data = best_params[k]
    record: dict | None = {} if model.uses_context else None
    p, t = predict(model, speed, context, splits.test, record=record)
    if record:
        model.heatmaps = {"context": record["ctx"] / record["ctx_n"], "sequence": record["seq"] / record["seq_n"]}
    metrics = horizon_metrics(p, t, eps=cfg.mape_eps)
    return ForecastResult(model, metrics, val_hist, train_hist, best_epoch, time.perf_counter() - t0)


def export_heatmaps(model: ForecastModel, out_dir: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Test-averaged context (17x17) and sequence (a x a) attention weights,
    optionally written as CSV grids with group labels on the context grid."""
    if not model.heatmaps:
        raise ValueError("model has no recorded attention (baseline or not evaluated)")
    ctx, seq = model.heatmaps["context"], model.heatmaps["sequence"]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "heatmap_context.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group"] + list(GROUP_LABELS))
            for lab, row in zip(GROUP_LABELS, ctx):
                w.writerow([lab] + [repr(float(v)) for v in row])
        with open(out / "heatmap_sequence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot"] + [f"t{j}" for j in range(seq.shape[1])])
            for i, row in enumerate(seq):
                w.writerow([f"t{i}"] + [repr(float(v)) for v in row])
    return ctx, seq
