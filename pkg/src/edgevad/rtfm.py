"""Anomaly head: multi-scale temporal encoder, snippet scorer, and the
top-k feature-magnitude training objective.

The encoder concatenates a pyramid of dilated temporal convolutions
(dilations 1/2/4, kernel 3) with a temporal self-attention branch and projects
to the working feature width. Scoring is a three-layer MLP with 70% inverted
dropout on the final hidden layer and a sigmoid squash. Training follows the
magnitude-separability idea: hinge on the top-k mean feature magnitudes of
abnormal-vs-normal videos, plus BCE on the scores of the top-k-magnitude
snippets (label 1 abnormal, 0 normal). Only this head trains; the extractor
stays frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Var

BCE_EPS = 1e-7


@dataclass(frozen=True)
class MstnConfig:
    in_dim: int = 32
    branch_channels: int = 8
    dilations: Tuple[int, ...] = (1, 2, 4)
    kernel: int = 3
    use_tsa: bool = True
    fuse_kernel: int = 1
    out_dim: int = 16

    @property
    def concat_dim(self) -> int:
        return self.branch_channels * (len(self.dilations) + (1 if self.use_tsa else 0))


@dataclass(frozen=True)
class HeadConfig:
    hidden: Tuple[int, int] = (16, 8)
    dropout: float = 0.7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.005
    batch_size: int = 16
    epochs: int = 200
    k: int = 3
    margin: float = 100.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("learning_rate", "weight_decay", "batch_size", "epochs", "k", "margin"):
            if getattr(self, name) < 0 or (name in ("batch_size", "epochs", "k") and getattr(self, name) < 1):
                raise ValueError(f"TrainConfig.{name} must be positive")


def full_scale_mstn_config() -> MstnConfig:
    """Accounting-scale encoder mirroring the deployed 2048-D head."""
    return MstnConfig(in_dim=2048, branch_channels=512, fuse_kernel=3, out_dim=2048)


def full_scale_head_config() -> HeadConfig:
    return HeadConfig(hidden=(512, 128))


def init_params(mstn: MstnConfig, head: HeadConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    """He-style conv inits, zero biases, zero attention output projection."""
    rng = np.random.default_rng(seed)
    p: Dict[str, np.ndarray] = {}
    c, d, k = mstn.branch_channels, mstn.in_dim, mstn.kernel
    for i, _ in enumerate(mstn.dilations):
        p[f"pdc{i}_w"] = rng.normal(scale=np.sqrt(2.0 / (d * k)), size=(c, d, k))
        p[f"pdc{i}_b"] = np.zeros(c)
    if mstn.use_tsa:
        ci = max(1, c // 2)
        p["tsa_proj_w"] = rng.normal(scale=np.sqrt(2.0 / d), size=(c, d, 1))
        p["tsa_q"] = rng.normal(scale=np.sqrt(1.0 / c), size=(c, ci))
        p["tsa_k"] = rng.normal(scale=np.sqrt(1.0 / c), size=(c, ci))
        p["tsa_g"] = rng.normal(scale=np.sqrt(1.0 / c), size=(c, ci))
        p["tsa_o"] = np.zeros((ci, c))
    p["fuse_w"] = rng.normal(
        scale=np.sqrt(2.0 / (mstn.concat_dim * mstn.fuse_kernel)),
        size=(mstn.out_dim, mstn.concat_dim, mstn.fuse_kernel),
    )
    p["fuse_b"] = np.zeros(mstn.out_dim)
    h1, h2 = head.hidden
    p["fc1_w"] = rng.normal(scale=np.sqrt(1.0 / mstn.out_dim), size=(mstn.out_dim, h1))
    p["fc1_b"] = np.zeros(h1)
    p["fc2_w"] = rng.normal(scale=np.sqrt(1.0 / h1), size=(h1, h2))
    p["fc2_b"] = np.zeros(h2)
    p["fc3_w"] = rng.normal(scale=np.sqrt(1.0 / h2), size=(h2, 1))
    p["fc3_b"] = np.zeros(1)
    return p


@dataclass
class RtfmModel:
    mstn: MstnConfig = field(default_factory=MstnConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    params: Dict[str, np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.mstn, self.head, self.seed)

    def param_vars(self) -> Dict[str, Var]:
        return {k: Var(v) for k, v in self.params.items()}


# ---------------------------------------------------------------------------
# forward pieces (autodiff Vars; pass plain arrays for inference)
# ---------------------------------------------------------------------------

def mstn_forward_var(pv: Dict[str, Var], cfg: MstnConfig, feats) -> Var:
    """[T, D] snippet features -> [T, out_dim] temporal features."""
    x = ad.as_var(feats)
    if x.value.ndim != 2 or x.value.shape[1] != cfg.in_dim:
        raise ValueError(f"expected [T,{cfg.in_dim}] features, got {x.value.shape}")
    branches: List[Var] = []
    for i, dil in enumerate(cfg.dilations):
        h = ad.conv1d_same(x, pv[f"pdc{i}_w"], pv[f"pdc{i}_b"], dilation=dil)
        branches.append(ad.relu(h))
    if cfg.use_tsa:
        h = ad.conv1d_same(x, pv["tsa_proj_w"], None, dilation=1)
        q = ad.matmul(h, pv["tsa_q"])
        k = ad.matmul(h, pv["tsa_k"])
        g = ad.matmul(h, pv["tsa_g"])
        ci = q.value.shape[1]
        logits = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(ci))
        attn = ad.softmax(logits, axis=-1)
        branches.append(ad.add(h, ad.matmul(ad.matmul(attn, g), pv["tsa_o"])))
    cat = ad.concat(branches, axis=1)
    return ad.conv1d_same(cat, pv["fuse_w"], pv["fuse_b"], dilation=1)


def snippet_logits_var(pv: Dict[str, Var], cfg: HeadConfig, x: Var,
                       mask: Optional[np.ndarray] = None) -> Var:
    """Pre-squash per-snippet logits [T,1]; mask applies inverted dropout."""
    h = ad.relu(ad.add(ad.matmul(x, pv["fc1_w"]), pv["fc1_b"]))
    h = ad.relu(ad.add(ad.matmul(h, pv["fc2_w"]), pv["fc2_b"]))
    if mask is not None:
        h = ad.mul(h, mask)
    return ad.add(ad.matmul(h, pv["fc3_w"]), pv["fc3_b"])


def dropout_mask(rng: np.random.Generator, shape, p_drop: float) -> np.ndarray:
    keep = 1.0 - p_drop
    return (rng.random(shape) < keep).astype(np.float64) / keep


def mstn_forward(model: RtfmModel, feats: np.ndarray) -> np.ndarray:
    return mstn_forward_var(model.param_vars(), model.mstn, feats).value


def snippet_scores(model: RtfmModel, x, mode: str = "infer",
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Per-snippet scores in [0,1] from temporal features [T, out_dim]."""
    pv = model.param_vars()
    xv = ad.as_var(np.asarray(x, dtype=np.float64))
    mask = None
    if mode == "train":
        rng = rng or np.random.default_rng(0)
        mask = dropout_mask(rng, (xv.value.shape[0], model.head.hidden[1]), model.head.dropout)
    elif mode != "infer":
        raise ValueError(f"unknown mode {mode!r}")
    logits = snippet_logits_var(pv, model.head, xv, mask)
    return ad.sigmoid(logits).value[:, 0]


def snippet_logits(model: RtfmModel, x, mask: Optional[np.ndarray] = None) -> np.ndarray:
    return snippet_logits_var(model.param_vars(), model.head, ad.as_var(np.asarray(x, np.float64)), mask).value[:, 0]


def topk_magnitude(x: np.ndarray, k: int) -> Tuple[float, List[int]]:
    """Mean of the k largest row magnitudes; ties break to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    if not 1 <= k <= t:
        raise ValueError(f"k={k} out of range [1, {t}]")
    mags = np.sqrt((x ** 2).sum(axis=1))
    idx = np.argsort(-mags, kind="stable")[:k]
    return float(mags[idx].mean()), [int(i) for i in idx]


def _topk_indices(mags: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-mags, kind="stable")[:k]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def rtfm_loss(
    model: RtfmModel,
    normal_batch: Sequence[np.ndarray],
    abnormal_batch: Sequence[np.ndarray],
    cfg: TrainConfig,
    dropout_rng: Optional[np.random.Generator] = None,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
    compute_grads: bool = True,
) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
    """Margin + BCE objective over paired normal/abnormal feature videos.

    Returns (loss, gradients, parts). Dropout masks apply to the concatenated
    [normal..., abnormal...] video list; pass `masks` for deterministic replay.
    """
    if len(normal_batch) == 0 or len(abnormal_batch) == 0:
        raise ValueError("both normal and abnormal batches must be nonempty")
    pv = {k: Var(v) for k, v in model.params.items()}
    videos = list(normal_batch) + list(abnormal_batch)
    labels = [0] * len(normal_batch) + [1] * len(abnormal_batch)
    if masks is None and dropout_rng is not None:
        masks = [
            dropout_mask(dropout_rng, (np.asarray(v).shape[0], model.head.hidden[1]), model.head.dropout)
            for v in videos
        ]

    topk_means: List[Var] = []
    bce_terms: List[Var] = []
    for i, (feats, label) in enumerate(zip(videos, labels)):
        feats = np.asarray(feats, dtype=np.float64)
        if cfg.k > feats.shape[0]:
            raise ValueError(f"k={cfg.k} exceeds snippet count {feats.shape[0]}")
        x = mstn_forward_var(pv, model.mstn, feats)
        mags = ad.l2_rows(x)
        idx = _topk_indices(mags.value, cfg.k)
        topk_means.append(ad.mean(ad.gather_rows(mags, idx)))
        logits = snippet_logits_var(pv, model.head, x, masks[i] if masks else None)
        scores = ad.sigmoid(logits)
        video_score_var = ad.mean(ad.gather_rows(scores, idx))
        sclip = ad.clip(video_score_var, BCE_EPS, 1.0 - BCE_EPS)
        bce = -ad.log(sclip) if label == 1 else -ad.log(ad.add(ad.mul(sclip, -1.0), 1.0))
        bce_terms.append(bce)

    n_pairs = min(len(normal_batch), len(abnormal_batch))
    hinges = []
    for j in range(n_pairs):
        mn = topk_means[j]
        ma = topk_means[len(normal_batch) + j]
        hinges.append(ad.relu(ad.add(ad.sub(mn, ma), cfg.margin)))
    margin_term = ad.mul(_sum_vars(hinges), 1.0 / n_pairs)
    bce_term = ad.mul(_sum_vars(bce_terms), 1.0 / len(bce_terms))
    loss = ad.add(margin_term, bce_term)
    grads: Dict[str, np.ndarray] = {}
    if compute_grads:
        loss.backward()
        grads = {k: v.grad if v.grad is not None else np.zeros_like(v.value) for k, v in pv.items()}
    parts = {"margin": float(margin_term.value), "bce": float(bce_term.value)}
    return float(loss.value), grads, parts


def _sum_vars(vs: Sequence[Var]) -> Var:
    acc = vs[0]
    for v in vs[1:]:
        acc = ad.add(acc, v)
    return acc


# ---------------------------------------------------------------------------
# inference-side scoring
# ---------------------------------------------------------------------------

def video_score(feats, model: RtfmModel) -> np.ndarray:
    """Per-snippet scores in [0,1]; a leading crop axis is averaged away."""
    arr = feats.data.data if hasattr(feats, "data") and hasattr(feats.data, "data") else np.asarray(feats)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        x = mstn_forward(model, arr)
        return snippet_scores(model, x, mode="infer")
    if arr.ndim != 3:
        raise ValueError(f"expected [T,D] or [crops,T,D], got {arr.shape}")
    per_crop = [snippet_scores(model, mstn_forward(model, arr[c]), mode="infer") for c in range(arr.shape[0])]
    return np.mean(per_crop, axis=0)


def video_anomaly_score(feats, model: RtfmModel, k: int = 3) -> float:
    """Video-level score: mean snippet score over the top-k magnitude snippets."""
    arr = feats.data.data if hasattr(feats, "data") and hasattr(feats.data, "data") else np.asarray(feats)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    xs = [mstn_forward(model, arr[c]) for c in range(arr.shape[0])]
    mags = np.mean([np.sqrt((x ** 2).sum(axis=1)) for x in xs], axis=0)
    scores = np.mean([snippet_scores(model, x, mode="infer") for x in xs], axis=0)
    idx = _topk_indices(mags, min(k, len(mags)))
    return float(scores[idx].mean())


# ---------------------------------------------------------------------------
# training + synthetic data
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: RtfmModel
    epoch_losses: List[float]
    config: TrainConfig

    def loss_curve_csv(self) -> str:
        lines = ["epoch,loss"]
        lines += [f"{i},{l:.6f}" for i, l in enumerate(self.epoch_losses)]
        return "\n".join(lines) + "\n"


def train(
    dataset: Sequence[Tuple[np.ndarray, int]],
    cfg: TrainConfig,
    mstn: Optional[MstnConfig] = None,
    head: Optional[HeadConfig] = None,
    on_epoch=None,
) -> TrainResult:
    """Seed-deterministic Adam training on labeled feature videos (label 1 = abnormal)."""
    cfg.validate()
    normals = [np.asarray(f, dtype=np.float64) for f, y in dataset if y == 0]
    abnormals = [np.asarray(f, dtype=np.float64) for f, y in dataset if y == 1]
    if not normals or not abnormals:
        raise ValueError("dataset must contain both normal and abnormal videos")
    mstn = mstn or MstnConfig(in_dim=normals[0].shape[1])
    head = head or HeadConfig()
    model = RtfmModel(mstn=mstn, head=head, seed=cfg.seed)
    opt = Adam(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    losses: List[float] = []
    for epoch in range(cfg.epochs):
        order_n = rng.permutation(len(normals))
        order_a = rng.permutation(len(abnormals))
        steps = max(1, min(len(normals), len(abnormals)) // cfg.batch_size)
        epoch_loss = 0.0
        for s in range(steps):
            take = lambda pool, order, off: [pool[order[(off + i) % len(order)]] for i in range(cfg.batch_size)]
            nb = take(normals, order_n, s * cfg.batch_size)
            ab = take(abnormals, order_a, s * cfg.batch_size)
            loss, grads, _ = rtfm_loss(model, nb, ab, cfg, dropout_rng=rng)
            opt.step(model.params, grads)
            epoch_loss += loss
        losses.append(epoch_loss / steps)
        if on_epoch is not None and on_epoch(epoch, losses[-1], model):
            break
    return TrainResult(model=model, epoch_losses=losses, config=cfg)


def make_magnitude_dataset(
    n_normal: int = 20,
    n_abnormal: int = 20,
    snippets: int = 32,
    dim: int = 32,
    scale: float = 3.0,
    anomaly_rows: int = 8,
    seed: int = 0,
):
    """Synthetic planted-magnitude videos: abnormal rows are `scale`x larger.

    Returns (dataset, planted) where planted[i] is the row-index array for
    abnormal videos and None for normal ones; those labels are the oracle.
    """
    rng = np.random.default_rng(seed)
    dataset, planted = [], []
    for _ in range(n_normal):
        dataset.append((rng.normal(size=(snippets, dim)), 0))
        planted.append(None)
    for _ in range(n_abnormal):
        f = rng.normal(size=(snippets, dim))
        start = int(rng.integers(0, snippets - anomaly_rows + 1))
        rows = np.arange(start, start + anomaly_rows)
        f[rows] *= scale
        dataset.append((f, 1))
        planted.append(rows)
    return dataset, planted


def training_auc(result_model: RtfmModel, dataset, k: int = 3) -> float:
    """Video-level ROC-AUC of top-k scores against the dataset labels."""
    from .metrics import roc_auc

    scores = [video_anomaly_score(f, result_model, k=k) for f, _ in dataset]
    labels = [y for _, y in dataset]
    return roc_auc(scores, labels)


def head_graph(mstn: Optional[MstnConfig] = None, head: Optional[HeadConfig] = None,
               snippets: int = 32, seed: int = 0):
    """Compute-graph form of the head (channels-first [D,T] input).

    Parameter shapes mirror the trainable model exactly, so parameter and FLOP
    accounting agree with what training updates.
    """
    from .graphopt import GraphBuilder
    from .tensor import Tensor

    mstn = mstn or MstnConfig()
    head = head or HeadConfig()
    values = init_params(mstn, head, seed=seed)
    b = GraphBuilder(f"head-d{mstn.in_dim}")
    x = b.input((mstn.in_dim, snippets), name="features")

    def par(name, arr):
        return b.param(name, Tensor(np.asarray(arr, dtype=np.float32)))

    branches = []
    for i, dil in enumerate(mstn.dilations):
        t = b.conv1d(x, par(f"pdc{i}_w", values[f"pdc{i}_w"]), dilation=dil)
        t = b.bias(t, par(f"pdc{i}_b", values[f"pdc{i}_b"]), axis=0)
        branches.append(b.relu(t))
    if mstn.use_tsa:
        proj = b.conv1d(x, par("tsa_proj_w", values["tsa_proj_w"]), dilation=1)
        branches.append(
            b.nonlocal1d(
                proj,
                par("tsa_q", values["tsa_q"]),
                par("tsa_k", values["tsa_k"]),
                par("tsa_g", values["tsa_g"]),
                par("tsa_o", values["tsa_o"]),
                name="tsa",
            )
        )
    cat = b.concat(branches, axis=0)
    fused = b.conv1d(cat, par("fuse_w", values["fuse_w"]), dilation=1)
    fused = b.bias(fused, par("fuse_b", values["fuse_b"]), axis=0)
    t = b.transpose2d(fused)  # [T, out_dim]
    t = b.linear(t, par("fc1_w", values["fc1_w"].T))
    t = b.bias(t, par("fc1_b", values["fc1_b"]), axis=-1)
    t = b.relu(t)
    t = b.linear(t, par("fc2_w", values["fc2_w"].T))
    t = b.bias(t, par("fc2_b", values["fc2_b"]), axis=-1)
    t = b.relu(t)
    t = b.linear(t, par("fc3_w", values["fc3_w"].T))
    t = b.bias(t, par("fc3_b", values["fc3_b"]), axis=-1)
    t = b.sigmoid(t)
    b.output(t)
    return b.build()
