"""Encoder assembly: forward pass over windows, the training objective and
ADAM loop with early stopping, the singular-value-cutoff calibration, and
per-timestep anomaly scoring.

The anomaly score at a timestep is the squared reconstruction residual
multiplied by the count of final-layer attention singular values above the
calibrated cutoff h1; the alarm threshold h2 turns scores into labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import attention, autograd as ag, embedding, linalg
from .autograd import Tensor
from .data import DataError, TimeSeriesFrame, NormStats, windows

__all__ = [
    "NumericError",
    "TrainConfig",
    "Thresholds",
    "ModelParams",
    "ScoreSeries",
    "LossTerms",
    "TrainResult",
    "init_params",
    "forward",
    "batch_forward",
    "total_loss",
    "train",
    "calibrate_h1",
    "alora_t_score",
    "anomaly_score",
    "score_frame",
    "detect",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"ALORA1"
CHECKPOINT_VERSION = 1

_ACTIVATION_CODES = {"identity": 0, "gelu": 1}
_MASK_CODES = {"none": 0, "causal": 1}
_PAIR_METHOD_CODES = {"spearman": 0, "pearson": 1}


class NumericError(RuntimeError):
    """Training or scoring produced a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    t_window: int = 20
    d_model: int = 64
    heads: int = 8
    layers: int = 3
    lambda_reg: float = 10.0
    learning_rate: float = 1e-4
    max_epochs: int = 50
    patience: int = 5
    k_pairs: int = 512
    r: int = 1
    seed: int = 0
    skip: bool = True
    activation: str = "identity"
    mask: str = "none"
    batch_size: int = 64
    pair_method: str = "spearman"
    kernel_size: int = 3

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.t_window < 2:
            raise ValueError("t_window must be >= 2")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ValueError(f"heads {self.heads} must divide d_model {self.d_model}")
        if self.activation not in _ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.mask not in _MASK_CODES:
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.pair_method not in _PAIR_METHOD_CODES:
            raise ValueError(f"unknown pair method {self.pair_method!r}")
        if self.kernel_size < 1 or self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd and >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0 or self.k_pairs < 1:
            raise ValueError("batch_size/max_epochs >= 1, patience >= 0, k_pairs >= 1")

    def mask_matrix(self) -> np.ndarray | None:
        return linalg.causal_mask(self.t_window) if self.mask == "causal" else None


@dataclass
class Thresholds:
    """h1: singular-value cutoff for the rank score; h2: alarm cutoff on
    the anomaly score."""

    h1: float | None = None
    h2: float | None = None

    def __post_init__(self):
        if self.h1 is not None and self.h1 < 0:
            raise ValueError("h1 must be >= 0")


@dataclass
class ModelParams:
    kernels: embedding.EmbeddingKernels
    layers: list[attention.AttentionLayerParams]
    w_out: np.ndarray

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one attention layer")
        d_model = self.kernels.d_model
        if self.w_out.shape[0] != d_model:
            raise ValueError(f"w_out rows {self.w_out.shape[0]} != d_model {d_model}")

    @property
    def d_model(self) -> int:
        return self.kernels.d_model

    @property
    def d_in(self) -> int:
        return self.kernels.n_series

    def copy(self) -> "ModelParams":
        return ModelParams(
            kernels=embedding.EmbeddingKernels(
                n_series=self.kernels.n_series,
                pairs=self.kernels.pairs.copy(),
                weights=self.kernels.weights.copy(),
            ),
            layers=[
                attention.AttentionLayerParams(
                    w_q=p.w_q.copy(),
                    w_k=p.w_k.copy(),
                    w_v=p.w_v.copy(),
                    w_proj=p.w_proj.copy(),
                    layer_index=p.layer_index,
                )
                for p in self.layers
            ],
            w_out=self.w_out.copy(),
        )


@dataclass
class ScoreSeries:
    """Per-timestep detection outputs.  Timesteps before the first full
    window are scored from the first window and flagged."""

    anomaly_score: np.ndarray
    alora_score: np.ndarray
    residual_sq: np.ndarray
    residual_sq_per_series: np.ndarray
    from_first_window: np.ndarray
    las: np.ndarray | None = None
    labels: np.ndarray | None = None


@dataclass
class LossTerms:
    total: float
    recon: float
    reg: float


@dataclass
class EpochStats:
    epoch: int
    train_total: float
    train_recon: float
    train_reg: float
    val_total: float


@dataclass
class TrainResult:
    params: ModelParams
    thresholds: Thresholds
    history: list[EpochStats] = field(default_factory=list)
    selection: embedding.PairSelection | None = None


# -- forward ---------------------------------------------------------------------


PARAM_GROUPS = ("kernels", "w_q", "w_k", "w_v", "w_proj", "w_out")


class _ParamTensors:
    """Parameter arrays wrapped as autodiff leaves; `trainable` names the
    parameter groups that receive gradients."""

    def __init__(self, params: ModelParams, requires_grad: bool, trainable=None):
        groups = set(PARAM_GROUPS if trainable is None else trainable)
        unknown = groups - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")

        def want(name):
            return requires_grad and name in groups

        self.kernel_weights = Tensor(params.kernels.weights, want("kernels"))
        self.pairs = params.kernels.pairs
        self.layers = [
            tuple(
                Tensor(getattr(p, name), want(name))
                for name in ("w_q", "w_k", "w_v", "w_proj")
            )
            for p in params.layers
        ]
        self.w_out = Tensor(params.w_out, want("w_out"))

    def all(self) -> list[Tensor]:
        out = [self.kernel_weights]
        for layer in self.layers:
            out.extend(layer)
        out.append(self.w_out)
        return out

    def trainable(self) -> list[Tensor]:
        return [t for t in self.all() if t.requires_grad]

    def to_params(self, template: ModelParams) -> ModelParams:
        fresh = template.copy()
        fresh.kernels.weights[...] = self.kernel_weights.data
        for p, (w_q, w_k, w_v, w_proj) in zip(fresh.layers, self.layers):
            p.w_q[...] = w_q.data
            p.w_k[...] = w_k.data
            p.w_v[...] = w_v.data
            p.w_proj[...] = w_proj.data
        fresh.w_out[...] = self.w_out.data
        return fresh


def _forward_t(x: np.ndarray, tensors: _ParamTensors, cfg: TrainConfig):
    """Forward a (B, T, d) stack through embedding, layers, projection.

    Returns (recon Tensor (B, T, d), list of head-averaged attention
    Tensors (B, T, T))."""
    mask = cfg.mask_matrix()
    z = embedding.pair_conv(x, tensors.kernel_weights, tensors.pairs)
    s_avgs = []
    for w_q, w_k, w_v, w_proj in tensors.layers:
        z, s_avg, _ = attention.forward_t(
            z, w_q, w_k, w_v, w_proj, cfg.skip, cfg.activation, mask
        )
        s_avgs.append(s_avg)
    recon = z @ tensors.w_out
    return recon, s_avgs


def batch_forward(x: np.ndarray, params: ModelParams, cfg: TrainConfig):
    """Inference over a (B, T, d) stack: reconstructions, head-averaged
    attention matrices per layer, and final-layer singular values (B, T)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.t_window or x.shape[2] != params.d_in:
        raise ValueError(
            f"window stack shape {x.shape} incompatible with "
            f"(T={cfg.t_window}, d={params.d_in})"
        )
    tensors = _ParamTensors(params, requires_grad=False)
    recon, s_avgs = _forward_t(x, tensors, cfg)
    final_sigma = np.linalg.svd(s_avgs[-1].data, compute_uv=False)
    return recon.data, [s.data for s in s_avgs], final_sigma


def forward(window, params: ModelParams, cfg: TrainConfig):
    """Forward one T x d window; returns (reconstruction, trace)."""
    x = np.asarray(window, dtype=np.float64)
    recon, s_layers, sigma = batch_forward(x[None], params, cfg)
    trace = attention.AttentionTrace(
        s_layers=[s[0] for s in s_layers], final_sigma=sigma[0]
    )
    return recon[0], trace


def total_loss(batch, params: ModelParams, cfg: TrainConfig) -> LossTerms:
    """Summed squared reconstruction error over the batch plus the
    lambda-weighted Geman penalties of every layer's attention matrices."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    recon, s_layers, _ = batch_forward(x, params, cfg)
    recon_term = float(np.sum((x - recon) ** 2))
    reg = 0.0
    for s in s_layers:
        loss, _ = linalg.geman_batch(s, cfg.r)
        reg += loss
    reg_term = cfg.lambda_reg * reg
    return LossTerms(total=recon_term + reg_term, recon=recon_term, reg=reg_term)


# -- training ---------------------------------------------------------------------


def init_params(values: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    """Pair selection on the training values plus seeded parameter init."""
    selection = embedding.select_pairs(values, cfg.k_pairs, cfg.pair_method)
    kernels = embedding.init_kernels(
        selection, n_series=values.shape[1], d_model=cfg.d_model, m=cfg.kernel_size, rng=rng
    )
    layers = [
        attention.init_layer_params(cfg.d_model, cfg.heads, layer_index=l, rng=rng)
        for l in range(cfg.layers)
    ]
    bound = 1.0 / np.sqrt(cfg.d_model)
    w_out = rng.uniform(-bound, bound, size=(cfg.d_model, values.shape[1]))
    params = ModelParams(kernels=kernels, layers=layers, w_out=w_out)
    return params, selection


def _mean_loss(win: np.ndarray, params: ModelParams, cfg: TrainConfig) -> float:
    terms = total_loss(win, params, cfg)
    return terms.total / win.shape[0]


def calibrate_h1(fourth, fifth) -> float:
    """Cutoff rule: the maximum value observed across the two singular-value
    trajectories."""
    both = np.concatenate([np.asarray(fourth, dtype=np.float64).ravel(),
                           np.asarray(fifth, dtype=np.float64).ravel()])
    if both.size == 0:
        return 0.0
    return float(np.max(both))


def _h1_from_params(win: np.ndarray, params: ModelParams, cfg: TrainConfig) -> float:
    idx = [i for i in (3, 4) if i < cfg.t_window]
    if not idx:
        idx = [cfg.t_window - 1]
    sig_cols = []
    for chunk in _chunks(win, 512):
        _, _, sigma = batch_forward(chunk, params, cfg)
        sig_cols.append(sigma[:, idx])
    traj = np.concatenate(sig_cols, axis=0)
    if traj.shape[1] == 1:
        return calibrate_h1(traj[:, 0], traj[:, 0])
    return calibrate_h1(traj[:, 0], traj[:, 1])


def _chunks(arr: np.ndarray, size: int):
    for start in range(0, arr.shape[0], size):
        yield arr[start : start + size]


def train(
    train_frame: TimeSeriesFrame,
    cfg: TrainConfig,
    init: ModelParams | None = None,
    trainable=None,
) -> TrainResult:
    """ADAM training with early stopping on the last 10% of windows.

    The training frame is expected to be normalized already.  After the
    best parameters are restored, the 4th/5th singular-value trajectories
    of the final layer over the full training sequence set h1.

    ``init`` warm-starts from existing parameters; ``trainable`` restricts
    the optimized groups (subset of :data:`PARAM_GROUPS`), leaving the rest
    frozen.
    """
    values = train_frame.values if hasattr(train_frame, "values") else np.asarray(train_frame)
    if values.shape[0] < cfg.t_window:
        raise DataError(f"training length {values.shape[0]} shorter than window {cfg.t_window}")
    win = windows(values, cfg.t_window, stride=1)
    num = win.shape[0]
    if num < 2:
        raise DataError("need at least 2 training windows for the validation split")
    n_val = max(1, num // 10)
    train_win = win[: num - n_val]
    val_win = win[num - n_val :]

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if init is None:
        params, selection = init_params(values, cfg, rng)
    else:
        params = init.copy()
        selection = embedding.select_pairs(values, cfg.k_pairs, cfg.pair_method)
    tensors = _ParamTensors(params, requires_grad=True, trainable=trainable)
    optimizer = ag.Adam(tensors.trainable(), lr=cfg.learning_rate)

    best_val = np.inf
    best_params = params.copy()
    wait = 0
    history: list[EpochStats] = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_win.shape[0])
        recon_sum = 0.0
        reg_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = train_win[idx]
            try:
                recon, s_avgs = _forward_t(x, tensors, cfg)
                recon_loss = ag.sum_squares(recon - Tensor(x))
                loss = recon_loss
                reg_val = 0.0
                for s_avg in s_avgs:
                    pen = ag.geman_penalty(s_avg, cfg.r)
                    reg_val += float(pen.data)
                    loss = loss + cfg.lambda_reg * pen
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"numerical failure at epoch {epoch}: {exc}") from None
            batch_loss = loss * (1.0 / x.shape[0])
            if not np.isfinite(batch_loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            recon_sum += float(recon_loss.data)
            reg_sum += cfg.lambda_reg * reg_val

        current = tensors.to_params(params)
        try:
            val_total = _mean_loss(val_win, current, cfg)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"numerical failure at epoch {epoch}: {exc}") from None
        if not np.isfinite(val_total):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append(
            EpochStats(
                epoch=epoch,
                train_total=(recon_sum + reg_sum) / train_win.shape[0],
                train_recon=recon_sum / train_win.shape[0],
                train_reg=reg_sum / train_win.shape[0],
                val_total=val_total,
            )
        )
        if val_total < best_val:
            best_val = val_total
            best_params = current
            wait = 0
        else:
            wait += 1
            if wait > cfg.patience:
                break

    h1 = _h1_from_params(win, best_params, cfg)
    return TrainResult(
        params=best_params,
        thresholds=Thresholds(h1=h1),
        history=history,
        selection=selection,
    )


# -- scoring ----------------------------------------------------------------------


def alora_t_score(trace: attention.AttentionTrace, h1: float) -> int:
    """Number of final-layer singular values strictly above h1."""
    return int(np.sum(trace.final_sigma > h1))


def anomaly_score(y_t, recon_t, score: int) -> float:
    """Squared residual norm times the rank score."""
    y = np.asarray(y_t, dtype=np.float64)
    r = np.asarray(recon_t, dtype=np.float64)
    if y.shape != r.shape:
        raise ValueError("observation/reconstruction shape mismatch")
    return float(np.sum((y - r) ** 2)) * score


def score_frame(frame: TimeSeriesFrame, params: ModelParams, cfg: TrainConfig, h1: float) -> ScoreSeries:
    """Score every timestep: each t is the last row of its window; the
    first T-1 timesteps reuse the first window and are flagged."""
    values = frame.values if hasattr(frame, "values") else np.asarray(frame, dtype=np.float64)
    n, d = values.shape
    t_len = cfg.t_window
    if n < t_len:
        raise DataError(f"test length {n} shorter than window {t_len}")
    win = windows(values, t_len, stride=1)

    res_per_series = np.empty((n, d))
    counts = np.empty(win.shape[0], dtype=np.int64)
    offset = 0
    first_recon = None
    for chunk in _chunks(win, 512):
        recon, _, sigma = batch_forward(chunk, params, cfg)
        if offset == 0:
            first_recon = recon[0]
        counts[offset : offset + chunk.shape[0]] = np.sum(sigma > h1, axis=1)
        res_per_series[offset + t_len - 1 : offset + t_len - 1 + chunk.shape[0]] = (
            chunk[:, -1, :] - recon[:, -1, :]
        ) ** 2
        offset += chunk.shape[0]
    res_per_series[: t_len - 1] = (values[: t_len - 1] - first_recon[: t_len - 1]) ** 2

    alora = np.empty(n, dtype=np.int64)
    alora[t_len - 1 :] = counts
    alora[: t_len - 1] = counts[0]
    residual_sq = res_per_series.sum(axis=1)
    if not np.isfinite(residual_sq).all():
        raise NumericError("non-finite reconstruction residuals")
    from_first = np.zeros(n, dtype=bool)
    from_first[: t_len - 1] = True
    return ScoreSeries(
        anomaly_score=residual_sq * alora,
        alora_score=alora,
        residual_sq=residual_sq,
        residual_sq_per_series=res_per_series,
        from_first_window=from_first,
    )


def detect(frame: TimeSeriesFrame, params: ModelParams, cfg: TrainConfig, thresholds: Thresholds) -> ScoreSeries:
    """Score a frame and raise alarms where the anomaly score exceeds h2."""
    if thresholds.h1 is None or thresholds.h2 is None:
        raise ValueError("detect needs complete thresholds (h1 and h2)")
    series = score_frame(frame, params, cfg, thresholds.h1)
    series.labels = (series.anomaly_score > thresholds.h2).astype(np.int8)
    return series


# -- checkpoint io ------------------------------------------------------------------

_HEADER_FMT = "<6sH12i3dQ5B"


def save_checkpoint(
    path,
    params: ModelParams,
    cfg: TrainConfig,
    selection: embedding.PairSelection,
    h1: float | None = None,
    norm_stats: NormStats | None = None,
):
    """Little-endian binary checkpoint: header, ranked pair list, then raw
    float64 parameter blocks (kernels, per-layer q/k/v/proj, output
    projection, optional normalization stats).  A plain-text manifest with
    the same metadata is written alongside."""
    d_in = params.d_in
    header = struct.pack(
        _HEADER_FMT,
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        cfg.t_window,
        cfg.d_model,
        cfg.heads,
        cfg.layers,
        cfg.max_epochs,
        cfg.patience,
        cfg.k_pairs,
        cfg.r,
        cfg.batch_size,
        cfg.kernel_size,
        d_in,
        len(selection.pairs),
        cfg.lambda_reg,
        cfg.learning_rate,
        float("nan") if h1 is None else float(h1),
        cfg.seed,
        int(cfg.skip),
        _ACTIVATION_CODES[cfg.activation],
        _MASK_CODES[cfg.mask],
        _PAIR_METHOD_CODES[cfg.pair_method],
        int(norm_stats is not None),
    )
    blocks = [params.kernels.weights]
    for layer in params.layers:
        blocks.extend([layer.w_q, layer.w_k, layer.w_v, layer.w_proj])
    blocks.append(params.w_out)
    if norm_stats is not None:
        blocks.extend([norm_stats.mean, norm_stats.std])

    with open(path, "wb") as fh:
        fh.write(header)
        for (i, j), score in zip(selection.pairs, selection.scores):
            fh.write(struct.pack("<iid", i, j, float(score)))
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())

    manifest = {
        "magic": CHECKPOINT_MAGIC.decode(),
        "version": CHECKPOINT_VERSION,
        "t_window": cfg.t_window,
        "d_model": cfg.d_model,
        "heads": cfg.heads,
        "layers": cfg.layers,
        "lambda_reg": cfg.lambda_reg,
        "learning_rate": cfg.learning_rate,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "k_pairs": cfg.k_pairs,
        "r": cfg.r,
        "seed": cfg.seed,
        "skip": cfg.skip,
        "activation": cfg.activation,
        "mask": cfg.mask,
        "batch_size": cfg.batch_size,
        "pair_method": cfg.pair_method,
        "kernel_size": cfg.kernel_size,
        "d_in": d_in,
        "n_pairs": len(selection.pairs),
        "h1": "" if h1 is None else repr(float(h1)),
        "norm_stats": norm_stats is not None,
    }
    with open(f"{path}.manifest.txt", "w", encoding="utf-8") as fh:
        for key, value in manifest.items():
            fh.write(f"{key}={value}\n")


def load_checkpoint(path):
    """Returns (params, cfg, selection, h1, norm_stats)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize(_HEADER_FMT)
    if len(raw) < head_size:
        raise ValueError(f"{path}: truncated checkpoint")
    fields = struct.unpack_from(_HEADER_FMT, raw)
    magic, version = fields[0], fields[1]
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (
        t_window,
        d_model,
        heads,
        layers,
        max_epochs,
        patience,
        k_pairs,
        r,
        batch_size,
        kernel_size,
        d_in,
        n_pairs,
    ) = fields[2:14]
    lambda_reg, learning_rate, h1_raw = fields[14:17]
    seed = fields[17]
    skip, act_code, mask_code, pair_code, has_stats = fields[18:23]

    cfg = TrainConfig(
        t_window=t_window,
        d_model=d_model,
        heads=heads,
        layers=layers,
        lambda_reg=lambda_reg,
        learning_rate=learning_rate,
        max_epochs=max_epochs,
        patience=patience,
        k_pairs=k_pairs,
        r=r,
        seed=seed,
        skip=bool(skip),
        activation={v: k for k, v in _ACTIVATION_CODES.items()}[act_code],
        mask={v: k for k, v in _MASK_CODES.items()}[mask_code],
        batch_size=batch_size,
        pair_method={v: k for k, v in _PAIR_METHOD_CODES.items()}[pair_code],
        kernel_size=kernel_size,
    )

    offset = head_size
    pair_fmt = "<iid"
    pair_size = struct.calcsize(pair_fmt)
    pairs = []
    scores = []
    for _ in range(n_pairs):
        i, j, score = struct.unpack_from(pair_fmt, raw, offset)
        pairs.append((i, j))
        scores.append(score)
        offset += pair_size
    selection = embedding.PairSelection(pairs=tuple(pairs), scores=np.array(scores))

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        return arr.astype(np.float64)

    kernels = embedding.EmbeddingKernels(
        n_series=d_in,
        pairs=np.array([pairs[c % n_pairs] for c in range(d_model)], dtype=np.int64),
        weights=take((d_model, 2, kernel_size)),
    )
    dh = d_model // heads
    layer_params = [
        attention.AttentionLayerParams(
            w_q=take((heads, d_model, dh)),
            w_k=take((heads, d_model, dh)),
            w_v=take((heads, d_model, dh)),
            w_proj=take((d_model, d_model)),
            layer_index=l,
        )
        for l in range(layers)
    ]
    w_out = take((d_model, d_in))
    norm_stats = None
    if has_stats:
        norm_stats = NormStats(mean=take((d_in,)), std=take((d_in,)))
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    params = ModelParams(kernels=kernels, layers=layer_params, w_out=w_out)
    h1 = None if np.isnan(h1_raw) else float(h1_raw)
    return params, cfg, selection, h1, norm_stats
