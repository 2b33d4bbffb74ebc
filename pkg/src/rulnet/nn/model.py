"""The hybrid Conv1D -> BiLSTM -> additive attention regressor.

Data flow for a batch ``x`` of shape (B, T, F)::

    conv1 -> bn1 -> relu -> dropout
    conv2 -> bn2 -> relu -> dropout
    bilstm -> layernorm -> dropout
    attention -> fc1 (relu) -> dropout -> fc2 (relu) -> out

Parameters live in a flat name -> array mapping so gradients, optimizer
state and checkpoints can all share the same keys.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..container import load_arrays, save_arrays
from ..errors import ShapeError, ValidationError
from . import layers as L

CHECKPOINT_FORMAT = "rulnet-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    n_features: int = 17
    window: int = 30
    filters1: int = 64
    filters2: int = 128
    kernel_size: int = 3
    hidden: int = 128
    attention_units: int = 64
    fc1_units: int = 64
    fc2_units: int = 32
    dropout_cnn: float = 0.2
    dropout_lstm: float = 0.3
    dropout_fc: float = 0.2
    l2: float = 1e-4
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    ln_eps: float = 1e-3

    def __post_init__(self):
        for f in ("n_features", "window", "filters1", "filters2", "kernel_size", "hidden",
                  "attention_units", "fc1_units", "fc2_units"):
            if getattr(self, f) < 1:
                raise ValidationError(f"{f} must be positive")
        if self.kernel_size % 2 != 1:
            raise ValidationError("kernel_size must be odd")
        for f in ("dropout_cnn", "dropout_lstm", "dropout_fc"):
            if not 0.0 <= getattr(self, f) < 1.0:
                raise ValidationError(f"{f} must be in [0, 1)")
        if self.l2 < 0:
            raise ValidationError("l2 must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Canonical parameter names and shapes, in checkpoint order."""
        k, f, c1, c2 = self.kernel_size, self.n_features, self.filters1, self.filters2
        h, a = self.hidden, self.attention_units
        shapes = {
            "conv1.kernel": (k, f, c1),
            "bn1.gamma": (c1,), "bn1.beta": (c1,),
            "bn1.moving_mean": (c1,), "bn1.moving_var": (c1,),
            "conv2.kernel": (k, c1, c2),
            "bn2.gamma": (c2,), "bn2.beta": (c2,),
            "bn2.moving_mean": (c2,), "bn2.moving_var": (c2,),
        }
        for d in ("lstm_fwd", "lstm_bwd"):
            shapes[f"{d}.kernel"] = (c2, 4 * h)
            shapes[f"{d}.recurrent_kernel"] = (h, 4 * h)
            shapes[f"{d}.bias"] = (4 * h,)
        shapes.update({
            "layernorm.gamma": (2 * h,), "layernorm.beta": (2 * h,),
            "attention.W1": (2 * h, a), "attention.w2": (a,), "attention.b": (a,),
            "fc1.kernel": (2 * h, self.fc1_units), "fc1.bias": (self.fc1_units,),
            "fc2.kernel": (self.fc1_units, self.fc2_units), "fc2.bias": (self.fc2_units,),
            "out.kernel": (self.fc2_units, 1), "out.bias": (1,),
        })
        return shapes


NON_TRAINABLE = ("bn1.moving_mean", "bn1.moving_var", "bn2.moving_mean", "bn2.moving_var")
L2_PARAMS = ("lstm_fwd.recurrent_kernel", "lstm_bwd.recurrent_kernel", "fc1.kernel")


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.config.shapes()
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ShapeError(f"parameter names mismatch; missing={missing} extra={extra}")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.arrays[name] = arr
        self.arrays = {name: self.arrays[name] for name in expected}

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = value

    @property
    def trainable_names(self) -> list[str]:
        return [n for n in self.arrays if n not in NON_TRAINABLE]

    def trainable_count(self) -> int:
        return int(sum(self.arrays[n].size for n in self.trainable_names))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays
        )


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig = ModelConfig(), seed: int = 42) -> ModelParams:
    """Glorot-uniform kernels, zero biases/betas, unit gammas, LSTM forget bias 1."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.shapes().items():
        kind = name.split(".")[1]
        if name.startswith("conv"):
            k, cin, cout = shape
            arrays[name] = _glorot(rng, shape, k * cin, k * cout)
        elif kind in ("kernel", "recurrent_kernel", "W1"):
            arrays[name] = _glorot(rng, shape, shape[0], shape[1])
        elif kind == "w2":
            arrays[name] = _glorot(rng, shape, shape[0], 1)
        elif kind in ("gamma", "moving_var"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    for d in ("lstm_fwd", "lstm_bwd"):
        h = config.hidden
        arrays[f"{d}.bias"][h:2 * h] = 1.0
    return ModelParams(config, arrays)


@dataclass
class ForwardTrace:
    mode: str
    caches: dict
    masks: dict
    hidden: np.ndarray        # BiLSTM output H, (B, T, 2H)
    scores: np.ndarray        # alignment scores e, (B, T)
    alpha: np.ndarray         # attention weights, (B, T)
    context: np.ndarray       # (B, 2H)
    moving_stats: dict        # updated BN moving statistics (train mode)
    batch_stats: dict         # BN mean/var actually used, per layer
    config: ModelConfig


def _masks_for(config: ModelConfig, b: int, t: int, rng) -> dict:
    if rng is None:
        rng = np.random.default_rng()
    return {
        "drop1": L.dropout_mask((b, t, config.filters1), config.dropout_cnn, rng),
        "drop2": L.dropout_mask((b, t, config.filters2), config.dropout_cnn, rng),
        "drop_lstm": L.dropout_mask((b, t, 2 * config.hidden), config.dropout_lstm, rng),
        "drop_fc": L.dropout_mask((b, config.fc1_units), config.dropout_fc, rng),
    }


def dense_head_forward(c, params: ModelParams, mask=None):
    """FC(relu) -> dropout -> FC(relu) -> linear output; ``mask`` is the fc1 dropout mask."""
    z1, cache1 = L.dense_forward(c, params["fc1.kernel"], params["fc1.bias"])
    a1, r1 = L.relu_forward(z1)
    a1d = L.dropout_apply(a1, mask)
    z2, cache2 = L.dense_forward(a1d, params["fc2.kernel"], params["fc2.bias"])
    a2, r2 = L.relu_forward(z2)
    y, cache3 = L.dense_forward(a2, params["out.kernel"], params["out.bias"])
    return y, (cache1, r1, mask, cache2, r2, cache3)


def dense_head_backward(dy, cache):
    cache1, r1, mask, cache2, r2, cache3 = cache
    grads = {}
    da2, g = L.dense_backward(dy, cache3)
    grads.update({f"out.{k}": v for k, v in g.items()})
    dz2 = L.relu_backward(da2, r2)
    da1d, g = L.dense_backward(dz2, cache2)
    grads.update({f"fc2.{k}": v for k, v in g.items()})
    da1 = L.dropout_apply(da1d, mask)
    dz1 = L.relu_backward(da1, r1)
    dc, g = L.dense_backward(dz1, cache1)
    grads.update({f"fc1.{k}": v for k, v in g.items()})
    return dc, grads


def model_forward(x, params: ModelParams, mode: str = "infer", rng=None, masks=None):
    """Run the network; returns ``(yhat of shape (B, 1), ForwardTrace)``.

    In train mode dropout masks are drawn from ``rng`` unless ``masks`` (for
    example from an earlier trace) is given, and batch norm uses batch
    statistics. The trace carries updated moving statistics; ``params`` is
    never modified.
    """
    if mode not in ("train", "infer"):
        raise ValidationError(f"unknown mode {mode!r}")
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.n_features:
        raise ShapeError(f"expected input (B, T, {cfg.n_features}), got {x.shape}")
    b, t, _ = x.shape
    if mode == "train":
        masks = masks if masks is not None else _masks_for(cfg, b, t, rng)
    else:
        masks = {"drop1": None, "drop2": None, "drop_lstm": None, "drop_fc": None}

    caches, moving, batch_stats = {}, {}, {}
    h = x
    for stage, drop in (("1", "drop1"), ("2", "drop2")):
        h, caches[f"conv{stage}"] = L.conv1d_forward(h, params[f"conv{stage}.kernel"])
        bn = f"bn{stage}"
        h, caches[bn], mm, mv = L.batchnorm_forward(
            h, params[f"{bn}.gamma"], params[f"{bn}.beta"],
            params[f"{bn}.moving_mean"], params[f"{bn}.moving_var"], mode,
            cfg.bn_momentum, cfg.bn_eps,
        )
        moving[f"{bn}.moving_mean"], moving[f"{bn}.moving_var"] = mm, mv
        batch_stats[bn] = {"mean": caches[bn][4], "var": caches[bn][5]}
        h, caches[f"relu{stage}"] = L.relu_forward(h)
        h = L.dropout_apply(h, masks[drop])

    hidden, caches["bilstm"] = L.bilstm_forward(
        h,
        (params["lstm_fwd.kernel"], params["lstm_fwd.recurrent_kernel"], params["lstm_fwd.bias"]),
        (params["lstm_bwd.kernel"], params["lstm_bwd.recurrent_kernel"], params["lstm_bwd.bias"]),
    )
    h, caches["layernorm"] = L.layernorm_forward(
        hidden, params["layernorm.gamma"], params["layernorm.beta"], cfg.ln_eps
    )
    h = L.dropout_apply(h, masks["drop_lstm"])
    (context, alpha), caches["attention"] = L.attention_forward(
        h, params["attention.W1"], params["attention.w2"], params["attention.b"]
    )
    yhat, caches["head"] = dense_head_forward(context, params, masks["drop_fc"])
    trace = ForwardTrace(
        mode=mode, caches=caches, masks=masks, hidden=hidden,
        scores=caches["attention"][2], alpha=alpha, context=context,
        moving_stats=moving, batch_stats=batch_stats, config=cfg,
    )
    return yhat, trace


def predict(x, params: ModelParams, batch_size: int = 512) -> np.ndarray:
    """Inference-mode predictions as a flat vector."""
    out = [model_forward(x[i:i + batch_size], params, "infer")[0][:, 0]
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def l2_penalty(params: ModelParams) -> float:
    lam = params.config.l2
    return float(lam * sum(np.sum(params[n] ** 2) for n in L2_PARAMS))


def model_backward(trace: ForwardTrace, dyhat, params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dyhat * yhat) + l2_penalty(params)`` for every trainable array.

    The L2 penalty is ``l2 * sum(w**2)`` over the BiLSTM recurrent kernels and
    the fc1 kernel, contributing ``2 * l2 * w``.
    """
    caches, masks = trace.caches, trace.masks
    dyhat = np.asarray(dyhat, dtype=np.float64).reshape(-1, 1)
    if dyhat.shape[0] != trace.context.shape[0]:
        raise ShapeError("upstream gradient does not match the traced batch")
    if trace.config != params.config:
        raise ValidationError("trace was produced with a different model configuration")
    grads = {}
    dc, g = dense_head_backward(dyhat, caches["head"])
    grads.update(g)
    dh, g = L.attention_backward(dc, caches["attention"])
    grads.update({f"attention.{k}": v for k, v in g.items()})
    dh = L.dropout_apply(dh, masks["drop_lstm"])
    dh, g = L.layernorm_backward(dh, caches["layernorm"])
    grads.update({f"layernorm.{k}": v for k, v in g.items()})
    dh, gf, gb = L.bilstm_backward(dh, caches["bilstm"])
    grads.update({f"lstm_fwd.{k}": v for k, v in gf.items()})
    grads.update({f"lstm_bwd.{k}": v for k, v in gb.items()})
    for stage, drop in (("2", "drop2"), ("1", "drop1")):
        dh = L.dropout_apply(dh, masks[drop])
        dh = L.relu_backward(dh, caches[f"relu{stage}"])
        dh, g = L.batchnorm_backward(dh, caches[f"bn{stage}"])
        grads.update({f"bn{stage}.{k}": v for k, v in g.items()})
        dh, g = L.conv1d_backward(dh, caches[f"conv{stage}"])
        grads[f"conv{stage}.kernel"] = g["kernel"]
    lam = params.config.l2
    for name in L2_PARAMS:
        grads[name] = grads[name] + 2.0 * lam * params[name]
    return {name: grads[name] for name in params.trainable_names}


def apply_moving_stats(params: ModelParams, trace: ForwardTrace) -> None:
    for name, value in trace.moving_stats.items():
        params[name] = np.asarray(value, dtype=np.float64)


def save_checkpoint(path, params: ModelParams, metadata: dict | None = None) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "model_config": params.config.to_dict()}
    meta.update(metadata or {})
    save_arrays(path, params.arrays, meta)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(meta["model_config"])
    return ModelParams(config, arrays), meta
