"""Network assembly: encoder, classifier head, and mirrored decoding pathways.

An encoder is a sequence of macro-layers, each a stack of convolution+ReLU
layers closed by one non-overlapping max-pooling layer, followed by an
inner-product head ending in class logits.  A decoder mirrors the encoder:
each decoding macro-layer is an unpooling layer (known or fixed switches)
followed by the reverse-ordered transposed convolutions of its encoder
twin, ReLU after each deconvolution except the very last one of
macro-layer 1, whose activation is configurable (linear by default).

Three autoencoder wirings are supported on top of a plain classifier:

* ``sae-first``      stacked decoder from the top pooled features, one
                     image-level reconstruction loss;
* ``sae-all``        same stacked decoder, reconstruction losses matched at
                     every macro-layer boundary and at the image;
* ``sae-layerwise``  independent one-macro-layer decoders, each inverting
                     its own layer's clean encoder input.

The training objective is ``classification + recon_weight * reconstruction``
where the reconstruction term sums per-layer squared errors weighted by
``layer_loss_weights`` (summed over elements, averaged over the batch).
Loss targets are constants: no gradient flows into an activation through
the target slot of a reconstruction loss.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor
from .exceptions import CheckpointError, ConfigError, ShapeError, StaleRecordError
from .layers import (
    ConvSpec,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    inner_product_backward,
    inner_product_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_xent,
    unpool_backward,
    unpool_fixed_forward,
    unpool_known_forward,
    weighted_l2_loss,
)

VARIANTS = ("baseline", "sae-first", "sae-all", "sae-layerwise")
SWITCH_MODES = ("known", "fixed")
PARAM_GROUPS = ("encoder", "head", "decoder")

# Near-zero init for the logits layer keeps the untrained cross-entropy at
# ln(K) regardless of upstream activation scale.
LOGITS_INIT_STDDEV = 0.01


@dataclass(frozen=True)
class MacroLayerSpec:
    """One encoder macro-layer: a conv+ReLU stack closed by a pooling layer."""

    convs: tuple[ConvSpec, ...]
    pool: int = 2

    def __post_init__(self):
        if not self.convs:
            raise ConfigError("macro-layer needs at least one conv layer")
        if self.pool < 1:
            raise ConfigError(f"pool size must be >= 1, got {self.pool}")


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int
    input_hw: tuple[int, int]
    macro_layers: tuple[MacroLayerSpec, ...]
    num_classes: int
    head_units: tuple[int, ...] = ()
    variant: str = "baseline"
    switch_mode: str = "known"
    recon_weight: float = 1.0
    layer_loss_weights: tuple[float, ...] = ()
    decoder_output_activation: str = "linear"
    precision: str = "f32"

    @property
    def dtype(self):
        return tensor.PRECISIONS[self.precision]

    @property
    def depth(self) -> int:
        return len(self.macro_layers)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.switch_mode not in SWITCH_MODES:
            raise ConfigError(f"unknown switch_mode {self.switch_mode!r}")
        if self.decoder_output_activation not in ("linear", "relu"):
            raise ConfigError(f"unknown decoder_output_activation {self.decoder_output_activation!r}")
        if self.precision not in tensor.PRECISIONS:
            raise ConfigError(f"unknown precision {self.precision!r}")
        if not self.macro_layers:
            raise ConfigError("network needs at least one macro-layer")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.recon_weight < 0:
            raise ConfigError("recon_weight must be nonnegative")
        if self.variant != "baseline":
            if len(self.layer_loss_weights) != self.depth:
                raise ConfigError(
                    f"layer_loss_weights must have one entry per macro-layer "
                    f"({self.depth}), got {len(self.layer_loss_weights)}"
                )
            if any(g < 0 for g in self.layer_loss_weights):
                raise ConfigError("layer_loss_weights must be nonnegative")
        self.layout()

    def layout(self) -> list[dict]:
        """Per-macro-layer geometry; raises ConfigError on any mismatch."""
        out = []
        c = self.input_channels
        h, w = self.input_hw
        for li, ml in enumerate(self.macro_layers, start=1):
            entry = {"in": (c, h, w), "convs": []}
            for spec in ml.convs:
                if spec.in_channels != c:
                    raise ConfigError(
                        f"macro-layer {li}: conv expects {spec.in_channels} channels, gets {c}"
                    )
                try:
                    h, w = spec.out_size(h, w)
                except ShapeError as exc:
                    raise ConfigError(f"macro-layer {li}: {exc}") from exc
                c = spec.out_channels
                entry["convs"].append((c, h, w))
            if h % ml.pool or w % ml.pool:
                raise ConfigError(
                    f"macro-layer {li}: pool {ml.pool} does not divide {h}x{w}"
                )
            entry["pre_pool"] = (c, h, w)
            h, w = h // ml.pool, w // ml.pool
            entry["pooled"] = (c, h, w)
            out.append(entry)
        return out

    def feature_count(self) -> int:
        c, h, w = self.layout()[-1]["pooled"]
        return c * h * w

    def head_layer_dims(self) -> list[tuple[int, int]]:
        dims = []
        prev = self.feature_count()
        for units in self.head_units:
            dims.append((prev, units))
            prev = units
        dims.append((prev, self.num_classes))
        return dims


class ParameterStore:
    """All learnable tensors plus momentum buffers and trainability flags.

    Parameters are keyed ``encoder.m{l}.conv{j}.w``, ``head.ip{i}.b``,
    ``decoder.m{l}.deconv{j}.w`` and so on; the prefix before the first dot
    is the trainability group.  ``version`` increments on every in-place
    update so stale forward records can be detected.
    """

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.velocities = {k: np.zeros_like(v) for k, v in params.items()}
        self.trainable = {g: True for g in PARAM_GROUPS}
        self.version = 0

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def groups_present(self) -> set[str]:
        return {self.group_of(k) for k in self.params}

    def is_trainable(self, name: str) -> bool:
        return self.trainable.get(self.group_of(name), False)

    def reset_velocities(self) -> None:
        for v in self.velocities.values():
            v[...] = 0

    def clone(self) -> "ParameterStore":
        other = ParameterStore({k: v.copy() for k, v in self.params.items()})
        other.velocities = {k: v.copy() for k, v in self.velocities.items()}
        other.trainable = dict(self.trainable)
        other.version = self.version
        return other


def set_trainable(store: ParameterStore, mask: dict[str, bool]) -> None:
    """Flip trainability per group; gradients are still computed for all."""
    for key, value in mask.items():
        if key not in PARAM_GROUPS:
            raise ConfigError(f"unknown parameter group {key!r}; expected one of {PARAM_GROUPS}")
        store.trainable[key] = bool(value)


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


def build_network(config: NetworkConfig, seed: int) -> ParameterStore:
    """Allocate all parameters.

    Conv/deconv/hidden-head weights are zero-mean Gaussian with stddev
    sqrt(2/fan_in); the logits layer uses LOGITS_INIT_STDDEV; biases and
    momentum buffers start at zero.  The decoder mirrors the encoder layer
    for layer, so it is only allocated for autoencoder variants.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    dtype = config.dtype
    params: dict[str, np.ndarray] = {}

    def draw(shape, std):
        return (rng.standard_normal(int(np.prod(shape))) * std).reshape(shape).astype(dtype)

    for li, ml in enumerate(config.macro_layers, start=1):
        for ji, spec in enumerate(ml.convs):
            fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
            params[f"encoder.m{li}.conv{ji}.w"] = draw(spec.weight_shape, _he_std(fan_in))
            if spec.has_bias:
                params[f"encoder.m{li}.conv{ji}.b"] = np.zeros(spec.out_channels, dtype=dtype)
    head_dims = config.head_layer_dims()
    for i, (fin, fout) in enumerate(head_dims):
        std = LOGITS_INIT_STDDEV if i == len(head_dims) - 1 else _he_std(fin)
        params[f"head.ip{i}.w"] = draw((fout, fin), std)
        params[f"head.ip{i}.b"] = np.zeros(fout, dtype=dtype)
    if config.variant != "baseline":
        for li, ml in enumerate(config.macro_layers, start=1):
            for ji, spec in enumerate(ml.convs):
                fan_in = spec.out_channels * spec.kernel_h * spec.kernel_w
                params[f"decoder.m{li}.deconv{ji}.w"] = draw(spec.weight_shape, _he_std(fan_in))
                if spec.has_bias:
                    params[f"decoder.m{li}.deconv{ji}.b"] = np.zeros(spec.in_channels, dtype=dtype)
    return ParameterStore(params)


def copy_layerwise_into_stacked(src: ParameterStore, dst: ParameterStore) -> None:
    """Copy decoder weights/biases between stores (layerwise -> stacked init).

    Layerwise sub-pathways and the stacked decoder share parameter geometry,
    so this is a checked tensor-by-tensor copy of the decoder group.
    """
    src_names = sorted(n for n in src.params if n.startswith("decoder."))
    dst_names = sorted(n for n in dst.params if n.startswith("decoder."))
    if src_names != dst_names:
        raise ConfigError("decoder parameter sets differ; macro-layer geometry mismatch")
    if not src_names:
        raise ConfigError("source store has no decoder parameters")
    for name in src_names:
        if src.params[name].shape != dst.params[name].shape:
            raise ConfigError(
                f"{name}: shape {src.params[name].shape} vs {dst.params[name].shape}"
            )
        dst.params[name][...] = src.params[name]
    dst.version += 1


@dataclass
class ForwardRecord:
    """Everything forward() computed, cached for backward() and reporting."""

    x: np.ndarray
    labels: Optional[np.ndarray]
    a: list  # a[0] = x, a[l] = pooled output of macro-layer l
    switches: list  # switches[l] for l >= 1, None at index 0
    pre_pool: list
    conv_inputs: list  # conv_inputs[l][j], l >= 1
    pre_acts: list
    head_inputs: list = field(default_factory=list)
    head_pre: list = field(default_factory=list)
    logits: Optional[np.ndarray] = None
    grad_logits: Optional[np.ndarray] = None
    a_hat: Optional[list] = None  # stacked pathway, a_hat[l]; a_hat[L] is a[L]
    dec_inputs: Optional[dict] = None  # (l, j) -> input to deconv j in dec layer l
    dec_pre: Optional[dict] = None
    lw_outputs: Optional[list] = None  # layerwise: lw_outputs[l-1] reconstructs a[l-1]
    lw_dec_inputs: Optional[dict] = None
    lw_dec_pre: Optional[dict] = None
    loss_targets: Optional[list] = None  # per-layer reconstruction targets
    losses: dict = field(default_factory=dict)
    params_version: int = -1


def _check_input_tensor(config: NetworkConfig, x: np.ndarray) -> None:
    c, (h, w) = config.input_channels, config.input_hw
    if x.ndim != 4 or x.shape[1:] != (c, h, w):
        raise ShapeError(f"input shape {x.shape}, expected (N, {c}, {h}, {w})")
    if x.dtype != config.dtype:
        raise ShapeError(f"input dtype {x.dtype}, run precision is {config.precision}")


def _dec_layer_forward(store, config, li: int, top: np.ndarray, switches_l, record_inputs, record_pre):
    """Run decoding macro-layer li on `top` (its pooled-shape input)."""
    ml = config.macro_layers[li - 1]
    geom = config.layout()[li - 1]
    c, h, w = geom["pre_pool"]
    n = top.shape[0]
    k = ml.pool
    if config.switch_mode == "known":
        t = unpool_known_forward(top, switches_l, k, k, k, (n, c, h, w))
    else:
        t = unpool_fixed_forward(top, k, k, k, (n, c, h, w))
    for ji in reversed(range(len(ml.convs))):
        spec = ml.convs[ji]
        w_ = store.params[f"decoder.m{li}.deconv{ji}.w"]
        b_ = store.params.get(f"decoder.m{li}.deconv{ji}.b")
        record_inputs[(li, ji)] = t
        v = deconv2d_forward(t, w_, b_, spec)
        record_pre[(li, ji)] = v
        if li == 1 and ji == 0:
            t = v if config.decoder_output_activation == "linear" else relu_forward(v)
        else:
            t = relu_forward(v)
    return t


def _dec_layer_backward(store, config, li: int, grad_out: np.ndarray, dec_inputs, dec_pre, grads):
    """Backward through decoding macro-layer li; returns grad w.r.t. its pooled input."""
    ml = config.macro_layers[li - 1]
    k = ml.pool
    g = grad_out
    for ji in range(len(ml.convs)):
        spec = ml.convs[ji]
        v = dec_pre[(li, ji)]
        if li == 1 and ji == 0 and config.decoder_output_activation == "linear":
            gv = g
        else:
            gv = relu_backward(g, v)
        lg = deconv2d_backward(dec_inputs[(li, ji)], store.params[f"decoder.m{li}.deconv{ji}.w"], spec, gv)
        grads[f"decoder.m{li}.deconv{ji}.w"] += lg.grad_weights
        if lg.grad_bias is not None:
            grads[f"decoder.m{li}.deconv{ji}.b"] += lg.grad_bias
        g = lg.grad_input
    switches_l = None
    # unpool_backward gathers at the routed positions; switches carry no gradient
    return g, switches_l


def forward(store: ParameterStore, config: NetworkConfig, x: np.ndarray,
            labels=None, with_decoder: bool = True, frozen_targets=None) -> ForwardRecord:
    """One full pass: encoder, head, and the variant's decoding pathway.

    ``labels=None`` skips the classification loss (the loss entry is 0.0);
    ``with_decoder=False`` skips decoding, for classification-only eval.
    Reported losses: ``cls``, raw per-layer reconstruction distances
    ``recon_terms`` (unweighted, batch-averaged), their weighted sum
    ``recon_total``, and ``total = cls + recon_weight * recon_total``.

    Reconstruction targets are the pass's own activations.  They enter the
    loss as constants, so differencing the loss against parameter nudges
    must hold them fixed: ``frozen_targets`` (a list of per-layer target
    tensors, image first) substitutes for them in the loss alone, leaving
    the decoder inputs live.  That is exactly the function whose gradient
    ``backward`` computes.
    """
    _check_input_tensor(config, x)
    L = config.depth
    a: list = [x]
    switches: list = [None]
    pre_pool: list = [None]
    conv_inputs: list = [None]
    pre_acts: list = [None]
    t = x
    for li, ml in enumerate(config.macro_layers, start=1):
        c_in, c_pre = [], []
        for ji, spec in enumerate(ml.convs):
            w_ = store.params[f"encoder.m{li}.conv{ji}.w"]
            b_ = store.params.get(f"encoder.m{li}.conv{ji}.b")
            c_in.append(t)
            v = conv2d_forward(t, w_, b_, spec)
            c_pre.append(v)
            t = relu_forward(v)
        conv_inputs.append(c_in)
        pre_acts.append(c_pre)
        pre_pool.append(t)
        t, sw = maxpool_forward(t, ml.pool, ml.pool, ml.pool)
        a.append(t)
        switches.append(sw)

    record = ForwardRecord(
        x=x, labels=None if labels is None else np.asarray(labels),
        a=a, switches=switches, pre_pool=pre_pool,
        conv_inputs=conv_inputs, pre_acts=pre_acts,
        params_version=store.version,
    )

    t = a[L]
    n_head = len(config.head_layer_dims())
    for i in range(n_head):
        w_ = store.params[f"head.ip{i}.w"]
        b_ = store.params[f"head.ip{i}.b"]
        record.head_inputs.append(t)
        v = inner_product_forward(t, w_, b_)
        record.head_pre.append(v)
        t = v if i == n_head - 1 else relu_forward(v)
    record.logits = t

    loss_cls = 0.0
    if labels is not None:
        loss_cls, record.grad_logits = softmax_xent(record.logits, record.labels)

    n = x.shape[0]
    recon_terms: list[float] = []
    if config.variant != "baseline" and with_decoder:
        targets = list(frozen_targets) if frozen_targets is not None else a[:L]
        if len(targets) != L:
            raise ShapeError(f"need {L} reconstruction targets, got {len(targets)}")
        record.loss_targets = targets
        if config.variant in ("sae-first", "sae-all"):
            record.dec_inputs, record.dec_pre = {}, {}
            a_hat: list = [None] * (L + 1)
            a_hat[L] = a[L]
            for li in range(L, 0, -1):
                a_hat[li - 1] = _dec_layer_forward(
                    store, config, li, a_hat[li], switches[li],
                    record.dec_inputs, record.dec_pre,
                )
            record.a_hat = a_hat
            recon_terms = [tensor.sum_sq_diff(a_hat[l], targets[l]) / n for l in range(L)]
        else:  # sae-layerwise
            record.lw_dec_inputs, record.lw_dec_pre = {}, {}
            lw = [None] * L
            for li in range(1, L + 1):
                lw[li - 1] = _dec_layer_forward(
                    store, config, li, a[li], switches[li],
                    record.lw_dec_inputs, record.lw_dec_pre,
                )
            record.lw_outputs = lw
            recon_terms = [tensor.sum_sq_diff(lw[l], targets[l]) / n for l in range(L)]

    recon_total = reconstruction_total(recon_terms, config)
    record.losses = {
        "cls": loss_cls,
        "recon_terms": tuple(recon_terms),
        "recon_total": recon_total,
        "total": loss_cls + config.recon_weight * recon_total,
    }
    return record


def reconstruction_total(raw_terms, config: NetworkConfig) -> float:
    """Weighted reconstruction loss shared by every autoencoder variant.

    sae-all and sae-layerwise sum every per-layer term; sae-first keeps
    only the image-level term (weighted by layer_loss_weights[0]).  The
    expression is identical for sae-all and sae-layerwise; the variants
    differ only in how the reconstructions were produced.
    """
    if not raw_terms:
        return 0.0
    g = config.layer_loss_weights
    if config.variant == "sae-first":
        return g[0] * raw_terms[0]
    return float(sum(gl * dl for gl, dl in zip(g, raw_terms)))


def backward(record: ForwardRecord, store: ParameterStore, config: NetworkConfig) -> dict[str, np.ndarray]:
    """Gradients of the total loss for every parameter in the store.

    Reconstruction targets are constants; pooling switches carry no
    gradient.  With recon_weight == 0 the decoder branch is skipped
    entirely, so decoder gradients are exact zeros and encoder gradients
    are bit-identical to a baseline run.
    """
    if record.params_version != store.version:
        raise StaleRecordError("forward record predates a parameter update")
    L = config.depth
    n = record.x.shape[0]
    lam = config.recon_weight
    grads = {k: np.zeros_like(v) for k, v in store.params.items()}

    enc_grad_a: list = [None] * (L + 1)

    # classification branch
    if record.grad_logits is not None:
        g = record.grad_logits
        n_head = len(config.head_layer_dims())
        for i in reversed(range(n_head)):
            if i != n_head - 1:
                g = relu_backward(g, record.head_pre[i])
            lg = inner_product_backward(record.head_inputs[i], store.params[f"head.ip{i}.w"], g)
            grads[f"head.ip{i}.w"] += lg.grad_weights
            grads[f"head.ip{i}.b"] += lg.grad_bias
            g = lg.grad_input
        enc_grad_a[L] = g

    # reconstruction branch
    if config.variant != "baseline" and lam != 0.0:
        gammas = config.layer_loss_weights
        if config.variant in ("sae-first", "sae-all"):
            if record.a_hat is None:
                raise StaleRecordError("record has no decoder pass; forward ran with_decoder=False")
            g_hat = [None] * (L + 1)
            for li in range(1, L + 1):
                lo = li - 1
                g_out = g_hat[lo]
                use_loss = (config.variant == "sae-all") or lo == 0
                if use_loss and gammas[lo] != 0.0:
                    _, g_term = weighted_l2_loss(record.a_hat[lo], record.loss_targets[lo], gammas[lo])
                    g_term = lam * g_term
                    g_out = g_term if g_out is None else g_out + g_term
                if g_out is None:
                    g_out = np.zeros_like(record.a_hat[lo])
                g_top, _ = _dec_layer_backward(store, config, li, g_out, record.dec_inputs, record.dec_pre, grads)
                sw = record.switches[li] if config.switch_mode == "known" else None
                k = config.macro_layers[li - 1].pool
                g_hat[li] = unpool_backward(g_top, sw, k, k, k)
            if enc_grad_a[L] is None:
                enc_grad_a[L] = g_hat[L]
            else:
                enc_grad_a[L] = enc_grad_a[L] + g_hat[L]
        else:  # sae-layerwise
            if record.lw_outputs is None:
                raise StaleRecordError("record has no decoder pass; forward ran with_decoder=False")
            for li in range(1, L + 1):
                lo = li - 1
                if gammas[lo] == 0.0:
                    continue
                _, g_out = weighted_l2_loss(record.lw_outputs[lo], record.loss_targets[lo], gammas[lo])
                g_out = lam * g_out
                g_top, _ = _dec_layer_backward(
                    store, config, li, g_out, record.lw_dec_inputs, record.lw_dec_pre, grads
                )
                sw = record.switches[li] if config.switch_mode == "known" else None
                k = config.macro_layers[li - 1].pool
                g_in = unpool_backward(g_top, sw, k, k, k)
                enc_grad_a[li] = g_in if enc_grad_a[li] is None else enc_grad_a[li] + g_in

    # encoder sweep, top down
    for li in range(L, 0, -1):
        ml = config.macro_layers[li - 1]
        g = enc_grad_a[li]
        if g is None:
            continue
        g = maxpool_backward(g, record.switches[li], record.pre_pool[li].shape, ml.pool, ml.pool, ml.pool)
        for ji in reversed(range(len(ml.convs))):
            spec = ml.convs[ji]
            g = relu_backward(g, record.pre_acts[li][ji])
            lg = conv2d_backward(record.conv_inputs[li][ji], store.params[f"encoder.m{li}.conv{ji}.w"], spec, g)
            grads[f"encoder.m{li}.conv{ji}.w"] += lg.grad_weights
            if lg.grad_bias is not None:
                grads[f"encoder.m{li}.conv{ji}.b"] += lg.grad_bias
            g = lg.grad_input
        if enc_grad_a[li - 1] is None:
            enc_grad_a[li - 1] = g
        else:
            enc_grad_a[li - 1] = enc_grad_a[li - 1] + g

    return grads


# -- checkpoints -------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def save_checkpoint(store: ParameterStore, path, config_hash: str,
                    iteration: int = 0, phase: int = 0, phase_iteration: int = 0) -> None:
    import os

    os.makedirs(path, exist_ok=True)
    lines = [
        f"config_hash = {config_hash}",
        f"iteration = {iteration}",
        f"phase = {phase}",
        f"phase_iteration = {phase_iteration}",
    ]
    for name in sorted(store.params):
        fname = f"{name}.swtn"
        tensor.save_tensor(store.params[name], os.path.join(path, fname))
        lines.append(f"param.{name} = {fname}")
    for name in sorted(store.velocities):
        fname = f"velocity.{name}.swtn"
        tensor.save_tensor(store.velocities[name], os.path.join(path, fname))
        lines.append(f"velocity.{name} = {fname}")
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (params, velocities, meta) as plain dicts."""
    import os

    manifest = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise CheckpointError(f"no checkpoint manifest at {manifest}")
    params, velocities, meta = {}, {}, {}
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(" = ")
            if key.startswith("param."):
                params[key[len("param."):]] = tensor.load_tensor(os.path.join(path, value))
            elif key.startswith("velocity."):
                velocities[key[len("velocity."):]] = tensor.load_tensor(os.path.join(path, value))
            else:
                meta[key] = value
    return params, velocities, meta


def restore_checkpoint(store: ParameterStore, path, expected_hash: Optional[str] = None) -> dict:
    """Load a checkpoint into an existing store; geometry and hash must match."""
    params, velocities, meta = load_checkpoint(path)
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        raise CheckpointError(
            f"checkpoint config hash {meta.get('config_hash')} != expected {expected_hash}"
        )
    if set(params) != set(store.params):
        raise CheckpointError("checkpoint parameter names do not match the network")
    for name, value in params.items():
        if value.shape != store.params[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} vs {store.params[name].shape}")
        store.params[name][...] = value
    for name, value in velocities.items():
        store.velocities[name][...] = value
    store.version += 1
    return meta


def init_from_checkpoint(store: ParameterStore, path) -> list[str]:
    """Seed matching parameter tensors from a (possibly foreign) checkpoint.

    Used to start an autoencoder run from a pretrained classifier: every
    checkpoint tensor whose name and shape match is copied, the rest of the
    store (typically the decoder) keeps its fresh initialization.
    """
    params, _, _ = load_checkpoint(path)
    loaded = []
    for name, value in params.items():
        if name in store.params:
            if value.shape != store.params[name].shape:
                raise CheckpointError(f"{name}: shape {value.shape} vs {store.params[name].shape}")
            store.params[name][...] = value
            loaded.append(name)
    if not loaded:
        raise CheckpointError(f"no parameter in {path} matches the network")
    store.version += 1
    return loaded
