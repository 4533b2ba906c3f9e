"""Metrics, the activation-inversion harness, and the gradient-check oracle."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .exceptions import ConfigError
from .network import NetworkConfig, ParameterStore, backward, forward, _dec_layer_forward

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    top1: float
    topk: float
    k: int
    sample_count: int
    mean_recon_l2: Optional[float] = None
    per_layer_recon: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"sample_count = {self.sample_count}",
            f"top1 = {self.top1!r}",
            f"top{self.k} = {self.topk!r}",
        ]
        if self.mean_recon_l2 is not None:
            lines.append(f"mean_recon_l2 = {self.mean_recon_l2!r}")
            for l, v in enumerate(self.per_layer_recon):
                lines.append(f"recon_l{l} = {v!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def top_k_accuracy(logits: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits.

    Ties break toward the lower class index (stable sort on the negated
    logits), so the metric is deterministic for degenerate score vectors.
    """
    labels = np.asarray(labels)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())


def predict_logits(store: ParameterStore, config: NetworkConfig, images: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, images.shape[0], batch_size):
        record = forward(store, config, images[start : start + batch_size], with_decoder=False)
        out.append(record.logits)
    return np.concatenate(out, axis=0)


def _image_reconstruction(record, config: NetworkConfig) -> np.ndarray:
    if config.variant in ("sae-first", "sae-all"):
        return record.a_hat[0]
    if config.variant == "sae-layerwise":
        return record.lw_outputs[0]
    raise ConfigError("baseline variant has no decoding pathway to evaluate")


def reconstruction_l2(store: ParameterStore, config: NetworkConfig, dataset: Dataset,
                      batch_size: int = 64) -> float:
    """Mean over samples of the summed squared image reconstruction error.

    Per-sample errors are accumulated in float64, so the value does not
    depend on how the dataset is batched.  No augmentation is applied.
    """
    total = 0.0
    for start in range(0, dataset.n, batch_size):
        x = dataset.images[start : start + batch_size]
        record = forward(store, config, x)
        x_hat = _image_reconstruction(record, config)
        diff = (x_hat.astype(np.float64) - x.astype(np.float64)) ** 2
        total += float(diff.sum(axis=(1, 2, 3)).sum())
    return total / dataset.n


def evaluate(store: ParameterStore, config: NetworkConfig, dataset: Dataset,
             k: int = 5, batch_size: int = 256) -> EvalReport:
    """Top-1/top-k accuracy plus reconstruction metrics when a decoder exists."""
    k = min(k, config.num_classes)
    logits = predict_logits(store, config, dataset.images, batch_size)
    report = EvalReport(
        top1=top_k_accuracy(logits, dataset.labels, 1),
        topk=top_k_accuracy(logits, dataset.labels, k),
        k=k, sample_count=dataset.n,
    )
    if config.variant != "baseline":
        totals = np.zeros(config.depth, dtype=np.float64)
        for start in range(0, dataset.n, batch_size):
            x = dataset.images[start : start + batch_size]
            record = forward(store, config, x)
            totals += np.asarray(record.losses["recon_terms"]) * x.shape[0]
        per_layer = (totals / dataset.n).tolist()
        report.mean_recon_l2 = per_layer[0]
        report.per_layer_recon = per_layer
    return report


def decode_from_layer(store: ParameterStore, config: NetworkConfig, record,
                      layer_index: int) -> np.ndarray:
    """Decode down to the image from the pooled activation of `layer_index`."""
    if not (0 <= layer_index <= config.depth):
        raise ConfigError(f"layer_index must be in [0, {config.depth}]")
    if layer_index == 0:
        return record.x
    t = record.a[layer_index]
    scratch_in, scratch_pre = {}, {}
    for li in range(layer_index, 0, -1):
        t = _dec_layer_forward(store, config, li, t, record.switches[li], scratch_in, scratch_pre)
    return t


def invert_from_layer(store: ParameterStore, config: NetworkConfig, layer_index: int,
                      dataset: Dataset, switch_mode: str, out_dir=None,
                      max_dump: int = 8, batch_size: int = 64) -> tuple[EvalReport, list]:
    """Reconstruct images from an intermediate activation and measure L2.

    The encoder runs as configured; decoding uses the requested unpooling
    mode so one trained checkpoint can be probed with both known and fixed
    switches.  With `out_dir` set, a side-by-side grid (originals on top,
    reconstructions below) is written as a PNG.
    """
    eff = dataclasses.replace(config, switch_mode=switch_mode)
    total = 0.0
    dumped: list = []
    first_x = first_hat = None
    logits_all = []
    for start in range(0, dataset.n, batch_size):
        x = dataset.images[start : start + batch_size]
        record = forward(store, eff, x, with_decoder=False)
        logits_all.append(record.logits)
        x_hat = decode_from_layer(store, eff, record, layer_index)
        if first_x is None:
            first_x, first_hat = x[:max_dump], x_hat[:max_dump]
        diff = (x_hat.astype(np.float64) - x.astype(np.float64)) ** 2
        total += float(diff.sum(axis=(1, 2, 3)).sum())
    logits = np.concatenate(logits_all, axis=0)
    k = min(5, eff.num_classes)
    report = EvalReport(
        top1=top_k_accuracy(logits, dataset.labels, 1),
        topk=top_k_accuracy(logits, dataset.labels, k),
        k=k, sample_count=dataset.n,
        mean_recon_l2=total / dataset.n,
    )
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        grid = comparison_grid(first_x, first_hat)
        path = os.path.join(out_dir, f"recon_layer{layer_index}_{switch_mode}.png")
        dump_png(grid, path)
        dumped.append(path)
    return report, dumped


# -- image dumps --------------------------------------------------------------


def to_u8(values: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and quantize, round-half-up (0.5 -> 128)."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def comparison_grid(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """(n,C,H,W) x2 -> (C, 2H, n*W): originals over reconstructions."""
    if top.shape != bottom.shape:
        raise ConfigError(f"grid rows differ: {top.shape} vs {bottom.shape}")
    n, c, h, w = top.shape
    rows = [np.concatenate(list(r.transpose(0, 1, 2, 3)), axis=-1) for r in (top, bottom)]
    return np.concatenate(rows, axis=-2)


def dump_png(values: np.ndarray, path) -> None:
    """Write a [0,1]-valued (H,W), (1,H,W) or (3,H,W) array as an 8-bit PNG."""
    from PIL import Image

    arr = to_u8(values)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    elif arr.ndim == 3 and arr.shape[0] == 3:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ConfigError(f"cannot dump array of shape {values.shape} as PNG")


# -- gradient checking --------------------------------------------------------


@dataclass
class GroupCheck:
    name: str
    status: str  # "checked" or "zero_gradient"
    max_rel_err: float = 0.0
    n_checked: int = 0
    worst: list = field(default_factory=list)  # [(coord, analytic, numeric, rel)]


@dataclass
class GradcheckReport:
    groups: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(g.max_rel_err <= self.tolerance for g in self.groups if g.status == "checked")

    def worst_lines(self) -> list[str]:
        lines = []
        for g in self.groups:
            if g.status != "checked":
                lines.append(f"{g.name}: {g.status}, skipped")
                continue
            mark = "OK" if g.max_rel_err <= self.tolerance else "FAIL"
            coord, a, n_, rel = g.worst[0]
            lines.append(
                f"{g.name}: max_rel {g.max_rel_err:.3e} at {coord} "
                f"(analytic {a:.6e}, numeric {n_:.6e}) over {g.n_checked} coords [{mark}]"
            )
        return lines


def gradcheck(store: ParameterStore, config: NetworkConfig, x: np.ndarray, labels,
              h: float = 1e-5, tolerance: float = 1e-4, coords_per_group: int = 200,
              seed: int = 0) -> GradcheckReport:
    """Central-difference check of every parameter gradient.

    Each parameter tensor is a group; up to `coords_per_group` coordinates
    are probed per group.  Relative error is |a-n| / max(|a|,|n|,1e-8).
    Groups whose analytic gradient is identically zero (e.g. the decoder
    when recon_weight is 0) are reported as zero-gradient and skipped.
    Requires a float64 build.
    """
    if config.precision != "f64":
        raise ConfigError("gradient checking requires an f64 build")
    record = forward(store, config, x, labels)
    analytic = backward(record, store, config)
    rng = np.random.Generator(np.random.PCG64(seed))
    # reconstruction targets enter the loss as constants, so the numeric
    # probe must difference the loss with the targets pinned at base values
    targets = record.loss_targets

    def loss() -> float:
        return forward(store, config, x, labels, frozen_targets=targets).losses["total"]

    groups = []
    for name, theta in store.params.items():
        a_grad = analytic[name]
        if not np.any(a_grad):
            groups.append(GroupCheck(name, "zero_gradient"))
            continue
        size = theta.size
        n_probe = min(size, coords_per_group)
        coords = rng.choice(size, size=n_probe, replace=False)
        flat = theta.reshape(-1)
        check = GroupCheck(name, "checked", n_checked=n_probe)
        worst = []
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + h
            store.version += 1
            lp = loss()
            flat[ci] = orig - h
            store.version += 1
            lm = loss()
            flat[ci] = orig
            store.version += 1
            numeric = (lp - lm) / (2.0 * h)
            a_val = float(a_grad.reshape(-1)[ci])
            rel = abs(a_val - numeric) / max(abs(a_val), abs(numeric), 1e-8)
            worst.append((np.unravel_index(ci, theta.shape), a_val, numeric, rel))
        worst.sort(key=lambda t: -t[3])
        check.worst = worst[:3]
        check.max_rel_err = worst[0][3]
        groups.append(check)
    # the parameter restore bumped the version; refresh the record marker
    record.params_version = store.version
    return GradcheckReport(groups, tolerance)


def kink_margin(record, config: NetworkConfig) -> float:
    """Distance of the forward pass from ReLU kinks and pooling ties.

    Finite differencing is only trustworthy when no probe can flip a ReLU
    state or a pooling argmax; callers redraw their case until this margin
    is comfortably above the step size.
    """
    from .layers import _windowed

    margins = []
    for li in range(1, config.depth + 1):
        for v in record.pre_acts[li]:
            margins.append(float(np.abs(v).min()))
        k = config.macro_layers[li - 1].pool
        if k > 1:
            win = np.sort(_windowed(record.pre_pool[li], k), axis=-1)
            # a tie can only flip if the runner-up can move; entries pinned
            # at 0 by ReLU are already covered by the kink margins above
            second = win[..., -2]
            contested = second > 0
            if np.any(contested):
                margins.append(float((win[..., -1] - second)[contested].min()))
    for i, v in enumerate(record.head_pre[:-1]):
        margins.append(float(np.abs(v).min()))
    for cache in (record.dec_pre, record.lw_dec_pre):
        if cache:
            for (li, ji), v in cache.items():
                if li == 1 and ji == 0 and config.decoder_output_activation == "linear":
                    continue
                margins.append(float(np.abs(v).min()))
    return min(margins) if margins else np.inf


def make_gradcheck_case(variant: str, switch_mode: str, seed: int = 0,
                        recon_weight: float = 0.7, min_margin: float = 1e-3):
    """Built-in tiny f64 network for gradient checking: 1x8x8 input, two
    macro-layers of 4 channels, ten classes.

    Draws (parameters, input) repeatedly until the forward pass sits at
    least `min_margin` away from every ReLU kink and pooling tie, so
    central differences with h ~ 1e-5 stay on one side of each kink.
    """
    from .layers import ConvSpec
    from .network import MacroLayerSpec, build_network

    config = NetworkConfig(
        input_channels=1,
        input_hw=(8, 8),
        macro_layers=(
            MacroLayerSpec(convs=(ConvSpec(1, 4, 3, 3, pad=1),), pool=2),
            MacroLayerSpec(convs=(ConvSpec(4, 4, 3, 3, pad=1),), pool=2),
        ),
        num_classes=10,
        head_units=(),
        variant=variant,
        switch_mode=switch_mode,
        recon_weight=recon_weight,
        layer_loss_weights=(1.0, 0.5),
        precision="f64",
    )
    for attempt in range(64):
        case_seed = seed + 1000 * attempt
        store = build_network(config, case_seed)
        rng = np.random.Generator(np.random.PCG64(case_seed + 17))
        x = rng.uniform(0.05, 0.95, size=(2, 1, 8, 8)).astype(np.float64)
        labels = rng.integers(0, config.num_classes, size=2)
        record = forward(store, config, x, labels)
        if kink_margin(record, config) >= min_margin:
            return store, config, x, labels
    raise RuntimeError("could not find a kink-free gradcheck case; widen min_margin")
