"""SGD with momentum and the staged training procedure.

Training runs in up to three explicit phases after initialization:

* phase 2: freeze encoder+head, train the layer-wise decoding pathways
  (the network is wired as ``sae-layerwise`` for this phase regardless of
  the target variant), small batches, optional per-macro-layer learning
  rates;
* phase 3: keep the encoder frozen and finetune the stacked decoder under
  the target variant's own loss (a no-op for ``sae-layerwise``);
* phase 4: unfreeze everything and optimize the joint objective with a
  reduced learning rate and a larger batch.

The update rule is heavy-ball: v <- momentum*v - lr*(g + wd*theta);
theta <- theta + v.  Every phase derives its data order and augmentation
draws from (seed, phase, iteration), so runs are reproducible and
resumable with no hidden RNG state.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Optional

import numpy as np

from .data import AugmentSpec, Dataset, augment, epoch_permutation
from .exceptions import ConfigError, DivergenceError
from .network import (
    NetworkConfig,
    ParameterStore,
    backward,
    forward,
    set_trainable,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 16
    iterations: int = 0
    lr_step_factor: float = 1.0  # constant schedule unless < 1
    lr_step_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    def lr_at(self, iteration: int) -> float:
        if self.lr_step_every > 0:
            return self.lr * self.lr_step_factor ** (iteration // self.lr_step_every)
        return self.lr


@dataclass(frozen=True)
class TrainPlan:
    step2: SgdConfig
    step3: SgdConfig
    step4: SgdConfig
    layer_lr_multipliers: tuple[float, ...] = ()  # phase-2 per-macro-layer factors
    seed: int = 0
    auto_gammas: bool = True
    gamma_target: float = 1.0
    eval_every: int = 0
    checkpoint_every: int = 0
    divergence_factor: float = 1e3


def sgd_step(store: ParameterStore, grads: dict, sgd: SgdConfig, lr: float,
             lr_multiplier: Optional[Callable[[str], float]] = None) -> None:
    """One heavy-ball update over the trainable groups.

    Non-finite gradients abort with the offending tensor name and its max
    magnitude; masked groups keep their parameters and velocities intact.
    """
    for name, theta in store.params.items():
        if not store.is_trainable(name):
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in {name} (max |g| = {float(np.abs(g).max())})"
            )
        eff_lr = lr if lr_multiplier is None else lr * lr_multiplier(name)
        if sgd.weight_decay:
            g = g + sgd.weight_decay * theta
        v = store.velocities[name]
        v *= sgd.momentum
        v -= eff_lr * g
        theta += v
    store.version += 1


class MetricsLog:
    """CSV log: iter,phase,loss_total,loss_cls,loss_recon_l0..,lr.

    The only non-deterministic content is the timestamp, confined to a
    leading comment line; data rows are byte-stable for a given run.
    """

    def __init__(self, path, depth: int, append: bool = False):
        import os

        self.path = path
        exists = path is not None and os.path.exists(path)
        self._fh = None
        if path is not None:
            self._fh = open(path, "a" if append else "w")
            if not (append and exists):
                stamp = datetime.now(timezone.utc).isoformat()
                self._fh.write(f"# started {stamp}\n")
                cols = ["iter", "phase", "loss_total", "loss_cls"]
                cols += [f"loss_recon_l{l}" for l in range(depth)]
                cols.append("lr")
                self._fh.write(",".join(cols) + "\n")
        self.rows: list[dict] = []
        self.depth = depth

    def row(self, iteration: int, phase: int, losses: dict, lr: float) -> None:
        terms = list(losses["recon_terms"]) + [0.0] * (self.depth - len(losses["recon_terms"]))
        entry = {
            "iter": iteration, "phase": phase,
            "loss_total": losses["total"], "loss_cls": losses["cls"],
            "recon": terms, "lr": lr,
        }
        self.rows.append(entry)
        if self._fh is not None:
            parts = [str(iteration), str(phase), repr(float(losses["total"])), repr(float(losses["cls"]))]
            parts += [repr(float(t)) for t in terms]
            parts.append(repr(float(lr)))
            self._fh.write(",".join(parts) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def balance_gammas(store: ParameterStore, config: NetworkConfig,
                   probe_x: np.ndarray, probe_labels, target: float = 1.0) -> tuple[float, ...]:
    """Set each layer weight to target / raw_loss so the weighted terms match.

    Uses one forward pass on the probe batch.  The classification loss
    keeps weight 1 by construction (only the layer weights are scaled).
    A layer with zero raw loss gets weight 0 and a logged warning.
    """
    if config.variant == "baseline":
        return config.layer_loss_weights
    record = forward(store, config, probe_x, probe_labels)
    gammas = []
    for l, raw in enumerate(record.losses["recon_terms"]):
        if config.variant == "sae-first" and l > 0:
            gammas.append(0.0)
            continue
        if raw <= 0.0:
            logger.warning("layer %d raw reconstruction loss is zero; weight set to 0", l)
            gammas.append(0.0)
        else:
            gammas.append(target / raw)
    return tuple(gammas)


def _first_batch(data: Dataset, batch_size: int, seed: int, phase: int):
    perm = epoch_permutation(data.n, seed * 31 + phase, 0)
    idx = perm[:batch_size]
    return data.images[idx], data.labels[idx]


def _augment_rng(seed: int, phase: int, iteration: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, phase, iteration, 7])))


@dataclass
class PhaseResult:
    rows: list
    global_iter: int
    gammas: tuple


def _train_loop(store: ParameterStore, config: NetworkConfig, sgd: SgdConfig, phase: int,
                data: Dataset, plan: TrainPlan, log: MetricsLog,
                global_iter: int, phase_iter: int = 0,
                lr_multiplier=None, augment_spec: Optional[AugmentSpec] = None,
                eval_data: Optional[Dataset] = None,
                on_checkpoint=None, gammas_override=None) -> PhaseResult:
    if phase_iter == 0:
        store.reset_velocities()  # each phase is its own solve; momentum starts cold
    eff_config = config
    if config.variant != "baseline":
        if gammas_override is not None:
            eff_config = dataclasses.replace(config, layer_loss_weights=tuple(gammas_override))
        elif plan.auto_gammas:
            px, py = _first_batch(data, sgd.batch_size, plan.seed, phase)
            gammas = balance_gammas(store, config, px, py, plan.gamma_target)
            eff_config = dataclasses.replace(config, layer_loss_weights=gammas)
            logger.info("phase %d balanced layer weights: %s", phase, gammas)

    batches_per_epoch = (data.n + sgd.batch_size - 1) // sgd.batch_size
    initial_total = None
    for _ in range(sgd.iterations - phase_iter):
        epoch = phase_iter // batches_per_epoch
        pos = phase_iter % batches_per_epoch
        perm = epoch_permutation(data.n, plan.seed * 31 + phase, epoch)
        idx = perm[pos * sgd.batch_size : (pos + 1) * sgd.batch_size]
        x, y = data.images[idx], data.labels[idx]
        if augment_spec is not None and augment_spec.enabled:
            x = augment(x, augment_spec, _augment_rng(plan.seed, phase, phase_iter))

        record = forward(store, eff_config, x, y)
        total = record.losses["total"]
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss at phase {phase} iteration {global_iter}")
        if initial_total is None:
            initial_total = total
        elif total > plan.divergence_factor * max(initial_total, 1e-12):
            raise DivergenceError(
                f"loss diverged at phase {phase} iteration {global_iter}: "
                f"{total:.4g} > {plan.divergence_factor:g} x initial {initial_total:.4g}"
            )
        grads = backward(record, store, eff_config)
        lr = sgd.lr_at(phase_iter)
        sgd_step(store, grads, sgd, lr, lr_multiplier)
        log.row(global_iter, phase, record.losses, lr)

        phase_iter += 1
        global_iter += 1
        if eval_data is not None and plan.eval_every and phase_iter % plan.eval_every == 0:
            from .evaluation import predict_logits, top_k_accuracy

            logits = predict_logits(store, eff_config, eval_data.images)
            top1 = top_k_accuracy(logits, eval_data.labels, 1)
            logger.info("phase %d iter %d validation top-1 %.4f", phase, global_iter, top1)
        if on_checkpoint is not None and plan.checkpoint_every and phase_iter % plan.checkpoint_every == 0:
            on_checkpoint(global_iter, phase_iter, eff_config.layer_loss_weights)

    return PhaseResult(log.rows, global_iter, eff_config.layer_loss_weights)


def run_step2_layerwise(store: ParameterStore, config: NetworkConfig, data: Dataset,
                        plan: TrainPlan, log: MetricsLog, global_iter: int = 0,
                        phase_iter: int = 0, augment_spec=None, on_checkpoint=None,
                        gammas_override=None) -> PhaseResult:
    """Decoder pretraining: layer-wise pathways against a frozen encoder."""
    if config.variant == "baseline":
        logger.info("phase 2 skipped: baseline variant has no decoding pathway")
        return PhaseResult(log.rows, global_iter, config.layer_loss_weights)
    eff = dataclasses.replace(config, variant="sae-layerwise")
    set_trainable(store, {"encoder": False, "head": False, "decoder": True})
    mults = None
    if plan.layer_lr_multipliers:
        if len(plan.layer_lr_multipliers) != config.depth:
            raise ConfigError("layer_lr_multipliers must have one entry per macro-layer")

        def mults(name: str, table=plan.layer_lr_multipliers) -> float:
            if name.startswith("decoder.m"):
                layer = int(name.split(".")[1][1:])
                return table[layer - 1]
            return 1.0

    return _train_loop(store, eff, plan.step2, 2, data, plan, log, global_iter,
                       phase_iter, lr_multiplier=mults, augment_spec=augment_spec,
                       on_checkpoint=on_checkpoint, gammas_override=gammas_override)


def run_step3_stacked(store: ParameterStore, config: NetworkConfig, data: Dataset,
                      plan: TrainPlan, log: MetricsLog, global_iter: int = 0,
                      phase_iter: int = 0, augment_spec=None, on_checkpoint=None,
                      gammas_override=None) -> PhaseResult:
    """Stacked-decoder finetuning under the target variant; encoder stays fixed.

    Skipped for sae-layerwise (its decoder is already in final form) and for
    the baseline.  The decoder continues from the phase-2 parameters held in
    the same store.
    """
    if config.variant in ("baseline", "sae-layerwise"):
        logger.info("phase 3 skipped for variant %s", config.variant)
        return PhaseResult(log.rows, global_iter, config.layer_loss_weights)
    set_trainable(store, {"encoder": False, "head": False, "decoder": True})
    return _train_loop(store, config, plan.step3, 3, data, plan, log, global_iter,
                       phase_iter, augment_spec=augment_spec, on_checkpoint=on_checkpoint,
                       gammas_override=gammas_override)


def run_step4_joint(store: ParameterStore, config: NetworkConfig, data: Dataset,
                    plan: TrainPlan, log: MetricsLog, global_iter: int = 0,
                    phase_iter: int = 0, augment_spec=None,
                    eval_data: Optional[Dataset] = None, on_checkpoint=None,
                    gammas_override=None) -> PhaseResult:
    """Joint finetuning of every pathway under classification + reconstruction."""
    set_trainable(store, {"encoder": True, "head": True, "decoder": True})
    return _train_loop(store, config, plan.step4, 4, data, plan, log, global_iter,
                       phase_iter, augment_spec=augment_spec, eval_data=eval_data,
                       on_checkpoint=on_checkpoint, gammas_override=gammas_override)


PHASE_RUNNERS = {2: run_step2_layerwise, 3: run_step3_stacked, 4: run_step4_joint}
