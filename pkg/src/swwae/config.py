"""Run configuration documents.

A run is described by an INI-style text file with [run], [data], [network],
[augment], and [train.step{2,3,4}] sections.  Unknown sections or keys are
rejected, and every referenced input path must exist when the file is
parsed.  See the README for a complete annotated example.
"""

from __future__ import annotations

import configparser
import hashlib
import os
import re
from dataclasses import dataclass, field

from .data import AugmentSpec
from .exceptions import ConfigError
from .layers import ConvSpec
from .network import MacroLayerSpec, NetworkConfig
from .training import SgdConfig, TrainPlan

_RUN_KEYS = {"out_dir", "seed", "precision", "checkpoint_every", "eval_every"}
_DATA_KEYS = {"train_images", "train_labels", "test_images", "test_labels"}
_NETWORK_KEYS = {
    "in_channels", "in_size", "classes", "pool", "head", "variant", "switch_mode",
    "recon_weight", "gammas", "gamma_target", "decoder_output",
}
_AUGMENT_KEYS = {"enabled", "pad", "crop", "mirror_prob"}
_STEP_KEYS = {
    "lr", "momentum", "weight_decay", "batch_size", "iterations",
    "lr_step_factor", "lr_step_every", "layer_lr_multipliers",
}

_CONV_TOKEN = re.compile(r"^(\d+)k(\d+)(?:p(\d+))?(?:s(\d+))?$")


@dataclass
class RunConfig:
    network: NetworkConfig
    plan: TrainPlan
    augment: AugmentSpec
    data_paths: dict
    out_dir: str
    seed: int
    path: str = ""
    raw_gammas: str = "auto"

    def fingerprint(self) -> str:
        return network_fingerprint(self.network)


def network_fingerprint(config: NetworkConfig) -> str:
    """Hash of the parameter geometry; checkpoints must match it to resume.

    Covers everything that determines which tensors exist and their shapes
    (architecture, precision, decoder presence) but not loss weights or the
    unpooling mode, so one checkpoint can be probed under either mode.
    """
    parts = [
        config.input_channels, config.input_hw, config.num_classes,
        config.head_units, config.precision, config.variant != "baseline",
        tuple(
            (tuple((s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride, s.pad, s.has_bias)
                   for s in ml.convs), ml.pool)
            for ml in config.macro_layers
        ),
    ]
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


def _check_keys(parser, section: str, allowed: set) -> None:
    for key in parser[section]:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{key}' in section [{section}]")


def _parse_int(section, key, default=None):
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key '{key}'")
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected integer, got {raw!r}") from exc


def _parse_float(section, key, default):
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected number, got {raw!r}") from exc


def _parse_conv_stack(value: str, in_channels: int) -> tuple[ConvSpec, ...]:
    specs = []
    c = in_channels
    for token in (t.strip() for t in value.split(",")):
        m = _CONV_TOKEN.match(token)
        if not m:
            raise ConfigError(
                f"bad conv token {token!r}; expected OUTCHkKERNEL[pPAD][sSTRIDE], e.g. 8k5p2"
            )
        out_c, k, pad, stride = int(m[1]), int(m[2]), int(m[3] or 0), int(m[4] or 1)
        specs.append(ConvSpec(c, out_c, k, k, stride=stride, pad=pad))
        c = out_c
    return tuple(specs)


def _parse_hw(value: str) -> tuple[int, int]:
    if "x" in value:
        h, w = value.split("x", 1)
        return int(h), int(w)
    return int(value), int(value)


def _parse_step(section, default_batch: int, depth: int, want_multipliers: bool):
    lr = _parse_float(section, "lr", None)
    if lr is None:
        raise ConfigError(f"missing required key 'lr' in [{section.name}]")
    cfg = SgdConfig(
        lr=lr,
        momentum=_parse_float(section, "momentum", 0.9),
        weight_decay=_parse_float(section, "weight_decay", 0.0),
        batch_size=_parse_int(section, "batch_size", default_batch),
        iterations=_parse_int(section, "iterations", 0),
        lr_step_factor=_parse_float(section, "lr_step_factor", 1.0),
        lr_step_every=_parse_int(section, "lr_step_every", 0),
    )
    multipliers: tuple[float, ...] = ()
    raw = section.get("layer_lr_multipliers")
    if raw:
        if not want_multipliers:
            raise ConfigError(f"layer_lr_multipliers only applies to [train.step2]")
        multipliers = tuple(float(v) for v in raw.split(","))
        if len(multipliers) != depth:
            raise ConfigError(
                f"layer_lr_multipliers needs {depth} entries, got {len(multipliers)}"
            )
    return cfg, multipliers


def load_run_config(path) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    known_sections = {"run", "data", "network", "augment", "train.step2", "train.step3", "train.step4"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown config section [{section}]")
    for name, keys in (("run", _RUN_KEYS), ("data", _DATA_KEYS), ("augment", _AUGMENT_KEYS)):
        if parser.has_section(name):
            _check_keys(parser, name, keys)
    for name in ("train.step2", "train.step3", "train.step4"):
        if parser.has_section(name):
            _check_keys(parser, name, _STEP_KEYS)

    if not parser.has_section("network"):
        raise ConfigError("config needs a [network] section")
    net_sec = parser["network"]
    run_sec = parser["run"] if parser.has_section("run") else {}

    # macro-layer keys are macro1_convs, macro2_convs, ... in order
    macro_keys = sorted(
        (k for k in net_sec if re.match(r"^macro\d+_convs$", k)),
        key=lambda k: int(re.match(r"^macro(\d+)_convs$", k)[1]),
    )
    for key in net_sec:
        if key not in _NETWORK_KEYS and not re.match(r"^macro\d+_convs$", key):
            raise ConfigError(f"unknown config key '{key}' in section [network]")
    if not macro_keys:
        raise ConfigError("[network] needs at least one macroN_convs key")
    expected = [f"macro{i}_convs" for i in range(1, len(macro_keys) + 1)]
    if macro_keys != expected:
        raise ConfigError(f"macro-layer keys must be contiguous from macro1: got {macro_keys}")

    in_channels = _parse_int(net_sec, "in_channels", 1)
    in_hw = _parse_hw(net_sec.get("in_size", "28"))
    pool = _parse_int(net_sec, "pool", 2)
    macro_layers = []
    c = in_channels
    for key in macro_keys:
        convs = _parse_conv_stack(net_sec[key], c)
        macro_layers.append(MacroLayerSpec(convs=convs, pool=pool))
        c = convs[-1].out_channels
    depth = len(macro_layers)

    head_raw = net_sec.get("head", "").strip()
    head_units = tuple(int(v) for v in head_raw.split(",") if v.strip()) if head_raw else ()

    raw_gammas = net_sec.get("gammas", "auto").strip()
    if raw_gammas == "auto":
        gammas = tuple(1.0 for _ in range(depth))
        auto = True
    else:
        gammas = tuple(float(v) for v in raw_gammas.split(","))
        auto = False

    network = NetworkConfig(
        input_channels=in_channels,
        input_hw=in_hw,
        macro_layers=tuple(macro_layers),
        num_classes=_parse_int(net_sec, "classes", None),
        head_units=head_units,
        variant=net_sec.get("variant", "baseline"),
        switch_mode=net_sec.get("switch_mode", "known"),
        recon_weight=_parse_float(net_sec, "recon_weight", 1.0),
        layer_loss_weights=gammas,
        decoder_output_activation=net_sec.get("decoder_output", "linear"),
        precision=run_sec.get("precision", "f32") if run_sec else "f32",
    )
    network.validate()

    def step(name, default_batch, want_multipliers=False):
        if parser.has_section(name):
            return _parse_step(parser[name], default_batch, depth, want_multipliers)
        return SgdConfig(lr=0.01, batch_size=default_batch), ()

    step2, multipliers = step("train.step2", 16, want_multipliers=True)
    step3, _ = step("train.step3", 16)
    step4, _ = step("train.step4", 64)

    plan = TrainPlan(
        step2=step2, step3=step3, step4=step4,
        layer_lr_multipliers=multipliers,
        seed=_parse_int(run_sec, "seed", 0) if run_sec else 0,
        auto_gammas=auto,
        gamma_target=_parse_float(net_sec, "gamma_target", 1.0),
        eval_every=_parse_int(run_sec, "eval_every", 0) if run_sec else 0,
        checkpoint_every=_parse_int(run_sec, "checkpoint_every", 0) if run_sec else 0,
    )

    aug = AugmentSpec(enabled=False, crop_h=in_hw[0], crop_w=in_hw[1])
    if parser.has_section("augment"):
        aug_sec = parser["augment"]
        crop_h, crop_w = _parse_hw(aug_sec.get("crop", f"{in_hw[0]}x{in_hw[1]}"))
        aug = AugmentSpec(
            enabled=aug_sec.get("enabled", "false").lower() in ("1", "true", "yes"),
            pad=_parse_int(aug_sec, "pad", 2),
            crop_h=crop_h, crop_w=crop_w,
            mirror_prob=_parse_float(aug_sec, "mirror_prob", 0.5),
        )

    data_paths = {}
    if parser.has_section("data"):
        for key in _DATA_KEYS:
            value = parser["data"].get(key)
            if value:
                resolved = os.path.join(os.path.dirname(os.path.abspath(path)), value) \
                    if not os.path.isabs(value) else value
                if not os.path.isfile(resolved):
                    raise ConfigError(f"data path for '{key}' does not exist: {resolved}")
                data_paths[key] = resolved

    out_dir = run_sec.get("out_dir", "") if run_sec else ""
    if out_dir and not os.path.isabs(out_dir):
        out_dir = os.path.join(os.path.dirname(os.path.abspath(path)), out_dir)

    return RunConfig(
        network=network, plan=plan, augment=aug, data_paths=data_paths,
        out_dir=out_dir, seed=plan.seed, path=str(path), raw_gammas=raw_gammas,
    )
