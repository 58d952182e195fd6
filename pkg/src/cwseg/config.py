"""Run configuration: YAML documents, ablation presets, flag overrides.

Resolution order (later wins): built-in defaults -> preset expansion ->
config file sections -> command-line flag overrides. The fully resolved
document is printed and persisted before any work starts, so a run directory
always records exactly what produced it.

Validation is strict: unknown keys are rejected with the YAML line number.
One top-level seed drives training, and the split seed defaults to it unless
set explicitly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import yaml

from .core import ConfigError
from .data import DatasetSpec, SplitSpec
from .train import TrainConfig, train_config_from_dict, train_config_to_dict

# Ablation presets: each row toggles one mechanism over the plain
# confidence-weighted baseline; "full" enables everything. The two
# hyperparameter groups share the full pipeline and differ only in
# (gamma, beta, alpha).
PRESETS: dict[str, dict] = {
    "suponly": {
        "loss": {"lambda_unsup": 0.0, "boundary_coeff": 0.0},
        "threshold": {"dynamic": False},
        "decay": {"enabled": False},
    },
    "weighted": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.0},
        "threshold": {"dynamic": False},
        "decay": {"enabled": False},
    },
    "weighted+decay": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.0},
        "threshold": {"dynamic": False},
        "decay": {"enabled": True, "alpha": 0.9},
    },
    "weighted+threshold": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.0},
        "threshold": {"dynamic": True},
        "decay": {"enabled": False},
    },
    "weighted+boundary": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.5},
        "threshold": {"dynamic": False},
        "decay": {"enabled": False},
    },
    "full": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.5},
        "threshold": {"dynamic": True},
        "decay": {"enabled": True},
    },
    "standard": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.5, "gamma": 1.0},
        "threshold": {"dynamic": True, "beta": 0.5},
        "decay": {"enabled": True, "alpha": 0.9},
    },
    "conservative": {
        "loss": {"lambda_unsup": 1.0, "boundary_coeff": 0.5, "gamma": 0.5},
        "threshold": {"dynamic": True, "beta": 1.0},
        "decay": {"enabled": True, "alpha": 1.0},
    },
}

_LEAF = None

_TRAIN_SCHEMA = {
    "stage1_epochs": _LEAF, "stage2_epochs": _LEAF,
    "batch_size_labeled": _LEAF, "batch_size_unlabeled": _LEAF,
    "lr_initial": _LEAF, "momentum": _LEAF, "weight_decay": _LEAF,
    "poly_power": _LEAF, "crop_size": _LEAF, "scale_range": _LEAF,
    "flip_prob": _LEAF, "model_widths": _LEAF,
    "teacher_copy_every_epochs": _LEAF, "student_loss_includes_labeled": _LEAF,
    "deterministic": _LEAF,
    "loss": {"gamma": _LEAF, "lambda_unsup": _LEAF, "boundary_coeff": _LEAF},
    "threshold": {"t0": _LEAF, "beta": _LEAF, "clamp_low": _LEAF,
                  "clamp_high": _LEAF, "dynamic": _LEAF},
    "decay": {"alpha": _LEAF, "enabled": _LEAF, "refresh_on_teacher_update": _LEAF},
    "strong": {"enabled": _LEAF, "channel_jitter": _LEAF, "channel_shift": _LEAF,
               "grayscale_prob": _LEAF, "blur_prob": _LEAF, "blur_sigma_range": _LEAF,
               "cutout_prob": _LEAF, "cutout_frac": _LEAF},
}

SCHEMA = {
    "preset": _LEAF,
    "seed": _LEAF,
    "out_dir": _LEAF,
    "data": {"kind": _LEAF, "root": _LEAF, "num_classes": _LEAF, "ignore_index": _LEAF},
    "split": {"labeled_fraction": _LEAF, "seed": _LEAF, "explicit_list": _LEAF},
    "train": _TRAIN_SCHEMA,
}


@dataclass(frozen=True)
class RunConfig:
    preset: str | None
    seed: int
    out_dir: Path
    data: DatasetSpec
    split: SplitSpec
    train: TrainConfig


def default_run_dict() -> dict:
    train = train_config_to_dict(TrainConfig())
    del train["num_classes"]  # always taken from the data section
    del train["seed"]  # always taken from the top-level seed
    return {
        "preset": None,
        "seed": 0,
        "out_dir": "runs/run",
        "data": {"kind": "synthetic", "root": "data/synthetic",
                 "num_classes": 4, "ignore_index": 255},
        "split": {"labeled_fraction": "1/8", "seed": None, "explicit_list": None},
        "train": train,
    }


def _check_keys(node, schema, path: str, errors: list[str]) -> None:
    if not isinstance(node, yaml.MappingNode):
        return
    for key_node, value_node in node.value:
        key = str(key_node.value)
        dotted = f"{path}.{key}" if path else key
        if key not in schema:
            errors.append(f"line {key_node.start_mark.line + 1}: unknown key '{dotted}'")
        elif isinstance(schema[key], dict):
            _check_keys(value_node, schema[key], dotted, errors)


def load_config_file(path) -> dict:
    """Parse and schema-check a YAML config; unknown keys fail with line numbers."""
    text = Path(path).read_text()
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if root is None:
        return {}
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{path}: top level must be a mapping")
    errors: list[str] = []
    _check_keys(root, SCHEMA, "", errors)
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))
    loaded = yaml.safe_load(text)
    return loaded or {}


def _deep_merge(dst: dict, src: dict) -> dict:
    for key, value in src.items():
        if isinstance(value, dict) and isinstance(dst.get(key), dict):
            _deep_merge(dst[key], value)
        elif value is not None or key in ("explicit_list", "preset"):
            dst[key] = value
    return dst


def parse_fraction(value) -> Fraction:
    try:
        if isinstance(value, float):
            return Fraction(str(value))
        return Fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"invalid fraction {value!r}: {exc}") from exc


def resolve_run_config(config_path=None, preset: str | None = None,
                       overrides: dict | None = None) -> tuple[RunConfig, dict]:
    """Merge defaults, preset, file, and flag overrides into a RunConfig.

    Returns the typed config plus the plain resolved dict (for printing and
    persisting).
    """
    resolved = copy.deepcopy(default_run_dict())
    file_dict = load_config_file(config_path) if config_path else {}
    preset_name = preset or file_dict.get("preset")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset_name!r}; available: {', '.join(sorted(PRESETS))}"
            )
        _deep_merge(resolved["train"], copy.deepcopy(PRESETS[preset_name]))
    _deep_merge(resolved, file_dict)
    if overrides:
        _deep_merge(resolved, copy.deepcopy(overrides))
    resolved["preset"] = preset_name

    if resolved["split"]["seed"] is None:
        resolved["split"]["seed"] = resolved["seed"]

    data_d = resolved["data"]
    try:
        data_spec = DatasetSpec(kind=data_d["kind"], root=Path(data_d["root"]),
                                num_classes=int(data_d["num_classes"]),
                                ignore_index=int(data_d["ignore_index"]))
        split_spec = SplitSpec(
            labeled_fraction=parse_fraction(resolved["split"]["labeled_fraction"]),
            seed=int(resolved["split"]["seed"]),
            explicit_list=(Path(resolved["split"]["explicit_list"])
                           if resolved["split"]["explicit_list"] else None),
        )
        train_d = copy.deepcopy(resolved["train"])
        train_d["num_classes"] = data_spec.num_classes
        train_d["seed"] = int(resolved["seed"])
        train_cfg = train_config_from_dict(train_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    run = RunConfig(preset=preset_name, seed=int(resolved["seed"]),
                    out_dir=Path(resolved["out_dir"]), data=data_spec,
                    split=split_spec, train=train_cfg)
    resolved["split"]["labeled_fraction"] = str(split_spec.labeled_fraction)
    return run, resolved


def dump_resolved(resolved: dict) -> str:
    """YAML text of the resolved config, stable key order."""

    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, Fraction):
            return str(obj)
        return obj

    return yaml.safe_dump(plain(resolved), sort_keys=False, default_flow_style=False)
