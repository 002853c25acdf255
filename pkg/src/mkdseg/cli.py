"""Command-line entry point.

Commands: ``synth`` (generate phantom datasets), ``train``, ``eval``,
``ablate``, ``sweep``, and ``report`` (regenerate tables/plots from logged
metrics, no training). Configuration is plain-text key=value, overridable by
flags of the same name; every run echoes its fully resolved configuration to
``manifest.txt`` in the output directory, and that manifest is itself a valid
config file, so any successful run can be reproduced from it alone.
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .errors import MkdsegError, UsageError
from .evaluation import (
    ExperimentData,
    evaluate_model,
    evaluate_trained,
    mode_predictor,
    run_ablation,
    run_assistant_sweep,
    write_dice_csv,
    write_summary,
)
from .phantoms import default_spec, make_dataset
from .storage import read_dataset, write_dataset
from .training import (
    SINGLE_SEGMENTOR_MODES,
    TrainingConfig,
    checkpoint_load,
    parse_metrics_line,
    run_training,
)

COMMANDS = ("synth", "train", "eval", "ablate", "sweep", "report")

# Sample-seed offsets keeping the three generated splits disjoint and unpaired.
ASSISTANT_SAMPLE_BASE = 0
TARGET_SAMPLE_BASE = 10_000
TEST_SAMPLE_BASE = 50_000
TEST_GEOMETRY_OFFSET = 777


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> List[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


# key -> (type converter, default, help); training keys are appended below.
_BASE_KEYS = {
    "data_root": (str, "", "dataset root directory"),
    "out_dir": (str, "", "output directory for logs, checkpoints, reports"),
    "checkpoint": (str, "", "checkpoint path (eval)"),
    "image_size": (int, 64, "phantom side length in pixels"),
    "num_classes": (int, 4, "label classes including background"),
    "count_target": (int, 40, "training samples, target modality"),
    "count_assistant": (int, 40, "training samples, assistant modality"),
    "count_test": (int, 32, "test samples, target modality"),
    "geometry_seed": (int, 0, "anatomy population seed"),
    "swap_direction": (_parse_bool, False,
                       "exchange which appearance style is the target"),
    "aggregation": (str, "micro", "dice aggregation: micro or macro"),
    "seeds": (_parse_int_list, [0, 1, 2], "seed list for ablate/sweep"),
    "counts": (_parse_int_list, [10, 20, 40], "assistant amounts for sweep"),
    "suite": (str, "full", "ablation suite or single variant name"),
}

_TRAINING_TYPES = {bool: _parse_bool, int: int, float: float, str: str}


def _config_registry() -> Dict[str, tuple]:
    registry = dict(_BASE_KEYS)
    for f in dataclasses.fields(TrainingConfig):
        conv = _TRAINING_TYPES[type(f.default)]
        registry[f.name] = (conv, f.default, f"training config: {f.name}")
    return registry


REGISTRY = _config_registry()


@dataclasses.dataclass
class RunConfig:
    command: str
    values: Dict[str, object]

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def training_config(self) -> TrainingConfig:
        kwargs = {f.name: self.values[f.name]
                  for f in dataclasses.fields(TrainingConfig)}
        return TrainingConfig(**kwargs)


def _read_config_file(path: Path) -> Dict[str, str]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def parse_config(command: str, config_file: Optional[Path] = None,
                 overrides: Sequence[str] = ()) -> RunConfig:
    """Resolve defaults, then config file values, then flag overrides."""
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}; choose from {COMMANDS}")
    raw: Dict[str, str] = {}
    if config_file is not None:
        raw.update(_read_config_file(Path(config_file)))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override must be key=value, got {item!r}")
        key, _, val = item.partition("=")
        raw[key.strip()] = val.strip()

    values: Dict[str, object] = {key: default for key, (_, default, _) in REGISTRY.items()}
    for key, text in raw.items():
        if key == "command":
            continue
        if key not in REGISTRY:
            raise UsageError(f"unknown config key {key!r}")
        conv = REGISTRY[key][0]
        try:
            values[key] = conv(text)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad value for {key}: {text!r} ({exc})") from exc
    return RunConfig(command=command, values=values)


def write_manifest(cfg: RunConfig, out_dir: Path, wall_time_s: float) -> Path:
    """Echo the resolved config; comment lines carry run provenance."""
    lines = [
        f"# mkdseg {__version__}",
        f"# wall_time_s={wall_time_s:.1f}",
        f"command={cfg.command}",
    ]
    for key in sorted(cfg.values):
        value = cfg.values[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _require(cfg: RunConfig, key: str) -> str:
    value = cfg.values.get(key, "")
    if not value:
        raise UsageError(f"command {cfg.command!r} requires {key}")
    return str(value)


def _specs(cfg: RunConfig, geometry_seed: int):
    assistant_style, target_style = ("B", "A") if cfg.swap_direction else ("A", "B")
    make = lambda style: default_spec(style, cfg.image_size, cfg.num_classes,
                                      geometry_seed)
    return make(assistant_style), make(target_style)


def _cmd_synth(cfg: RunConfig) -> None:
    root = Path(_require(cfg, "data_root"))
    spec_a, spec_t = _specs(cfg, cfg.geometry_seed)
    test_spec_a, test_spec_t = _specs(cfg, cfg.geometry_seed + TEST_GEOMETRY_OFFSET)
    write_dataset(make_dataset(spec_a, cfg.count_assistant, "assistant",
                               ASSISTANT_SAMPLE_BASE), root / "train")
    write_dataset(make_dataset(spec_t, cfg.count_target, "target",
                               TARGET_SAMPLE_BASE), root / "train")
    write_dataset(make_dataset(test_spec_t, cfg.count_test, "target",
                               TEST_SAMPLE_BASE), root / "test")
    write_dataset(make_dataset(test_spec_a, cfg.count_test, "assistant",
                               TEST_SAMPLE_BASE), root / "test")
    print(f"wrote datasets under {root}")


def _load_train_data(cfg: RunConfig, need_assistant: bool):
    root = Path(_require(cfg, "data_root"))
    target = read_dataset(root / "train" / "target")
    assistant = read_dataset(root / "train" / "assistant") if need_assistant else None
    return target, assistant


def _cmd_train(cfg: RunConfig) -> None:
    tcfg = cfg.training_config()
    out_dir = Path(_require(cfg, "out_dir"))
    target, assistant = _load_train_data(cfg, tcfg.mode != "baseline")
    state, metrics = run_training(target, assistant, tcfg, out_dir=out_dir)
    print(f"trained {len(metrics)} iterations; checkpoint in {out_dir}")


def _cmd_eval(cfg: RunConfig) -> None:
    ckpt = Path(_require(cfg, "checkpoint"))
    out_dir = Path(_require(cfg, "out_dir"))
    root = Path(_require(cfg, "data_root"))
    state = checkpoint_load(ckpt)
    test = read_dataset(root / "test" / "target")
    mode = state.config.mode
    if mode in SINGLE_SEGMENTOR_MODES:
        reports = [evaluate_model(mode_predictor(state, mode), test,
                                  model_tag=mode if mode != "joint_training" else "joint",
                                  aggregation=cfg.aggregation)]
    else:
        by_tag = evaluate_trained(state, test)
        reports = [by_tag["syn"], by_tag["real"], by_tag["ensemble"]]
    write_dice_csv(reports, out_dir / "dice.csv")
    write_summary(reports, out_dir / "summary.txt")
    for report in reports:
        print(f"{report.model_tag}: mean dice {report.mean:.4f} "
              f"({report.aggregation})")


def _experiment_data(cfg: RunConfig) -> ExperimentData:
    root = Path(_require(cfg, "data_root"))
    return ExperimentData(
        train_target=read_dataset(root / "train" / "target"),
        train_assistant=read_dataset(root / "train" / "assistant"),
        test_target=read_dataset(root / "test" / "target"),
    )


def _cmd_ablate(cfg: RunConfig) -> None:
    out_dir = Path(_require(cfg, "out_dir"))
    data = _experiment_data(cfg)
    tcfg = cfg.training_config()
    reports = []
    rows = []
    for seed in cfg.seeds:
        table = run_ablation(cfg.suite, data, dataclasses.replace(tcfg, seed=seed))
        for variant, by_tag in table.items():
            for tag, report in by_tag.items():
                rows.append((seed, variant, tag, report.mean))
                reports.append(dataclasses.replace(
                    report, model_tag=f"{variant}/{tag}/seed{seed}"))
    write_dice_csv(reports, out_dir / "ablation.csv")
    for seed, variant, tag, mean in rows:
        print(f"seed={seed} variant={variant} model={tag} mean_dice={mean:.4f}")


def _cmd_sweep(cfg: RunConfig) -> None:
    out_dir = Path(_require(cfg, "out_dir"))
    data = _experiment_data(cfg)
    tcfg = cfg.training_config()
    reports = []
    for seed in cfg.seeds:
        table = run_assistant_sweep(cfg.counts, data,
                                    dataclasses.replace(tcfg, seed=seed))
        for count, report in table.items():
            reports.append(dataclasses.replace(
                report, model_tag=f"ensemble/n{count}/seed{seed}"))
            print(f"seed={seed} assistant_count={count} "
                  f"ensemble_mean_dice={report.mean:.4f}")
    write_dice_csv(reports, out_dir / "sweep.csv")


def _cmd_report(cfg: RunConfig) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(_require(cfg, "out_dir"))
    metrics_path = out_dir / "metrics.log"
    made_any = False
    if metrics_path.is_file():
        records = [parse_metrics_line(line)
                   for line in metrics_path.read_text().splitlines() if line]
        iterations = [r["iteration"] for r in records]
        fig, ax = plt.subplots(figsize=(8, 5))
        for key in ("sup_real", "sup_syn", "kd_s2r", "kd_r2s", "cyc", "total"):
            ax.plot(iterations, [r[key] for r in records], label=key)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / "loss_curves.png", dpi=120)
        plt.close(fig)
        made_any = True
    csv_path = out_dir / "dice.csv"
    if csv_path.is_file():
        import csv as csv_mod

        means = {}
        with csv_path.open() as fh:
            for row in csv_mod.DictReader(fh):
                if row["class"] == "mean":
                    means[row["model_tag"]] = float(row["dice"])
        if means:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.bar(range(len(means)), list(means.values()))
            ax.set_xticks(range(len(means)))
            ax.set_xticklabels(list(means.keys()), rotation=30, ha="right")
            ax.set_ylabel("mean dice")
            ax.set_ylim(0, 1)
            fig.tight_layout()
            fig.savefig(out_dir / "dice_bars.png", dpi=120)
            plt.close(fig)
            made_any = True
    if not made_any:
        raise UsageError(f"nothing to report in {out_dir} "
                         "(no metrics.log or dice.csv)")
    print(f"report written to {out_dir}")


def dispatch(cfg: RunConfig) -> int:
    """Run one command; returns a process exit status."""
    start = time.time()
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "sweep": _cmd_sweep,
        "report": _cmd_report,
    }
    out_dir = cfg.values.get("out_dir", "")
    try:
        if out_dir:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers[cfg.command](cfg)
        if out_dir:
            write_manifest(cfg, Path(out_dir), time.time() - start)
    except MkdsegError as exc:
        print(f"error [{cfg.command}]: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mkdseg",
        description="cross-modality segmentation experiments on phantoms",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None,
                        help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    for key, (_, default, help_text) in REGISTRY.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}",
                            default=None, metavar="V",
                            help=f"{help_text} (default {default})")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    for key in REGISTRY:
        value = getattr(args, f"opt_{key}")
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = parse_config(args.command, args.config, overrides)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
