"""Training driver: SGD with momentum, warm-up, early stopping, ablations.

A run is described by a :class:`RunConfig` (JSON round-trippable).  Both
backbones are first warmed up solo, each under a throwaway GAP+dense head
with the balance loss and its own seed-derived generator; the cross-attention
model then trains end to end.  The best-validation-AUROC checkpoint is
retained, every epoch end writes a resumable ``latest.ckpt`` (parameters,
velocity buffers, generator state, history), and resuming reproduces the
uninterrupted run bit for bit.  A non-finite loss aborts with
:class:`~cannet.errors.DivergenceError`, which the CLI maps to exit code 3.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import (
    load_checkpoint,
    model_from_state,
    model_section,
    model_tensors,
    save_checkpoint,
    save_model,
)
from .cross_attention import (
    CanModel,
    FusionMode,
    SingleModel,
    build_single_model,
    can_forward,
    single_forward,
)
from .errors import ConfigError, DivergenceError
from .losses import LossConfig, balance_loss, balance_weights, bce_loss, combined_loss
from .metrics import EvalReport, evaluate
from .neural_core import Graph, LayerParams, Tensor, backward, init_conv, init_dense, record
from .synth_data import Dataset, crop_batch, labels_matrix

DEFAULT_VARIANTS = (
    "single_bce",
    "single_bal",
    "had_bal",
    "had_allcat_bal",
    "add_allcat_bal_att",
    "max_allcat_bal_att",
    "full_can",
)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunConfig:
    """Everything one training run needs, JSON-serializable.

    ``alpha`` only matters for dual-backbone runs with the balance
    objective; single-backbone runs have no second feature stack to compare.
    ``init_seed_a``/``init_seed_b`` override the seed-derived backbone
    initializations (they must differ, or the two backbones would start
    identical and fusion would degenerate).
    """

    dataset: str | None = None
    out_dir: str | None = None
    # model
    widths_a: list[int] = field(default_factory=lambda: [8, 16, 24])
    widths_b: list[int] = field(default_factory=lambda: [8, 16, 32])
    kernel: int = 3
    single_backbone: bool = False
    fusion_mode: str = "hadamard"
    concat_all: bool = True
    dropout_rate: float = 0.2
    # objective
    objective: str = "balance"
    gamma: float = 2.0
    alpha: float = 0.01
    epsilon: float = 1e-12
    # optimization
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 20
    warmup_epochs: int = 1
    patience: int = 5
    max_steps: int | None = None
    # data handling
    crop: int = 64
    split_fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int = 0
    # seeding
    seed: int = 0
    init_seed_a: int | None = None
    init_seed_b: int | None = None

    def validate(self) -> None:
        if not self.widths_a or any(w < 1 for w in self.widths_a):
            raise ConfigError(f"widths_a must be positive, got {self.widths_a}")
        if not self.single_backbone:
            if not self.widths_b or any(w < 1 for w in self.widths_b):
                raise ConfigError(f"widths_b must be positive, got {self.widths_b}")
            if len(self.widths_a) != len(self.widths_b):
                raise ConfigError("backbones must have equal depth")
            try:
                FusionMode(self.fusion_mode)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and >= 1, got {self.kernel}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.objective not in ("balance", "bce"):
            raise ConfigError(f"objective must be balance or bce, got {self.objective!r}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ConfigError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup epochs must be >= 0, got {self.warmup_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.crop < 32:
            raise ConfigError(f"input extent must be >= 32, got {self.crop}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        for name in ("init_seed_a", "init_seed_b"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")
        if (
            not self.single_backbone
            and self.init_seed_a is not None
            and self.init_seed_a == self.init_seed_b
        ):
            raise ConfigError("backbone init seeds must differ")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json_dict(d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(**d)
        cfg.validate()
        return cfg


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return RunConfig.from_json_dict(raw)


@dataclass
class RngSuite:
    """Seed-derived generators, one per independent random decision stream."""

    train: np.random.Generator
    head: np.random.Generator
    init_a: np.random.Generator
    init_b: np.random.Generator
    warm_stream_a: np.random.Generator
    warm_head_a: np.random.Generator
    warm_stream_b: np.random.Generator
    warm_head_b: np.random.Generator


def _rng_suite(config: RunConfig) -> RngSuite:
    kids = np.random.SeedSequence(config.seed).spawn(8)

    def gen(ss) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(ss))

    init_a = gen(np.random.SeedSequence(config.init_seed_a)) if config.init_seed_a is not None else gen(kids[6])
    init_b = gen(np.random.SeedSequence(config.init_seed_b)) if config.init_seed_b is not None else gen(kids[7])
    return RngSuite(
        train=gen(kids[0]),
        head=gen(kids[1]),
        warm_stream_a=gen(kids[2]),
        warm_head_a=gen(kids[3]),
        warm_stream_b=gen(kids[4]),
        warm_head_b=gen(kids[5]),
        init_a=init_a,
        init_b=init_b,
    )


def sgd_step(
    params: Sequence[Tensor], lr: float, momentum: float, velocity: Sequence[np.ndarray]
) -> None:
    """v <- momentum * v - lr * grad;  p <- p + v.  Missing grads count as zero."""
    if len(params) != len(velocity):
        raise ConfigError(f"{len(velocity)} velocity buffers for {len(params)} parameters")
    for p, v in zip(params, velocity):
        v *= momentum
        if p.grad is not None:
            v -= lr * p.grad
        p.values += v


def _loss_config(config: RunConfig, train_set: Dataset) -> LossConfig:
    if config.objective == "bce":
        return LossConfig(gamma=0.0, alpha=0.0, epsilon=config.epsilon)
    w_pos, w_neg = balance_weights(train_set.pos_counts, train_set.neg_counts)
    cfg = LossConfig(
        gamma=config.gamma, alpha=config.alpha, w_pos=w_pos, w_neg=w_neg, epsilon=config.epsilon
    )
    cfg.validate()
    return cfg


def _objective(config: RunConfig, loss_cfg: LossConfig) -> Callable:
    def loss_fn(model, imgs: Tensor, labels: np.ndarray, rng: np.random.Generator):
        if isinstance(model, SingleModel):
            probs, _ = single_forward(model, imgs, training=True, rng=rng)
            if config.objective == "bce":
                return bce_loss(probs, labels, config.epsilon)
            return balance_loss(probs, labels, loss_cfg)
        probs, raw_a, raw_b = can_forward(model, imgs, training=True, rng=rng)
        if config.objective == "bce":
            return bce_loss(probs, labels, config.epsilon)
        return combined_loss(probs, labels, raw_a, raw_b, loss_cfg)

    return loss_fn


def _run_epoch(
    model,
    loss_fn,
    config: RunConfig,
    dataset: Dataset,
    g: np.random.Generator,
    velocity: list[np.ndarray],
    global_step: int,
    max_steps: int | None,
) -> tuple[list[float], int]:
    n = len(dataset)
    canvas = dataset.hw
    if config.crop > canvas:
        raise ConfigError(f"crop {config.crop} exceeds canvas {canvas}")
    params = model.parameters()
    perm = g.permutation(n)
    losses: list[float] = []
    for start in range(0, n, config.batch_size):
        idx = perm[start : start + config.batch_size]
        offsets = g.integers(0, canvas - config.crop + 1, size=(len(idx), 2))
        batch = [dataset.samples[i] for i in idx]
        pixels = crop_batch(batch, config.crop, offsets)
        # square crops allow mirror and quarter-turn augmentation; the default
        # glyph families are symmetric under both
        flips = g.integers(0, 2, size=(len(idx), 2))
        quads = g.integers(0, 4, size=len(idx))
        for i, ((fr, fc), k) in enumerate(zip(flips, quads)):
            img = pixels[i]
            if fr:
                img = img[:, ::-1, :]
            if fc:
                img = img[:, :, ::-1]
            if k:
                img = np.rot90(img, int(k), axes=(1, 2))
            if fr or fc or k:
                pixels[i] = img.copy()
        imgs = Tensor(pixels)
        labels = labels_matrix(batch)
        graph = Graph()
        with record(graph):
            loss = loss_fn(model, imgs, labels, g)
        value = loss.item()
        global_step += 1
        if not math.isfinite(value):
            raise DivergenceError(global_step, value)
        backward(loss, graph)
        sgd_step(params, config.lr, config.momentum, velocity)
        for p in params:
            p.grad = None
        losses.append(value)
        if max_steps is not None and global_step >= max_steps:
            break
    return losses, global_step


def warmup(
    config: RunConfig, train_set: Dataset, rngs: RngSuite | None = None
) -> tuple[list[LayerParams], list[LayerParams], list[float], list[float]]:
    """Train each backbone solo under a throwaway head; return the backbones.

    Uses the balance loss regardless of the main objective.  With
    warmup_epochs = 0 the freshly initialized backbones come back untouched.
    Also returns each side's per-step loss trace.
    """
    config.validate()
    rngs = rngs or _rng_suite(config)
    w_pos, w_neg = balance_weights(train_set.pos_counts, train_set.neg_counts)
    loss_cfg = LossConfig(
        gamma=config.gamma, alpha=0.0, w_pos=w_pos, w_neg=w_neg, epsilon=config.epsilon
    )

    def solo_loss(model, imgs, labels, rng):
        probs, _ = single_forward(model, imgs, training=True, rng=rng)
        return balance_loss(probs, labels, loss_cfg)

    sides = (
        (config.widths_a, rngs.init_a, rngs.warm_head_a, rngs.warm_stream_a),
        (config.widths_b, rngs.init_b, rngs.warm_head_b, rngs.warm_stream_b),
    )
    backbones: list[list[LayerParams]] = []
    traces: list[list[float]] = []
    for widths, g_init, g_head, g_stream in sides:
        model = build_single_model(
            widths,
            train_set.label_count,
            g_init,
            g_head,
            dropout_rate=config.dropout_rate,
            kernel=config.kernel,
        )
        trace: list[float] = []
        if config.warmup_epochs > 0:
            velocity = [np.zeros_like(t.values) for t in model.parameters()]
            step = 0
            for _ in range(config.warmup_epochs):
                losses, step = _run_epoch(
                    model, solo_loss, config, train_set, g_stream, velocity, step, None
                )
                trace.extend(losses)
        backbones.append(model.backbone)
        traces.append(trace)
    return backbones[0], backbones[1], traces[0], traces[1]


def _build_model(config: RunConfig, train_set: Dataset, rngs: RngSuite):
    label_count = train_set.label_count
    if config.single_backbone:
        return build_single_model(
            config.widths_a,
            label_count,
            rngs.init_a,
            rngs.head,
            dropout_rate=config.dropout_rate,
            kernel=config.kernel,
        )
    backbone_a, backbone_b, _, _ = warmup(config, train_set, rngs)
    tran_n = min(config.widths_a[-1], config.widths_b[-1])
    transition_a = init_conv(config.widths_a[-1], tran_n, 1, rngs.head)
    transition_b = init_conv(config.widths_b[-1], tran_n, 1, rngs.head)
    head_width = 3 * tran_n if config.concat_all else tran_n
    classifier = init_dense(head_width, label_count, rngs.head)
    return CanModel(
        backbone_a,
        backbone_b,
        transition_a,
        transition_b,
        classifier,
        fusion_mode=FusionMode(config.fusion_mode),
        dropout_rate=config.dropout_rate,
        concat_all=config.concat_all,
    )


@dataclass
class TrainResult:
    model: CanModel | SingleModel
    best_path: Path | None
    latest_path: Path
    history: list[dict]
    step_losses: list[float]
    best_epoch: int
    best_metric: float
    stopped_early: bool


def _metric_or_neginf(value: float) -> float:
    return float("-inf") if math.isnan(value) else value


def train(
    config: RunConfig,
    train_set: Dataset,
    val_set: Dataset,
    out_dir=None,
    resume: bool = False,
    quiet: bool = False,
) -> TrainResult:
    """Fit on train_set, select on val_set mean AUROC, keep the best checkpoint."""
    config.validate()
    if train_set.label_count != val_set.label_count:
        raise ConfigError("train and val sets disagree on label count")
    if not train_set.samples or not val_set.samples:
        raise ConfigError("train and val sets must be nonempty")
    out_dir = Path(out_dir if out_dir is not None else config.out_dir or "")
    if str(out_dir) in ("", "."):
        raise ConfigError("training needs an output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    latest_path = out_dir / "latest.ckpt"

    label_names = list(train_set.label_names)
    loss_cfg = _loss_config(config, train_set)
    loss_fn = _objective(config, loss_cfg)
    rngs = _rng_suite(config)

    history: list[dict] = []
    step_losses: list[float] = []
    best_metric = float("-inf")
    best_epoch = -1
    global_step = 0
    start_epoch = 0

    if resume and latest_path.exists():
        manifest, tensors = load_checkpoint(latest_path)
        model = model_from_state(manifest["model"], tensors)
        state = manifest["training"]
        rngs.train.bit_generator.state = state["rng_state"]
        start_epoch = state["epoch"] + 1
        global_step = state["global_step"]
        best_epoch = state["best_epoch"]
        best_metric = float("-inf") if state["best_metric"] is None else state["best_metric"]
        history = list(state["history"])
        velocity = [
            np.ascontiguousarray(tensors[f"velocity.{name}"]) for name in model_tensors(model)
        ]
    else:
        model = _build_model(config, train_set, rngs)
        velocity = [np.zeros_like(t.values) for t in model.parameters()]

    stopped_early = False
    for epoch in range(start_epoch, config.epochs):
        losses, global_step = _run_epoch(
            model,
            loss_fn,
            config,
            train_set,
            rngs.train,
            velocity,
            global_step,
            config.max_steps,
        )
        step_losses.extend(losses)
        report = evaluate(model, val_set, crop=config.crop)
        metric = _metric_or_neginf(report.mean_auroc)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else None,
                "val_mean_auroc": None if math.isnan(report.mean_auroc) else report.mean_auroc,
            }
        )
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            save_model(
                best_path,
                model,
                label_names,
                extra={"training": {"epoch": epoch, "val_mean_auroc": report.mean_auroc}},
            )
        _save_latest(
            latest_path,
            model,
            label_names,
            config,
            epoch,
            global_step,
            best_metric,
            best_epoch,
            rngs.train,
            velocity,
            history,
        )
        if not quiet:
            print(
                f"epoch {epoch}  train_loss {history[-1]['train_loss']:.6f}  "
                f"val_auroc {report.mean_auroc:.4f}  best {best_metric:.4f}@{best_epoch}",
                flush=True,
            )
        if config.max_steps is not None and global_step >= config.max_steps:
            break
        if epoch - best_epoch >= config.patience:
            stopped_early = True
            break

    _write_run_summary(out_dir, config, history, best_epoch, best_metric, global_step, stopped_early)
    if best_path.exists():
        from .checkpoint import load_model

        final_model, _ = load_model(best_path)
        report = evaluate(final_model, val_set, crop=config.crop)
        (out_dir / "table.txt").write_text(report.to_table() + "\n")
    else:
        final_model = model
        best_path = None
    return TrainResult(
        model=final_model,
        best_path=best_path,
        latest_path=latest_path,
        history=history,
        step_losses=step_losses,
        best_epoch=best_epoch,
        best_metric=best_metric,
        stopped_early=stopped_early,
    )


def _save_latest(
    path,
    model,
    label_names,
    config: RunConfig,
    epoch: int,
    global_step: int,
    best_metric: float,
    best_epoch: int,
    g_train: np.random.Generator,
    velocity: list[np.ndarray],
    history: list[dict],
) -> None:
    tensors = model_tensors(model)
    for name, v in zip(list(tensors), velocity):
        tensors[f"velocity.{name}"] = v
    manifest = {
        "model": model_section(model, label_names),
        "optimizer": {"lr": config.lr, "momentum": config.momentum},
        "training": {
            "epoch": epoch,
            "global_step": global_step,
            "best_metric": None if math.isinf(best_metric) else best_metric,
            "best_epoch": best_epoch,
            "rng_state": g_train.bit_generator.state,
            "history": history,
        },
    }
    save_checkpoint(path, manifest, tensors)


def _write_run_summary(
    out_dir: Path, config, history, best_epoch, best_metric, global_step, stopped_early
) -> None:
    payload = {
        "config": config.to_json_dict(),
        "history": history,
        "best_epoch": best_epoch,
        "best_val_mean_auroc": None if math.isinf(best_metric) else best_metric,
        "global_steps": global_step,
        "stopped_early": stopped_early,
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def apply_variant(config: RunConfig, name: str) -> RunConfig:
    """Derive one ablation variant's config from the base run config."""
    table = {
        "single_bce": dict(single_backbone=True, objective="bce"),
        "single_bal": dict(single_backbone=True, objective="balance", alpha=0.0),
        "had_bal": dict(
            single_backbone=False, fusion_mode="hadamard", concat_all=False, alpha=0.0
        ),
        "had_allcat_bal": dict(
            single_backbone=False, fusion_mode="hadamard", concat_all=True, alpha=0.0
        ),
        "add_allcat_bal_att": dict(
            single_backbone=False, fusion_mode="add", concat_all=True
        ),
        "max_allcat_bal_att": dict(
            single_backbone=False, fusion_mode="max", concat_all=True
        ),
        "full_can": dict(
            single_backbone=False, fusion_mode="hadamard", concat_all=True
        ),
    }
    if name not in table:
        raise ConfigError(f"unknown ablation variant {name!r} (expected one of {sorted(table)})")
    return dataclasses.replace(config, **table[name])


@dataclass
class AblationResult:
    variants: list[str]
    seeds: list[int]
    reports: dict[str, dict[int, EvalReport]]
    param_counts: dict[str, int]
    run_dirs: dict[str, dict[int, str]]

    def seed_means(self, variant: str) -> list[float]:
        return [self.reports[variant][s].mean_auroc for s in self.seeds]

    def mean_auroc(self, variant: str) -> float:
        return float(np.mean(self.seed_means(variant)))

    def to_json_dict(self) -> dict:
        return {
            "variants": self.variants,
            "seeds": self.seeds,
            "param_counts": self.param_counts,
            "mean_auroc": {v: self.mean_auroc(v) for v in self.variants},
            "reports": {
                v: {str(s): self.reports[v][s].to_json_dict() for s in self.seeds}
                for v in self.variants
            },
        }

    def to_table(self) -> str:
        width = max(len(v) for v in self.variants)
        lines = [f"{'Variant':<{width}}  {'Mean AUROC':>10}  {'Std':>7}  {'Params':>9}"]
        for v in self.variants:
            means = self.seed_means(v)
            std = float(np.std(means, ddof=1)) if len(means) > 1 else 0.0
            lines.append(
                f"{v:<{width}}  {self.mean_auroc(v):>10.4f}  {std:>7.4f}  "
                f"{self.param_counts[v]:>9}"
            )
        return "\n".join(lines)


def ablate(
    base_config: RunConfig,
    dataset: Dataset,
    variants: Sequence[str] | None = None,
    seeds: Sequence[int] | None = None,
    out_dir=None,
    quiet: bool = False,
) -> AblationResult:
    """Run the variant grid over the seed list on one shared split.

    The dataset is split once (group-disjoint, by the base config's split
    settings); every variant and seed trains on the identical partition, so
    differences come from architecture, objective, and training randomness.
    """
    from .synth_data import split

    base_config.validate()
    variants = list(variants) if variants is not None else list(DEFAULT_VARIANTS)
    seeds = list(seeds) if seeds is not None else list(DEFAULT_SEEDS)
    if not variants or not seeds:
        raise ConfigError("ablation needs at least one variant and one seed")
    out_dir = Path(out_dir if out_dir is not None else base_config.out_dir or "")
    if str(out_dir) in ("", "."):
        raise ConfigError("ablation needs an output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set, test_set = split(
        dataset, base_config.split_fractions, base_config.split_seed
    )
    reports: dict[str, dict[int, EvalReport]] = {}
    param_counts: dict[str, int] = {}
    run_dirs: dict[str, dict[int, str]] = {}
    for name in variants:
        reports[name] = {}
        run_dirs[name] = {}
        for seed in seeds:
            cfg = dataclasses.replace(apply_variant(base_config, name), seed=seed)
            run_dir = out_dir / name / f"seed{seed}"
            result = train(cfg, train_set, val_set, out_dir=run_dir, quiet=quiet)
            report = evaluate(result.model, test_set, crop=cfg.crop)
            reports[name][seed] = report
            run_dirs[name][seed] = str(run_dir)
            param_counts[name] = result.model.param_count()
            if not quiet:
                print(f"[{name} seed {seed}] test mean AUROC {report.mean_auroc:.4f}", flush=True)
    result = AblationResult(variants, seeds, reports, param_counts, run_dirs)
    (out_dir / "table.txt").write_text(result.to_table() + "\n")
    (out_dir / "metrics.json").write_text(
        json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n"
    )
    return result
