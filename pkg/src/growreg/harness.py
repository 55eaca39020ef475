"""End-to-end experiment pipelines: pretrain, regularize, prune, fine-tune.

The harness owns the comparison protocols. A same-set comparison runs the
ramped schedule and one-shot pruning from one shared baseline with the
identical pruned set per seed (asserted via mask digests); the random-set
variant shares one seeded random mask between both schedules. Separation
tracking records per-layer norm dispersion and normalized norm snapshots
while the penalty grows.

Records are plain rows plus a summary dict, both rendered to CSV with
repr-formatted floats so identical configs reproduce byte-identical files.
Accuracies are fractions in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BudgetExceededError, ConfigError, DomainError, ProtocolError
from .datasets import Dataset, load_csv_dataset, make_dataset
from .groups import (
    Mask,
    apply_hard_prune,
    expand_group_values,
    group_l1_norms,
    norm_dispersion,
    parse_pruning_plan,
    random_prune_set,
    select_prune_set,
    sparsity,
)
from .netcore import LayerSpec, Network, OptimState, accuracy, loss_and_grads, sgd_step
from .scheduler import (
    DONE,
    GROWING,
    RegConfig,
    RegState,
    greg1_init,
    greg2_init,
    is_prune_ready,
    tick,
)

METHODS = ("greg1", "greg2", "oneshot_l1", "random_subset")


@dataclass(frozen=True)
class PhaseSchedule:
    """Step budget plus piecewise-constant LR milestones ((step, lr), ...)."""

    steps: int
    batch_size: int
    milestones: tuple
    momentum: float = 0.9

    def __post_init__(self):
        ms = tuple((int(s), float(lr)) for s, lr in self.milestones)
        if not ms or ms[0][0] != 0:
            raise ConfigError("LR milestones must start at step 0")
        if any(b[0] <= a[0] for a, b in zip(ms, ms[1:])):
            raise ConfigError("LR milestone steps must be strictly increasing")
        if any(lr <= 0 for _, lr in ms):
            raise ConfigError("LR values must be positive")
        object.__setattr__(self, "milestones", ms)

    def lr_at(self, step: int) -> float:
        lr = self.milestones[0][1]
        for s, v in self.milestones:
            if step >= s:
                lr = v
        return lr


@dataclass(frozen=True)
class ExperimentConfig:
    layers: tuple
    input_shape: tuple
    classes: int
    dataset: dict
    plan: str
    method: str
    reg: RegConfig
    pretrain: PhaseSchedule
    finetune: PhaseSchedule
    granularity: str = "filter"
    reg_batch_size: int = 64
    reg_lr: float = 1e-3
    reg_momentum: float = 0.9
    reg_max_iters: int = 500_000
    seed: int = 0
    metric_every: int = 200

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.metric_every < 1:
            raise ConfigError("metric_every must be >= 1")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))


@dataclass(eq=False)
class ExperimentRecord:
    """Per-checkpoint rows plus the final summary of one pipeline run."""

    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    n_layers: int = 0

    def record_csv(self) -> str:
        cols = ["iter", "phase", "lambda", "train_loss", "val_acc"] + [
            f"disp_l{l}" for l in range(self.n_layers)
        ]
        lines = [",".join(cols)]
        for row in self.rows:
            vals = [str(row["iter"]), row["phase"], _f(row["lambda"]),
                    _f(row["train_loss"]), _f(row["val_acc"])]
            vals += [_f(d) for d in row["dispersions"]]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def snapshots_csv(self) -> str:
        lines = ["iter,layer,group,value"]
        for it, layer, vec in self.snapshots:
            for g, v in enumerate(vec):
                lines.append(f"{it},{layer},{g},{_f(v)}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        keys = list(self.summary)
        vals = [
            _f(v) if isinstance(v, float) else str(v) for v in self.summary.values()
        ]
        return ",".join(keys) + "\n" + ",".join(vals) + "\n"


def _f(x) -> str:
    return repr(float(x))


def build_dataset(exp: ExperimentConfig, seed_shift: int = 0) -> Dataset:
    spec = dict(exp.dataset)
    kind = spec.pop("kind", None)
    if kind == "csv":
        if seed_shift:
            spec["seed"] = spec.get("seed", 0) + seed_shift
        return load_csv_dataset(**spec)
    spec["seed"] = spec.get("seed", 0) + seed_shift
    return make_dataset(kind, **spec)


def build_network(exp: ExperimentConfig) -> Network:
    return Network.initialize(
        exp.layers, exp.input_shape, exp.classes, seed=[exp.seed, 0]
    )


def _train(net, data, sched: PhaseSchedule, rng, base_decay, recorder=None):
    """Plain SGD loop under uniform base decay; optional row recorder."""
    if sched.steps == 0:
        return net
    opt = OptimState.for_network(
        net, sched.lr_at(0), momentum=sched.momentum, base_decay=base_decay
    )
    batches = data.batches(sched.batch_size, rng)
    for step in range(sched.steps):
        opt.learning_rate = sched.lr_at(step)
        x, y = next(batches)
        loss, grads = loss_and_grads(net, x, y)
        sgd_step(net, grads, opt)
        if recorder is not None:
            recorder(step, loss)
    return net


def pretrain(exp: ExperimentConfig, data: Dataset = None) -> Network:
    """Train a fresh baseline; zero steps returns the initialized net as is."""
    data = data or build_dataset(exp)
    net = build_network(exp)
    rng = np.random.default_rng([exp.seed, 1])
    return _train(net, data, exp.pretrain, rng, exp.reg.base_decay)


def _dispersions(net, granularity):
    norms = group_l1_norms(net, granularity)
    out = []
    for vals in norms.per_layer:
        try:
            out.append(norm_dispersion(vals))
        except DomainError:
            out.append(float("nan"))
    return out


def _metric_row(record, it, phase, lam, loss, net, data, granularity):
    record.rows.append(
        {
            "iter": it,
            "phase": phase,
            "lambda": lam,
            "train_loss": loss,
            "val_acc": accuracy(net, data.val_x, data.val_y),
            "dispersions": _dispersions(net, granularity),
        }
    )


def _snapshot(record, it, net, granularity, prunable_layers):
    norms = group_l1_norms(net, granularity)
    for l in prunable_layers:
        vec = norms.per_layer[l]
        peak = vec.max()
        if peak > 0:
            record.snapshots.append((it, l, vec / peak))


def _run_reg_phase(net, data, exp, state, record, collect_snapshots=False):
    """Drive the scheduler to done, one SGD step per tick."""
    opt = OptimState.for_network(
        net, exp.reg_lr, momentum=exp.reg_momentum, base_decay=exp.reg.base_decay
    )
    batches = data.batches(exp.reg_batch_size, np.random.default_rng([exp.seed, 2]))
    while not is_prune_ready(state):
        if state.iter >= exp.reg_max_iters:
            raise BudgetExceededError(
                f"regularization phase exceeded {exp.reg_max_iters} iterations "
                f"(phase {state.phase}, lambda {state.lam})"
            )
        state, lam_groups = tick(state, net, exp.reg)
        it = state.iter - 1
        x, y = next(batches)
        loss, grads = loss_and_grads(net, x, y)
        lambdas = dict(enumerate(expand_group_values(net, state.granularity, lam_groups)))
        sgd_step(net, grads, opt, lambdas)
        if it % exp.metric_every == 0:
            _metric_row(record, it, state.phase, state.lam, loss, net, data,
                        state.granularity)
            if collect_snapshots:
                _snapshot(record, it, net, state.granularity, state.eligible_layers)
    return state.iter


def _init_state(exp, net, plan, initial_mask):
    if exp.method == "greg2":
        return greg2_init(net, plan, exp.reg)
    state = greg1_init(net, plan, exp.reg)
    if initial_mask is not None:
        state.prune_sets = [np.flatnonzero(f == 0) for f in initial_mask.flags]
        state.phase = GROWING if state.prune_set_size() > 0 else DONE
    return state


def run_method(
    exp: ExperimentConfig,
    baseline: Network = None,
    data: Dataset = None,
    initial_mask: Mask = None,
) -> ExperimentRecord:
    """Execute the full pipeline for the configured method.

    One-shot methods prune the baseline immediately and fine-tune; ramped
    methods run the scheduler to done first, prune exactly the recorded
    set, then fine-tune under the shared schedule. ``initial_mask``
    overrides the selection step (used by the shared-random-set protocol).
    """
    data = data or build_dataset(exp)
    if data.classes != exp.classes:
        raise ConfigError(
            f"dataset has {data.classes} classes, network expects {exp.classes}"
        )
    net = (baseline or pretrain(exp, data)).clone()
    plan = parse_pruning_plan(exp.plan, len(net.layers), exp.granularity)
    record = ExperimentRecord(n_layers=len(net.layers))
    baseline_acc = accuracy(net, data.val_x, data.val_y)

    if exp.method in ("oneshot_l1", "random_subset"):
        if initial_mask is not None:
            mask = initial_mask
        elif exp.method == "oneshot_l1":
            mask = select_prune_set(group_l1_norms(net, exp.granularity), plan)
        else:
            mask = random_prune_set(net, plan, seed=[exp.seed, 3])
        pre_prune_acc = baseline_acc
        reg_ticks = 0
        state = None
    else:
        state = _init_state(exp, net, plan, initial_mask)
        reg_ticks = _run_reg_phase(
            net, data, exp, state, record, collect_snapshots=(exp.method == "greg2")
        )
        mask = state.prune_mask()
        pre_prune_acc = accuracy(net, data.val_x, data.val_y)

    pruned = apply_hard_prune(net, mask, exp.granularity)
    post_prune_acc = accuracy(pruned, data.val_x, data.val_y)

    ft_rng = np.random.default_rng([exp.seed, 4])

    def ft_recorder(step, loss):
        it = reg_ticks + step
        if it % exp.metric_every == 0:
            _metric_row(record, it, "finetune", 0.0, loss, pruned, data,
                        exp.granularity)

    _train(pruned, data, exp.finetune, ft_rng, exp.reg.base_decay, ft_recorder)
    record.summary = {
        "method": exp.method,
        "seed": exp.seed,
        "baseline_acc": baseline_acc,
        "pre_prune_acc": pre_prune_acc,
        "post_prune_acc": post_prune_acc,
        "post_finetune_acc": accuracy(pruned, data.val_x, data.val_y),
        "sparsity": sparsity(net, pruned),
        "pruned_hash": mask.digest(),
        "reg_ticks": reg_ticks,
    }
    record.summary.update(
        suppression_stats(net, state) if state is not None else {}
    )
    return record


def suppression_stats(net: Network, state: RegState) -> dict:
    """How far the ramp pushed the prune-set weights below the kept ones.

    Numerator: max |w| over all prune-set groups. Denominators: the mean
    of per-group mean |w| over kept groups (reported ratio) and the min of
    those means (stricter variant, reported for reference).
    """
    pruned_max = 0.0
    kept_means = []
    for l in state.eligible_layers:
        spec, w = net.layers[l], net.weights[l]
        pruned = np.asarray(state.prune_sets[l], dtype=int)
        kept = np.setdiff1d(np.arange(state._counts[l]), pruned)
        if state.granularity == "weight":
            flat = np.abs(w.ravel())
            if pruned.size:
                pruned_max = max(pruned_max, float(flat[pruned].max()))
            kept_means.extend(flat[kept].tolist())
        elif spec.kind == "dense":
            a = np.abs(w)
            if pruned.size:
                pruned_max = max(pruned_max, float(a[:, pruned].max()))
            kept_means.extend(a[:, kept].mean(axis=0).tolist())
        else:
            a = np.abs(w)
            if pruned.size:
                pruned_max = max(pruned_max, float(a[pruned].max()))
            kept_means.extend(a[kept].mean(axis=(1, 2, 3)).tolist())
    if not kept_means:
        return {}
    mean_kept = float(np.mean(kept_means))
    min_kept = float(np.min(kept_means))
    return {
        "pruned_max_abs": pruned_max,
        "kept_group_mean_abs": mean_kept,
        "suppression_ratio": pruned_max / mean_kept if mean_kept > 0 else float("inf"),
        "suppression_ratio_strict": pruned_max / min_kept if min_kept > 0 else float("inf"),
    }


@dataclass(eq=False)
class ComparisonResult:
    per_seed: list
    aggregates: dict

    def table_csv(self) -> str:
        lines = ["seed,method,post_finetune_acc,pruned_hash"]
        for row in self.per_seed:
            lines.append(
                f"{row['seed']},{row['method']},{_f(row['post_finetune_acc'])},{row['pruned_hash']}"
            )
        lines.append("method,mean,std,,")
        for method, (mean, std) in self.aggregates.items():
            lines.append(f"{method},{_f(mean)},{_f(std)},,")
        return "\n".join(lines) + "\n"


def compare_schedules(exp: ExperimentConfig, n_seeds: int, kind: str = "l1") -> ComparisonResult:
    """Ramped-vs-one-shot comparison over seeds with matched pruned sets.

    kind "l1": both methods prune the baseline's smallest-L1 groups (the
    same set by construction, asserted via digests). kind "random": one
    seeded random mask per seed, shared by both schedules.
    """
    if n_seeds < 2:
        raise ConfigError(f"need n_seeds >= 2, got {n_seeds}")
    if kind not in ("l1", "random"):
        raise ConfigError(f"kind must be 'l1' or 'random', got {kind!r}")
    per_seed = []
    accs = {"greg1": [], "oneshot": []}
    for s in range(n_seeds):
        exp_s = replace(exp, seed=exp.seed + s, method="greg1")
        data = build_dataset(exp_s, seed_shift=s)
        baseline = pretrain(exp_s, data)
        mask = None
        if kind == "random":
            plan = parse_pruning_plan(exp_s.plan, len(baseline.layers), exp_s.granularity)
            mask = random_prune_set(baseline, plan, seed=[exp_s.seed, 3])
        rec_greg = run_method(exp_s, baseline=baseline, data=data, initial_mask=mask)
        exp_o = replace(
            exp_s, method="oneshot_l1" if kind == "l1" else "random_subset"
        )
        rec_one = run_method(exp_o, baseline=baseline, data=data, initial_mask=mask)
        if rec_greg.summary["pruned_hash"] != rec_one.summary["pruned_hash"]:
            raise ProtocolError(
                f"seed {exp_s.seed}: pruned sets differ between schedules "
                f"({rec_greg.summary['pruned_hash']} vs {rec_one.summary['pruned_hash']})"
            )
        for name, rec in (("greg1", rec_greg), ("oneshot", rec_one)):
            accs[name].append(rec.summary["post_finetune_acc"])
            per_seed.append(
                {
                    "seed": exp_s.seed,
                    "method": name,
                    "post_finetune_acc": rec.summary["post_finetune_acc"],
                    "pruned_hash": rec.summary["pruned_hash"],
                }
            )
    aggregates = {
        name: (float(np.mean(vals)), float(np.std(vals))) for name, vals in accs.items()
    }
    return ComparisonResult(per_seed=per_seed, aggregates=aggregates)


def schedule_length(exp: ExperimentConfig) -> int:
    """Tick count the configured ramp runs before reporting done.

    The duration depends only on the ramp constants, so it is measured on
    a throwaway two-unit net without any training.
    """
    dummy = Network.initialize(
        (
            LayerSpec("dense", 2, activation="relu"),
            LayerSpec("dense", 2, activation="none"),
        ),
        (2,),
        2,
        seed=0,
    )
    plan = parse_pruning_plan("[0.5, 0]", 2, "filter")
    state = (greg2_init if exp.method == "greg2" else greg1_init)(dummy, plan, exp.reg)
    ticks = 0
    while not is_prune_ready(state):
        state, _ = tick(state, dummy, exp.reg)
        ticks += 1
    return ticks


def track_separation(exp: ExperimentConfig, control: bool = False) -> ExperimentRecord:
    """Record dispersion series and norm snapshots under the growing penalty.

    With ``control=True`` the scheduler is bypassed: the net trains for the
    same number of ticks under the uniform base decay, isolating what the
    growing penalty adds.
    """
    data = build_dataset(exp)
    net = pretrain(exp, data).clone()
    record = ExperimentRecord(n_layers=len(net.layers))
    if not control:
        exp = replace(exp, method="greg2")
        plan = parse_pruning_plan(exp.plan, len(net.layers), exp.granularity)
        state = greg2_init(net, plan, exp.reg)
        _run_reg_phase(net, data, exp, state, record, collect_snapshots=True)
        record.summary = {"mode": "greg2", "ticks": state.iter}
        return record
    total = schedule_length(replace(exp, method="greg2"))
    plan = parse_pruning_plan(exp.plan, len(net.layers), exp.granularity)
    prunable = [
        l for l, spec in enumerate(net.layers)
        if spec.prunable and l not in plan.never_prune
    ]
    opt = OptimState.for_network(
        net, exp.reg_lr, momentum=exp.reg_momentum, base_decay=exp.reg.base_decay
    )
    batches = data.batches(exp.reg_batch_size, np.random.default_rng([exp.seed, 2]))
    for it in range(total):
        x, y = next(batches)
        loss, grads = loss_and_grads(net, x, y)
        sgd_step(net, grads, opt)
        if it % exp.metric_every == 0:
            _metric_row(record, it, "control", 0.0, loss, net, data, exp.granularity)
            _snapshot(record, it, net, exp.granularity, prunable)
    record.summary = {"mode": "control", "ticks": total}
    return record


def finetune(net: Network, sched: PhaseSchedule, data: Dataset, base_decay=5e-4, seed=0) -> Network:
    """Standalone fine-tune entry point; respects frozen-zero weights."""
    return _train(
        net, data, sched, np.random.default_rng([seed, 4]), base_decay
    )
