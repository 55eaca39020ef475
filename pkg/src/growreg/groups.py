"""Weight grouping, L1 scoring, masks, and physical pruning.

A weight group is the unit of pruning: one filter (conv) or one output
unit's incoming column (dense) at ``filter`` granularity, or a single
weight at ``weight`` granularity. Selection zeroes the mask entries of the
lowest-L1 groups per layer; hard pruning either pins those weights at zero
(unstructured) or slices the tensors, including the consumer layer's
matching input slice (structured).

All transformations return new objects; nothing here mutates a network.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, DomainError, PlanError, StructureError
from .netcore import Network

GRANULARITIES = ("filter", "weight")


def _check_granularity(granularity):
    if granularity not in GRANULARITIES:
        raise DomainError(f"granularity must be one of {GRANULARITIES}")


@dataclass(frozen=True)
class PruningPlan:
    """Per-layer target ratios plus grouping granularity.

    Layers in ``never_prune`` must carry ratio 0; by default layer 0 is
    protected, dropped automatically when the plan explicitly assigns it a
    nonzero ratio.
    """

    ratios: tuple
    granularity: str = "filter"
    never_prune: frozenset = None

    def __post_init__(self):
        _check_granularity(self.granularity)
        ratios = tuple(float(r) for r in self.ratios)
        if any(not 0.0 <= r <= 1.0 for r in ratios):
            raise PlanError(f"ratios must lie in [0, 1], got {ratios}")
        if self.never_prune is None:
            protected = frozenset({0}) if ratios and ratios[0] == 0.0 else frozenset()
        else:
            protected = frozenset(int(l) for l in self.never_prune)
        for l in protected:
            if l < 0 or l >= len(ratios):
                raise PlanError(f"never_prune index {l} out of range")
            if ratios[l] != 0.0:
                raise PlanError(f"layer {l} is protected but has ratio {ratios[l]}")
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "never_prune", protected)

    @property
    def num_layers(self):
        return len(self.ratios)


_RANGE_ITEM = re.compile(r"^(\d+)(?:-(\d+))?:([0-9.eE+-]+)$")


def parse_pruning_plan(text: str, num_layers: int, granularity: str = "filter"):
    """Parse a plan string against a known layer count.

    Two forms are accepted: a stage list ``[0, 0.75, 0.75, 0.32]`` with one
    ratio per layer, and a range form ``[0:0, 1-15:0.70]`` assigning a
    ratio per index or inclusive index range. Range form must cover every
    layer exactly once.
    """
    s = text.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise PlanError(f"plan must be bracketed, got {text!r}")
    body = s[1:-1].strip()
    items = [it.strip() for it in body.split(",")] if body else []
    if not items:
        raise PlanError("empty plan string")
    if any(":" in it for it in items):
        if not all(":" in it for it in items):
            raise PlanError("cannot mix range entries and plain ratios")
        ratios = [None] * num_layers
        for it in items:
            m = _RANGE_ITEM.match(it)
            if not m:
                raise PlanError(f"malformed range entry {it!r}")
            lo = int(m.group(1))
            hi = int(m.group(2)) if m.group(2) is not None else lo
            if hi < lo:
                raise PlanError(f"descending range in {it!r}")
            if hi >= num_layers:
                raise PlanError(f"entry {it!r} exceeds layer count {num_layers}")
            try:
                ratio = float(m.group(3))
            except ValueError:
                raise PlanError(f"bad ratio in {it!r}") from None
            for l in range(lo, hi + 1):
                if ratios[l] is not None:
                    raise PlanError(f"layer {l} covered twice (at {it!r})")
                ratios[l] = ratio
        uncovered = [l for l, r in enumerate(ratios) if r is None]
        if uncovered:
            raise PlanError(f"layers {uncovered} not covered by range plan")
    else:
        if len(items) != num_layers:
            raise PlanError(
                f"stage list has {len(items)} entries for {num_layers} layers"
            )
        try:
            ratios = [float(it) for it in items]
        except ValueError as exc:
            raise PlanError(f"bad ratio in plan: {exc}") from None
    return PruningPlan(ratios=tuple(ratios), granularity=granularity)


def format_pruning_plan(plan: PruningPlan) -> str:
    """Stage-list serialization; parses back to an equal plan."""

    def fmt(r):
        return str(int(r)) if r == int(r) else repr(r)

    return "[" + ", ".join(fmt(r) for r in plan.ratios) + "]"


# -- grouping and scoring ----------------------------------------------------


def group_counts(net: Network, granularity: str):
    _check_granularity(granularity)
    if granularity == "filter":
        return [spec.units for spec in net.layers]
    return [w.size for w in net.weights]


@dataclass(frozen=True, eq=False)
class GroupNorms:
    """Per-layer arrays of group L1 norms, stamped with an iteration."""

    per_layer: list
    granularity: str
    iteration: int = 0


def group_l1_norms(net: Network, granularity: str, iteration: int = 0) -> GroupNorms:
    _check_granularity(granularity)
    norms = []
    for spec, w in zip(net.layers, net.weights):
        if granularity == "weight":
            norms.append(np.abs(w).ravel())
        elif spec.kind == "dense":
            norms.append(np.abs(w).sum(axis=0))
        else:
            norms.append(np.abs(w).sum(axis=(1, 2, 3)))
    return GroupNorms(per_layer=norms, granularity=granularity, iteration=iteration)


def norm_dispersion(norms) -> float:
    """Population stddev over mean of one layer's group norms."""
    vals = np.asarray(norms, dtype=float).ravel()
    if vals.size < 2:
        raise DomainError(f"dispersion needs >= 2 groups, got {vals.size}")
    mean = vals.mean()
    if mean <= 0:
        raise DomainError(f"dispersion undefined for mean {mean}")
    return float(vals.std() / mean)


# -- masks --------------------------------------------------------------------


@dataclass(eq=False)
class Mask:
    """Per-group keep flags (1 keep, 0 prune), one array per layer."""

    granularity: str
    flags: list = field(default_factory=list)

    def pruned_counts(self):
        return [int((f == 0).sum()) for f in self.flags]

    def total_groups(self):
        return int(sum(f.size for f in self.flags))

    def to_text(self) -> str:
        lines = [f"# granularity={self.granularity}"]
        for l, f in enumerate(self.flags):
            lines.append(f"{l} " + "".join("1" if v else "0" for v in f))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# granularity="):
            raise PlanError("mask text missing granularity header")
        granularity = lines[0].split("=", 1)[1].strip()
        _check_granularity(granularity)
        flags = []
        for expect, ln in enumerate(lines[1:]):
            idx_str, bits = ln.split(None, 1)
            if int(idx_str) != expect:
                raise PlanError(f"mask layers out of order at line {ln!r}")
            if not set(bits) <= {"0", "1"}:
                raise PlanError(f"mask bits must be 0/1, got {bits!r}")
            flags.append(np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0"))
        return cls(granularity=granularity, flags=flags)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _selection_counts(plan: PruningPlan, counts):
    if len(counts) != plan.num_layers:
        raise PlanError(
            f"plan covers {plan.num_layers} layers, network has {len(counts)}"
        )
    out = []
    for l, (r, n) in enumerate(zip(plan.ratios, counts)):
        k = int(np.floor(r * n))
        if n > 0 and k >= n:
            raise PlanError(
                f"layer {l}: ratio {r} would remove all {n} groups; "
                "at least one group must survive"
            )
        out.append(k)
    return out


def select_prune_set(norms: GroupNorms, plan: PruningPlan) -> Mask:
    """Mask the floor(r_l * n_l) smallest-norm groups per layer.

    Ties break toward the lower group index (stable sort), which keeps the
    selection deterministic and permutation-consistent.
    """
    if norms.granularity != plan.granularity:
        raise PlanError(
            f"norms granularity {norms.granularity!r} != plan {plan.granularity!r}"
        )
    ks = _selection_counts(plan, [len(v) for v in norms.per_layer])
    flags = []
    for vals, k in zip(norms.per_layer, ks):
        f = np.ones(len(vals), dtype=np.uint8)
        if k > 0:
            order = np.argsort(vals, kind="stable")
            f[order[:k]] = 0
        flags.append(f)
    return Mask(granularity=plan.granularity, flags=flags)


def random_prune_set(net: Network, plan: PruningPlan, seed: int) -> Mask:
    """Uniform random choice of floor(r_l * n_l) groups per layer, seeded."""
    counts = group_counts(net, plan.granularity)
    ks = _selection_counts(plan, counts)
    rng = np.random.default_rng(seed)
    flags = []
    for n, k in zip(counts, ks):
        f = np.ones(n, dtype=np.uint8)
        if k > 0:
            f[rng.choice(n, size=k, replace=False)] = 0
        flags.append(f)
    return Mask(granularity=plan.granularity, flags=flags)


def validate_plan_against(net: Network, plan: PruningPlan):
    """Reject plans that target non-prunable layers or mismatch the net."""
    if plan.num_layers != len(net.layers):
        raise PlanError(
            f"plan covers {plan.num_layers} layers, network has {len(net.layers)}"
        )
    for l, (spec, r) in enumerate(zip(net.layers, plan.ratios)):
        if r > 0 and not spec.prunable:
            raise PlanError(f"layer {l} is not prunable but has ratio {r}")
        if r > 0 and l in plan.never_prune:
            raise PlanError(f"layer {l} is protected but has ratio {r}")
    if plan.ratios and plan.ratios[-1] > 0:
        raise PlanError("final classifier layer cannot be pruned")


# -- physical pruning ----------------------------------------------------------


def expand_group_values(net: Network, granularity: str, layer_values):
    """Broadcast per-group scalars to weight-shaped arrays, layer by layer.

    Used to turn a per-group penalty map into the per-weight factors the
    optimizer consumes.
    """
    _check_granularity(granularity)
    counts = group_counts(net, granularity)
    if [len(v) for v in layer_values] != counts:
        raise DimensionError("group values do not cover the network's groups")
    out = []
    for spec, w, vals in zip(net.layers, net.weights, layer_values):
        vals = np.asarray(vals, dtype=float)
        if granularity == "weight":
            out.append(vals.reshape(w.shape))
        elif spec.kind == "dense":
            out.append(np.broadcast_to(vals[None, :], w.shape))
        else:
            out.append(np.broadcast_to(vals[:, None, None, None], w.shape))
    return out


def apply_hard_prune(net: Network, mask: Mask, granularity: str = None) -> Network:
    """Physically apply a mask, returning a new network.

    Weight granularity pins masked weights at exactly zero and freezes
    them out of future updates. Filter granularity removes the group's
    slice from its layer and the matching input slice from the consumer
    layer (channels for conv consumers, flattened blocks for dense
    consumers); removed filters take their biases with them.
    """
    granularity = granularity or mask.granularity
    if granularity != mask.granularity:
        raise PlanError(
            f"mask granularity {mask.granularity!r} != requested {granularity!r}"
        )
    counts = group_counts(net, granularity)
    if [len(f) for f in mask.flags] != counts:
        raise DimensionError("mask does not cover the network's groups")

    out = net.clone()
    if granularity == "weight":
        for l, flags in enumerate(mask.flags):
            dead = (flags == 0).reshape(out.weights[l].shape)
            out.weights[l][dead] = 0.0
            prev = out.frozen[l]
            out.frozen[l] = dead if prev is None else (prev | dead)
        return Network(
            out.layers, out.input_shape, out.classes, out.weights, out.biases, out.frozen
        )

    specs = list(out.layers)
    shapes = net._layer_input_shapes
    for l, flags in enumerate(mask.flags):
        removed = np.flatnonzero(flags == 0)
        if removed.size == 0:
            continue
        spec = specs[l]
        if l == len(specs) - 1:
            raise StructureError("cannot remove output units of the final layer")
        if flags.sum() == 0:
            raise StructureError(f"layer {l}: mask removes every group")
        axis = 1 if spec.kind == "dense" else 0
        out.weights[l] = np.delete(out.weights[l], removed, axis=axis)
        out.biases[l] = np.delete(out.biases[l], removed)
        if out.frozen[l] is not None:
            out.frozen[l] = np.delete(out.frozen[l], removed, axis=axis)
        specs[l] = replace(spec, units=spec.units - removed.size)

        nxt = specs[l + 1]
        if nxt.kind == "conv2d":
            if spec.kind != "conv2d":
                raise StructureError("dense output feeding conv2d is unsupported")
            out.weights[l + 1] = np.delete(out.weights[l + 1], removed, axis=1)
            if out.frozen[l + 1] is not None:
                out.frozen[l + 1] = np.delete(out.frozen[l + 1], removed, axis=1)
        else:
            if spec.kind == "dense":
                rows = removed
            else:
                block = int(np.prod(shapes[l + 1][1:]))
                rows = (removed[:, None] * block + np.arange(block)[None, :]).ravel()
            out.weights[l + 1] = np.delete(out.weights[l + 1], rows, axis=0)
            if out.frozen[l + 1] is not None:
                out.frozen[l + 1] = np.delete(out.frozen[l + 1], rows, axis=0)
    try:
        return Network(specs, out.input_shape, out.classes, out.weights, out.biases, out.frozen)
    except (DimensionError, DomainError) as exc:
        raise StructureError(f"mask produced an inconsistent network: {exc}") from exc


def sparsity(original: Network, pruned: Network) -> float:
    """Fraction of weight entries removed or pinned at zero."""
    total = original.num_weights()
    live = 0
    for w, fz in zip(pruned.weights, pruned.frozen):
        live += w.size - (int(fz.sum()) if fz is not None else 0)
    return 1.0 - live / total
