"""Per-layer wordlength search under accuracy and weight-memory constraints.

The driver quantizes weights and activations uniformly first (step 1),
then fits the weights to the memory budget with linearly decreasing
wordlengths (step 2). If the budget-fitted model still clears the
accuracy target it tightens activations layer by layer and then the
routing internals (steps 3A/4A, "path A"); otherwise it returns the
budget-fitted model together with a weights-tightened model that keeps
the target accuracy (step 3B, "path B"). One such run happens per
rounding scheme; a selection pass merges them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

from .capsnet import CapsModel, QuantConfig, evaluate
from .fixedpoint import RoundingScheme

# An oracle maps a candidate config (or None for full precision) to an
# accuracy fraction; it must be deterministic for a fixed seed.
AccuracyOracle = Callable[[QuantConfig | None], float]

_SCHEME_RANK = {RoundingScheme.TRN: 0, RoundingScheme.RTN: 1, RoundingScheme.SR: 2}


class SearchFailure(RuntimeError):
    """A search step could not reach its accuracy bar; carries the best
    config seen so the caller can still report something useful."""

    def __init__(self, message: str, best_config: QuantConfig | None = None,
                 best_accuracy: float | None = None):
        super().__init__(message)
        self.best_config = best_config
        self.best_accuracy = best_accuracy


class InfeasibleBudgetError(RuntimeError):
    """Even the all-floor wordlength assignment exceeds the memory budget."""


class QuantTarget(enum.Enum):
    WEIGHTS = "weights"
    ACTIVATIONS = "activations"
    WEIGHTS_AND_ACTIVATIONS = "weights+activations"


def target_accuracy(acc_fp32: float, acc_tol: float) -> float:
    """Minimum acceptable accuracy: acc_fp32 * (1 - acc_tol)."""
    return acc_fp32 * (1.0 - acc_tol)


def step1_threshold(acc_fp32: float, acc_tol: float) -> float:
    """Bar for the uniform stage; only 5% of the tolerance may be spent."""
    return acc_fp32 * (1.0 - 0.05 * acc_tol)


def _apply_target(base: QuantConfig, targets: QuantTarget,
                  bits: Sequence[int]) -> QuantConfig:
    bits = tuple(bits)
    if targets is QuantTarget.WEIGHTS:
        return base.with_q_w(bits)
    if targets is QuantTarget.ACTIVATIONS:
        # routing internals follow their layer's activation wordlength
        # until the dedicated routing stage specializes them
        return base.with_q_a(bits, retie_dr=True)
    return base.with_q_w(bits).with_q_a(bits, retie_dr=True)


def binary_search_uniform(oracle: AccuracyOracle, targets: QuantTarget,
                          q_init: int, acc_min: float, base: QuantConfig,
                          floor: int = 1) -> tuple[QuantConfig, int]:
    """Smallest probed uniform fractional wordlength in [floor, q_init]
    whose accuracy reaches acc_min; at most ceil(log2(q_init)) + 1 probes."""
    if q_init < floor:
        raise ValueError(f"q_init {q_init} below floor {floor}")
    L = len(base.q_w)
    lo, hi = floor, q_init
    best: tuple[QuantConfig, int] | None = None
    seen_cfg, seen_acc = None, -1.0
    while lo <= hi:
        mid = (lo + hi) // 2
        cfg = _apply_target(base, targets, (mid,) * L)
        acc = oracle(cfg)
        if acc > seen_acc:
            seen_cfg, seen_acc = cfg, acc
        if acc >= acc_min:
            best = (cfg, mid)
            hi = mid - 1
        else:
            lo = mid + 1
    if best is None:
        raise SearchFailure(
            f"no uniform wordlength in [{floor}, {q_init}] reaches "
            f"accuracy {acc_min:.6f} (best seen {seen_acc:.6f})",
            best_config=seen_cfg, best_accuracy=seen_acc)
    return best


def memory_budget_wordlengths(param_counts: Sequence[int], budget_bits: int,
                              floor: int = 1) -> list[int]:
    """Per-layer wordlengths [n0, n0-1, ...] (clamped at `floor`) with the
    largest integer n0 whose total cost sum(P_l * bits_l) fits the budget."""
    counts = [int(p) for p in param_counts]
    if not counts or any(p <= 0 for p in counts):
        raise ValueError(f"parameter counts must be positive, got {counts}")
    if floor < 1:
        raise ValueError("wordlength floor must be >= 1")

    def cost(n0: int) -> int:
        return sum(p * max(n0 - l, floor) for l, p in enumerate(counts))

    if cost(floor) > budget_bits:
        raise InfeasibleBudgetError(
            f"all-floor assignment needs {cost(floor)} bits > budget {budget_bits}")
    # unclamped solution bounds the clamped one from above
    total = sum(counts)
    n0 = max(floor, (budget_bits + sum(l * p for l, p in enumerate(counts))) // total)
    while n0 > floor and cost(n0) > budget_bits:
        n0 -= 1
    return [max(n0 - l, floor) for l in range(len(counts))]


def layerwise_quantization(oracle: AccuracyOracle, targets: QuantTarget,
                           q_init: Sequence[int], acc_min: float,
                           base: QuantConfig,
                           floor: int = 1) -> tuple[QuantConfig, list[int]]:
    """Tighten layers left to right: decrement every layer from the
    current start onward until accuracy drops (or the floor is hit),
    step back, advance the start. Layer 0 is never touched."""
    q = [int(v) for v in q_init]
    L = len(q)
    if L != len(base.q_w):
        raise ValueError(f"q_init covers {L} layers, config has {len(base.q_w)}")
    acc0 = oracle(_apply_target(base, targets, q))
    if acc0 < acc_min:
        raise SearchFailure(
            f"starting point already below the bar ({acc0:.6f} < {acc_min:.6f})",
            best_config=_apply_target(base, targets, q), best_accuracy=acc0)
    for start in range(1, L):
        while min(q[start:]) > floor:
            trial = q[:start] + [v - 1 for v in q[start:]]
            if oracle(_apply_target(base, targets, trial)) < acc_min:
                break
            q = trial
    return _apply_target(base, targets, q), q


def dr_quantization(oracle: AccuracyOracle, layer: int, q_init: int,
                    acc_min: float, base: QuantConfig,
                    floor: int = 1) -> int:
    """Linear descent on one routing layer's internal wordlength; returns
    the last value that kept accuracy at or above the bar."""
    cfg0 = base.with_dr_bits(layer, q_init)
    acc0 = oracle(cfg0)
    if acc0 < acc_min:
        raise SearchFailure(
            f"routing layer {layer} already below the bar at {q_init} bits "
            f"({acc0:.6f} < {acc_min:.6f})",
            best_config=cfg0, best_accuracy=acc0)
    q = q_init
    while q - 1 >= floor:
        if oracle(base.with_dr_bits(layer, q - 1)) < acc_min:
            break
        q -= 1
    return q


def weight_memory_bits(model: CapsModel, q_w: Sequence[int]) -> int:
    """Bits to store all weights and biases: sum of P_l * (1 + q_w[l])."""
    return sum(p * (1 + int(q)) for p, q in zip(model.param_counts, q_w, strict=True))


def activation_memory_bits(model: CapsModel, q_a: Sequence[int]) -> int:
    """Bits to store every layer's output activation."""
    return sum(a * (1 + int(q))
               for a, q in zip(model.activation_counts, q_a, strict=True))


def baseline_weight_bits(model: CapsModel) -> int:
    return 32 * sum(model.param_counts)


def baseline_activation_bits(model: CapsModel) -> int:
    return 32 * sum(model.activation_counts)


@dataclass(frozen=True)
class ConfigMetrics:
    accuracy: float
    weight_memory_bits: int
    activation_memory_bits: int
    weight_reduction: float      # vs. the 32-bit baseline
    activation_reduction: float


@dataclass(frozen=True)
class EvaluatedConfig:
    config: QuantConfig
    metrics: ConfigMetrics


def measure(model: CapsModel, cfg: QuantConfig, accuracy: float) -> EvaluatedConfig:
    w_bits = weight_memory_bits(model, cfg.q_w)
    a_bits = activation_memory_bits(model, cfg.q_a)
    return EvaluatedConfig(cfg, ConfigMetrics(
        accuracy=accuracy,
        weight_memory_bits=w_bits,
        activation_memory_bits=a_bits,
        weight_reduction=baseline_weight_bits(model) / w_bits,
        activation_reduction=baseline_activation_bits(model) / a_bits,
    ))


@dataclass(frozen=True)
class SearchInputs:
    model: CapsModel
    dataset: object                      # anything with images/labels/len
    acc_tol: float
    memory_budget_bits: int
    schemes: tuple[RoundingScheme, ...] = (RoundingScheme.TRN,
                                           RoundingScheme.RTN,
                                           RoundingScheme.SR)
    seed: int = 0
    eval_subset: int | None = None
    floor_bits: int = 1
    q_init: int = 32

    def __post_init__(self) -> None:
        if not 0.0 <= self.acc_tol < 1.0:
            raise ValueError(f"acc_tol must be in [0, 1), got {self.acc_tol}")
        if self.memory_budget_bits <= 0:
            raise ValueError("memory budget must be positive")
        if self.floor_bits < 1:
            raise ValueError("floor must be >= 1 fractional bit")


@dataclass(frozen=True)
class SearchOutcome:
    """Result of one scheme's run. Path "A" carries model_satisfied;
    path "B" carries model_memory (unless the budget was infeasible)
    and model_accuracy; a failed run carries error instead."""

    scheme: RoundingScheme
    path: str                            # "A", "B", or "failed"
    acc_fp32: float
    acc_target: float
    acc_mm: float | None = None
    model_satisfied: EvaluatedConfig | None = None
    model_memory: EvaluatedConfig | None = None
    model_accuracy: EvaluatedConfig | None = None
    notes: tuple[str, ...] = ()
    error: str | None = None


def make_evaluation_oracle(model: CapsModel, dataset, seed: int) -> AccuracyOracle:
    """The real oracle: accuracy on the dataset, memoized per config."""
    cache: dict[QuantConfig | None, float] = {}

    def oracle(cfg: QuantConfig | None) -> float:
        if cfg not in cache:
            cache[cfg] = evaluate(model, dataset, cfg, seed)
        return cache[cfg]

    return oracle


def _run_scheme(model: CapsModel, scheme: RoundingScheme,
                oracle: AccuracyOracle, acc_tol: float, budget_bits: int,
                floor: int, q_init: int) -> SearchOutcome:
    acc_fp32 = oracle(None)
    acc_tgt = target_accuracy(acc_fp32, acc_tol)
    L = model.num_layers
    base = QuantConfig.uniform(model, scheme, q_init, q_init)
    notes: list[str] = []

    # step 1: uniform weights+activations, spending 5% of the tolerance
    try:
        cfg1, q1 = binary_search_uniform(
            oracle, QuantTarget.WEIGHTS_AND_ACTIVATIONS, q_init,
            step1_threshold(acc_fp32, acc_tol), base, floor)
    except SearchFailure as exc:
        return SearchOutcome(scheme, "failed", acc_fp32, acc_tgt,
                             error=f"uniform stage failed: {exc}")

    # step 2: fit the weights to the budget; wordlengths cannot exceed the
    # uniform stage's grid (re-quantizing coarser values is a no-op)
    model_memory = None
    acc_mm = None
    try:
        lengths = memory_budget_wordlengths(model.param_counts, budget_bits,
                                            floor=floor + 1)
        q_w_mm = [min(n - 1, q1) for n in lengths]
        cfg_mm = cfg1.with_q_w(q_w_mm)
        acc_mm = oracle(cfg_mm)
        model_memory = measure(model, cfg_mm, acc_mm)
    except InfeasibleBudgetError as exc:
        notes.append(f"memory stage infeasible: {exc}")

    if acc_mm is not None and acc_mm > acc_tgt:
        # path A: tighten activations, then the routing internals
        try:
            acc_3a = acc_tgt + 0.5 * (acc_mm - acc_tgt)
            cfg_cur, _ = layerwise_quantization(
                oracle, QuantTarget.ACTIVATIONS, [q1] * L, acc_3a,
                base=cfg_mm, floor=floor)
            for layer in model.routing_layers:
                bits = dr_quantization(oracle, layer, cfg_cur.dr_bits(layer),
                                       acc_tgt, base=cfg_cur, floor=floor)
                cfg_cur = cfg_cur.with_dr_bits(layer, bits)
        except SearchFailure as exc:
            return SearchOutcome(scheme, "failed", acc_fp32, acc_tgt,
                                 acc_mm=acc_mm, error=f"path A failed: {exc}")
        satisfied = measure(model, cfg_cur, oracle(cfg_cur))
        return SearchOutcome(scheme, "A", acc_fp32, acc_tgt, acc_mm=acc_mm,
                             model_satisfied=satisfied, notes=tuple(notes))

    # path B: report the budget-fitted model as-is, plus the tightest
    # weight assignment that still holds the accuracy target
    model_accuracy = None
    try:
        cfg_b, q_b = binary_search_uniform(
            oracle, QuantTarget.WEIGHTS, q1, acc_tgt, base=cfg1, floor=floor)
        cfg_b2, _ = layerwise_quantization(
            oracle, QuantTarget.WEIGHTS, [q_b] * L, acc_tgt,
            base=cfg_b, floor=floor)
        model_accuracy = measure(model, cfg_b2, oracle(cfg_b2))
    except SearchFailure as exc:
        notes.append(f"accuracy-model stage failed: {exc}")
    return SearchOutcome(scheme, "B", acc_fp32, acc_tgt, acc_mm=acc_mm,
                         model_memory=model_memory,
                         model_accuracy=model_accuracy, notes=tuple(notes))


def run_framework(inputs: SearchInputs,
                  oracle_factory: Callable[[RoundingScheme], AccuracyOracle]
                  | None = None) -> list[SearchOutcome]:
    """Run the full search once per rounding scheme.

    Scheme runs are independent: each one gets its own oracle (and so its
    own stream lineage); results merge only in select_rounding_scheme.
    `oracle_factory` replaces the real evaluation oracle, which lets the
    control flow be driven by synthetic accuracy functions.
    """
    if oracle_factory is None:
        dataset = inputs.dataset
        n = inputs.eval_subset
        if n is not None and n < len(dataset):
            dataset = dataset.take(n)

        def oracle_factory(scheme: RoundingScheme) -> AccuracyOracle:
            return make_evaluation_oracle(inputs.model, dataset, inputs.seed)

    return [
        _run_scheme(inputs.model, scheme, oracle_factory(scheme),
                    inputs.acc_tol, inputs.memory_budget_bits,
                    inputs.floor_bits, inputs.q_init)
        for scheme in inputs.schemes
    ]


@dataclass(frozen=True)
class SelectedConfig:
    scheme: RoundingScheme
    role: str                    # "satisfied", "memory", or "accuracy"
    result: EvaluatedConfig


@dataclass(frozen=True)
class Selection:
    path: str                    # "A" or "B"
    satisfied: SelectedConfig | None = None
    memory_pick: SelectedConfig | None = None
    accuracy_pick: SelectedConfig | None = None


def select_rounding_scheme(outcomes: Sequence[SearchOutcome]) -> Selection:
    """Merge per-scheme outcomes.

    If any scheme completed path A, path-B results are discarded and the
    path-A model with the least weight memory wins (ties: fewer
    activation bits, then the simpler scheme, TRN < RTN < SR). With only
    path B, the budget-fitted model with the highest accuracy and the
    accuracy-holding model with the least memory are returned."""
    if not outcomes:
        raise ValueError("no outcomes to select from")

    path_a = [(o.scheme, o.model_satisfied) for o in outcomes
              if o.path == "A" and o.model_satisfied is not None]
    if path_a:
        scheme, result = min(path_a, key=lambda sr: (
            sr[1].metrics.weight_memory_bits,
            sr[1].metrics.activation_memory_bits,
            _SCHEME_RANK[sr[0]]))
        return Selection("A", satisfied=SelectedConfig(scheme, "satisfied", result))

    memory_pick = None
    mems = [(o.scheme, o.model_memory) for o in outcomes
            if o.model_memory is not None]
    if mems:
        scheme, result = min(mems, key=lambda sr: (
            -sr[1].metrics.accuracy,
            sr[1].metrics.weight_memory_bits,
            _SCHEME_RANK[sr[0]]))
        memory_pick = SelectedConfig(scheme, "memory", result)

    accuracy_pick = None
    accs = [(o.scheme, o.model_accuracy) for o in outcomes
            if o.model_accuracy is not None]
    if accs:
        scheme, result = min(accs, key=lambda sr: (
            sr[1].metrics.weight_memory_bits,
            -sr[1].metrics.accuracy,
            _SCHEME_RANK[sr[0]]))
        accuracy_pick = SelectedConfig(scheme, "accuracy", result)

    return Selection("B", memory_pick=memory_pick, accuracy_pick=accuracy_pick)
