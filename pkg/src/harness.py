"""运行框架模块

把轨迹重放到选定的分配器上，同时计量多个成本模型、可选挂上校验器，
汇总成 RunReport；另提供参数扫描。
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src import realloc_amortized, realloc_checkpointed, realloc_deamortized
from src.baselines import BASELINES, BaselineAllocator, make_baseline
from src.core import Event, LayoutState, MoveEvent
from src.costmodel import CostMeter, CostModel, parse_cost_spec
from src.errors import InvalidArgumentError
from src.oracle import Oracle, Verdict, VolumeLedger
from src.storage import Trace
from src.workloads import generate

logger = logging.getLogger(__name__)

MODES = ("amortized", "checkpointed", "deamortized") + tuple(f"baseline:{name}" for name in BASELINES)

DEFAULT_MODELS = ("constant:1", "linear:1", "sqrt:1", "seek:10,1")

_SPACE_CHECKS = {"amortized": "regions", "checkpointed": "regions", "deamortized": "tail"}


# ==================== 分配器适配 ====================


class AllocatorAdapter:
    """统一的分配器接口：insert / delete / checkpoint，以及 extent 等观测量"""

    mode = ""
    state: Optional[LayoutState] = None

    def subscribe(self, observer) -> None:
        self.state.subscribe(observer)

    def insert(self, name: str, length: int) -> None:
        raise NotImplementedError

    def delete(self, name: str) -> None:
        raise NotImplementedError

    def checkpoint(self) -> None:
        """默认不需要检查点"""

    @property
    def pending(self) -> bool:
        """是否还有等待检查点的刷新或排队操作"""
        return False

    def settle(self) -> Tuple[int, int]:
        """补完挂起的工作，返回 (补发的检查点数, 执行的排队操作数)"""
        return 0, 0

    @property
    def extent(self) -> int:
        return self.state.extent

    @property
    def checkpoints_total(self) -> int:
        return 0

    @property
    def checkpoints_per_op(self) -> Dict[int, int]:
        return {}

    @property
    def flush_history(self):
        return self.state.flush_history if self.state is not None else []


class AmortizedAdapter(AllocatorAdapter):
    mode = "amortized"

    def __init__(self, epsilon_prime: Fraction):
        self.state = realloc_amortized.new_state(epsilon_prime)

    def insert(self, name: str, length: int) -> None:
        realloc_amortized.insert(self.state, name, length)

    def delete(self, name: str) -> None:
        realloc_amortized.delete(self.state, name)


class CheckpointedAdapter(AllocatorAdapter):
    mode = "checkpointed"

    def __init__(self, epsilon_prime: Fraction, policy: str = "auto"):
        self.state, self.ledger = realloc_checkpointed.new_state(epsilon_prime, policy=policy)

    def insert(self, name: str, length: int) -> None:
        realloc_checkpointed.insert_ckpt(self.state, self.ledger, name, length)

    def delete(self, name: str) -> None:
        realloc_checkpointed.delete_ckpt(self.state, self.ledger, name)

    def checkpoint(self) -> None:
        realloc_checkpointed.checkpoint(self.state, self.ledger)

    @property
    def pending(self) -> bool:
        return self.ledger.job is not None

    def settle(self) -> Tuple[int, int]:
        _, granted, queued = realloc_checkpointed.settle(self.state, self.ledger)
        return granted, queued

    @property
    def checkpoints_total(self) -> int:
        return self.ledger.checkpoints_total

    @property
    def checkpoints_per_op(self) -> Dict[int, int]:
        return self.ledger.checkpoints_per_op


class DeamortizedAdapter(CheckpointedAdapter):
    mode = "deamortized"

    def __init__(self, epsilon_prime: Fraction):
        self.state, self.ledger = realloc_deamortized.new_state(epsilon_prime)

    def insert(self, name: str, length: int) -> None:
        realloc_deamortized.update_deamortized(self.state, self.ledger, "insert", name, length)

    def delete(self, name: str) -> None:
        realloc_deamortized.update_deamortized(self.state, self.ledger, "delete", name)

    def checkpoint(self) -> None:
        realloc_deamortized.checkpoint(self.state, self.ledger)

    @property
    def pending(self) -> bool:
        # 日志中的更新已经落到日志区，进行中的刷新不影响结果
        return False


class BaselineAdapter(AllocatorAdapter):
    def __init__(self, baseline: BaselineAllocator):
        self.baseline = baseline
        self.mode = f"baseline:{baseline.name}"

    def subscribe(self, observer) -> None:
        self.baseline.subscribe(observer)

    def insert(self, name: str, length: int) -> None:
        self.baseline.insert(name, length)

    def delete(self, name: str) -> None:
        self.baseline.delete(name)

    @property
    def extent(self) -> int:
        return self.baseline.extent


def make_allocator(
    mode: str,
    epsilon: Fraction = Fraction(1, 4),
    divisor: int = 8,
    checkpoint_policy: str = "auto",
) -> AllocatorAdapter:
    """按模式名创建分配器

    Raises:
        InvalidArgumentError: 未知模式或 ε 越界
    """
    epsilon = Fraction(epsilon)
    if not (0 < epsilon <= Fraction(1, 2)):
        raise InvalidArgumentError(f"ε 必须位于 (0, 1/2]: {epsilon}")
    if divisor < 2:
        raise InvalidArgumentError(f"ε' 除数至少为 2: {divisor}")
    epsilon_prime = epsilon / divisor
    if mode == "amortized":
        return AmortizedAdapter(epsilon_prime)
    if mode == "checkpointed":
        return CheckpointedAdapter(epsilon_prime, checkpoint_policy)
    if mode == "deamortized":
        return DeamortizedAdapter(epsilon_prime)
    if mode.startswith("baseline:"):
        return BaselineAdapter(make_baseline(mode.split(":", 1)[1]))
    raise InvalidArgumentError(f"未知的模式: {mode}，可选 {', '.join(MODES)}")


# ==================== 运行报告 ====================


@dataclass(frozen=True)
class ModelSummary:
    label: str
    allocation: Fraction
    reallocation: Fraction
    b_ratio: Fraction
    max_op_cost: Fraction


@dataclass
class RunReport:
    mode: str
    epsilon: Fraction
    epsilon_prime: Fraction
    checkpoint_policy: str = "auto"
    ops: int = 0
    inserts: int = 0
    deletes: int = 0
    checkpoint_ops: int = 0
    delta: int = 0
    final_volume: int = 0
    final_extent: int = 0
    max_extent_ratio: Fraction = Fraction(0)
    max_transient_ratio: Fraction = Fraction(0)
    flushes: int = 0
    checkpoints_total: int = 0
    settle_checkpoints: int = 0
    settled_ops: int = 0
    max_checkpoints_per_op: int = 0
    max_checkpoints_per_flush: int = 0
    max_moved_volume_per_op: int = 0
    total_moved_volume: int = 0
    event_digest: str = ""
    models: List[ModelSummary] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.verdicts

    def model(self, label: str) -> ModelSummary:
        for summary in self.models:
            if summary.label == label:
                return summary
        raise KeyError(label)


class _EventDigest:
    """事件流指纹：同一轨迹在不同成本模型下必须一致"""

    def __init__(self) -> None:
        self._hash = hashlib.sha256()
        self.count = 0

    def __call__(self, event: Event) -> None:
        if isinstance(event, MoveEvent):
            self._hash.update(event.describe().encode("utf-8"))
            self._hash.update(b"\n")
            self.count += 1

    def hexdigest(self) -> str:
        return self._hash.hexdigest()[:16]


def _inject_fault(oracle: Oracle) -> None:
    """伪造一次非法移动，只送给校验器

    优先写入上次检查点后释放的单元，其次覆盖一个活动对象，
    都没有时伪造一个对不上影子布局的源区间。
    """
    source = None
    freed = oracle.last_freed()
    if freed is not None:
        start = freed[0]
    elif oracle.shadow.where:
        start = next(iter(oracle.shadow.where.values()))[0]
    else:
        start, source = 0, (0, 1)
    oracle(MoveEvent("<fault>", 1, source, (start, start + 1), -1))
    oracle.shadow.remove("<fault>")
    if oracle.ledger.live.pop("<fault>", None) is not None:
        oracle.ledger.volume -= 1


def run(
    trace: Trace,
    mode: str = "amortized",
    epsilon: Fraction = Fraction(1, 4),
    models: Optional[Sequence[CostModel]] = None,
    validate: bool = False,
    divisor: int = 8,
    checkpoint_policy: str = "auto",
    inject_fault_at: Optional[int] = None,
) -> RunReport:
    """重放轨迹并生成报告

    Args:
        trace: 轨迹
        mode: 分配器模式
        epsilon: ε，ε' = ε / divisor
        models: 成本模型，默认四种标准模型
        validate: 是否挂上校验器
        divisor: ε' 除数
        checkpoint_policy: auto 或 trace
        inject_fault_at: 在该操作后注入一次故障（仅用于测试校验器）

    Returns:
        RunReport
    """
    started = time.perf_counter()
    allocator = make_allocator(mode, epsilon, divisor, checkpoint_policy)
    epsilon = Fraction(epsilon)
    epsilon_prime = epsilon / divisor
    if models is None:
        models = [parse_cost_spec(spec) for spec in DEFAULT_MODELS]

    meter = CostMeter(models)
    volumes = VolumeLedger()
    digest = _EventDigest()
    allocator.subscribe(volumes)
    allocator.subscribe(meter)
    allocator.subscribe(digest)

    oracle: Optional[Oracle] = None
    if validate or inject_fault_at is not None:
        oracle = Oracle(
            epsilon_prime=epsilon_prime,
            checkpointed=mode in ("checkpointed", "deamortized"),
            deamortized=mode == "deamortized",
            space_check=_SPACE_CHECKS.get(mode),
        )
        allocator.subscribe(oracle)

    report = RunReport(
        mode=allocator.mode,
        epsilon=epsilon,
        epsilon_prime=epsilon_prime,
        checkpoint_policy=checkpoint_policy,
    )
    logger.info("开始重放: mode=%s ε=%s ops=%d", allocator.mode, epsilon, len(trace))

    op_index = 0
    for op in trace.ops:
        if op.kind == "P":
            continue
        extent_before = allocator.extent
        length = 0
        if op.kind == "I":
            length = op.length
        elif op.kind == "D":
            length = volumes.live.get(op.name, 0)
        meter.begin_op()
        volumes.begin_op()
        if oracle is not None:
            oracle.begin_op(op_index, length if op.kind != "C" else 0)

        if op.kind == "I":
            allocator.insert(op.name, op.length)
            report.inserts += 1
        elif op.kind == "D":
            allocator.delete(op.name)
            report.deletes += 1
        else:
            allocator.checkpoint()
            report.checkpoint_ops += 1

        meter.end_op()
        volumes.end_op()
        if oracle is not None:
            oracle.end_op(allocator.state)
            if inject_fault_at == op_index:
                _inject_fault(oracle)

        extent_after = allocator.extent
        volume = volumes.volume
        if volume > 0:
            report.max_extent_ratio = max(report.max_extent_ratio, Fraction(extent_after, volume))
            peak = max(extent_before, extent_after, volumes.op_peak)
            transient = Fraction(max(peak - volumes.delta, 0), volume)
            report.max_transient_ratio = max(report.max_transient_ratio, transient)
        op_index += 1

    if allocator.pending:
        # 轨迹结束时 trace 策略的刷新仍在等检查点：补发检查点并执行排队操作
        meter.begin_op()
        volumes.begin_op()
        if oracle is not None:
            oracle.begin_op(op_index, 0)
        report.settle_checkpoints, report.settled_ops = allocator.settle()
        meter.end_op()
        volumes.end_op()
        if oracle is not None:
            oracle.end_op(allocator.state)
        if volumes.volume > 0:
            report.max_extent_ratio = max(report.max_extent_ratio, Fraction(allocator.extent, volumes.volume))

    report.ops = op_index
    report.delta = volumes.delta
    report.final_volume = volumes.volume
    report.final_extent = allocator.extent
    report.flushes = len(allocator.flush_history)
    report.checkpoints_total = allocator.checkpoints_total
    report.max_checkpoints_per_op = max(allocator.checkpoints_per_op.values(), default=0)
    report.max_checkpoints_per_flush = max((s.checkpoints for s in allocator.flush_history), default=0)
    report.max_moved_volume_per_op = volumes.max_moved
    report.total_moved_volume = volumes.total_moved
    report.event_digest = digest.hexdigest()
    report.models = [
        ModelSummary(
            label=ledger.model.label,
            allocation=ledger.allocation_cost_total,
            reallocation=ledger.reallocation_cost_total,
            b_ratio=ledger.b_ratio,
            max_op_cost=ledger.max_op_cost,
        )
        for ledger in meter.ledgers
    ]
    if oracle is not None:
        report.verdicts = list(oracle.verdicts)
    report.wall_time_s = time.perf_counter() - started
    logger.info(
        "重放结束: ops=%d flushes=%d verdicts=%d 耗时 %.3fs",
        report.ops,
        report.flushes,
        len(report.verdicts),
        report.wall_time_s,
    )
    return report


# ==================== 参数扫描 ====================


@dataclass(frozen=True, order=True)
class SweepCell:
    mode: str
    epsilon: Fraction
    kind: str
    delta: int
    seed: int
    n: int = 0

    @property
    def key(self) -> str:
        safe_mode = self.mode.replace(":", "-")
        eps = str(self.epsilon).replace("/", "_")
        return f"{safe_mode}__eps{eps}__{self.kind}__d{self.delta}__n{self.n}__s{self.seed}"


def sweep_cells(
    modes: Iterable[str],
    epsilons: Iterable[Fraction],
    kinds: Iterable[str],
    deltas: Iterable[int],
    seeds: Iterable[int],
    n: int = 0,
) -> List[SweepCell]:
    return [
        SweepCell(mode, Fraction(eps), kind, delta, seed, n)
        for mode, eps, kind, delta, seed in product(modes, epsilons, kinds, deltas, seeds)
    ]


def _run_cell(args: Tuple[SweepCell, Tuple[str, ...], int, bool]) -> Tuple[SweepCell, RunReport]:
    cell, cost_specs, divisor, validate = args
    params: Dict[str, int] = {"delta": cell.delta}
    if cell.n:
        params["n"] = cell.n
    trace = generate(cell.kind, params, seed=cell.seed)
    models = [parse_cost_spec(spec) for spec in cost_specs]
    return cell, run(trace, cell.mode, cell.epsilon, models, validate=validate, divisor=divisor)


def sweep(
    cells: Sequence[SweepCell],
    cost_specs: Sequence[str] = DEFAULT_MODELS,
    divisor: int = 8,
    validate: bool = False,
    workers: int = 1,
) -> List[Tuple[SweepCell, RunReport]]:
    """运行一组参数组合，结果按单元键排序

    workers > 1 时在进程池中并行；每个单元独立拥有自己的状态。
    """
    jobs = [(cell, tuple(cost_specs), divisor, validate) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    for cell, report in results:
        logger.info("扫描单元 %s: verdicts=%d", cell.key, len(report.verdicts))
    return sorted(results, key=lambda item: item[0].key)


def fit_trend(xs: Sequence[float], ys: Sequence[float]) -> float:
    """最小二乘直线斜率"""
    if len(xs) < 2 or len(set(xs)) < 2:
        return 0.0
    slope, _ = np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)
    return float(slope)


def summarize_sweep(results: Sequence[Tuple[SweepCell, RunReport]]) -> Dict[Tuple[str, str], float]:
    """按 (mode, 模型) 拟合 b-ratio 对 lg Δ 的斜率"""
    points: Dict[Tuple[str, str], List[Tuple[float, float]]] = {}
    for cell, report in results:
        for summary in report.models:
            points.setdefault((cell.mode, summary.label), []).append(
                (math.log2(cell.delta), float(summary.b_ratio))
            )
    return {
        key: fit_trend([x for x, _ in pts], [y for _, y in pts])
        for key, pts in points.items()
    }


def failed_cells(results: Iterable[Tuple[SweepCell, RunReport]]) -> List[Tuple[SweepCell, RunReport]]:
    """有违例的单元"""
    return [(cell, report) for cell, report in results if report.verdicts]


def models_from_specs(specs: Sequence[str], base_dir=None) -> List[CostModel]:
    return [parse_cost_spec(spec, base_dir) for spec in specs]

