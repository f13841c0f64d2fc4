"""独立校验模块

从事件流维护一份影子布局，逐操作检查分配器的行为；另有边界类别的穷举求解、
下界轨迹构造和独立的体积账本。这里不复用分配器的任何内部逻辑：
尺寸类别、区间运算都自己实现。
"""

from __future__ import annotations

import logging
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

from src.core import CheckpointEvent, Event, MoveEvent, ReleaseEvent
from src.errors import InvalidArgumentError
from src.storage import Trace, TraceOp

if TYPE_CHECKING:
    from src.core import LayoutState

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


@dataclass(frozen=True)
class Verdict:
    op_index: int
    invariant: str
    detail: str

    def describe(self) -> str:
        return f"op {self.op_index}: [{self.invariant}] {self.detail}"


def _class_of(length: int) -> int:
    # 最小的 i 使 length < 2^i
    i = 0
    while (1 << i) <= length:
        i += 1
    return i


def _cross(a: Span, b: Span) -> bool:
    return max(a[0], b[0]) < min(a[1], b[1])


class ShadowLayout:
    """扁平的区间表：按起点排序的 (start, end, name)"""

    def __init__(self) -> None:
        self._spans: List[Tuple[int, int, str]] = []
        self.where: Dict[str, Span] = {}

    def place(self, name: str, span: Span) -> None:
        insort(self._spans, (span[0], span[1], name))
        self.where[name] = span

    def remove(self, name: str) -> Optional[Span]:
        span = self.where.pop(name, None)
        if span is not None:
            i = bisect_left(self._spans, (span[0], span[1], name))
            del self._spans[i]
        return span

    def conflicts(self, span: Span) -> List[str]:
        # 线性扫描：刻意不用分配器的数据结构
        return [name for s, e, name in self._spans if _cross((s, e), span)]

    @property
    def end(self) -> int:
        return max((e for _, e, _ in self._spans), default=0)

    def __contains__(self, name: str) -> bool:
        return name in self.where


class VolumeLedger:
    """只看事件流的体积账本：V、Δ、每操作的搬迁体积与峰值地址"""

    def __init__(self) -> None:
        self.volume = 0
        self.delta = 0
        self.live: Dict[str, int] = {}
        self.op_moved = 0
        self.op_peak = 0
        self.max_moved = 0
        self.total_moved = 0

    def __call__(self, event: Event) -> None:
        if isinstance(event, MoveEvent):
            if event.source is None and event.name not in self.live:
                self.live[event.name] = event.length
                self.volume += event.length
                self.delta = max(self.delta, event.length)
            elif event.source is not None:
                self.op_moved += event.length
                self.total_moved += event.length
            self.op_peak = max(self.op_peak, event.destination[1])
        elif isinstance(event, ReleaseEvent):
            length = self.live.pop(event.name, None)
            if length is not None:
                self.volume -= length

    def begin_op(self) -> None:
        self.op_moved = 0
        self.op_peak = 0

    def end_op(self) -> None:
        self.max_moved = max(self.max_moved, self.op_moved)


@dataclass
class Oracle:
    """挂到分配器事件流上的逐操作校验器

    Args:
        epsilon_prime: ε'，用于检查去摊还模式的每操作搬迁上限
        checkpointed: 是否检查释放单元纪律与阶段不相交
        deamortized: 是否检查每操作搬迁上限
        space_check: 无刷新的操作边界上检查 extent 上限；"regions" 只有区域，"tail" 另有尾缓冲
    """

    epsilon_prime: Fraction
    checkpointed: bool = False
    deamortized: bool = False
    space_check: Optional[str] = None
    shadow: ShadowLayout = field(default_factory=ShadowLayout)
    ledger: VolumeLedger = field(default_factory=VolumeLedger)
    verdicts: List[Verdict] = field(default_factory=list)
    op_index: int = -1
    op_length: int = 0
    _freed: List[Span] = field(default_factory=list)
    _written: List[Span] = field(default_factory=list)
    _checked_flushes: int = 0

    def flag(self, invariant: str, detail: str) -> None:
        self.verdicts.append(Verdict(self.op_index, invariant, detail))

    def last_freed(self) -> Optional[Span]:
        """上次检查点之后最近释放的区间"""
        return self._freed[-1] if self._freed else None

    def space_limit(self, volume: int) -> Fraction:
        """无刷新边界上的 extent 上限 (1+a)/(1-a)·V

        缓冲段容量合计不超过 ε' 倍负载，删除占位记录不超过缓冲容量，
        所以 extent <= (1+a)·P 且 V >= (1-a)·P。只有区域时 a = ε'；
        尾缓冲容量按上次刷新的体积计，a = 2ε' + ε'^2。
        写成 1 + c·ε' 时，ε' <= 1/16 下 regions 的 c <= 2.2，tail 的 c <= 4.8；
        ε' = 1/4 时分别为 2.7 和 10.3。
        """
        e = self.epsilon_prime
        a = e if self.space_check == "regions" else 2 * e + e * e
        return (1 + a) / (1 - a) * volume

    def __call__(self, event: Event) -> None:
        self.ledger(event)
        if isinstance(event, MoveEvent):
            self._on_move(event)
        elif isinstance(event, ReleaseEvent):
            span = self.shadow.remove(event.name)
            if span is None:
                self.flag("release", f"释放了不存在的对象 {event.name}")
            elif event.interval is not None and tuple(event.interval) != span:
                self.flag("divergence", f"{event.name} 释放区间 {event.interval} != 影子 {span}")
            if self.checkpointed and span is not None:
                self._freed.append(span)
        elif isinstance(event, CheckpointEvent):
            self._freed.clear()
            self._written.clear()

    def _on_move(self, event: MoveEvent) -> None:
        destination = tuple(event.destination)
        if destination[1] - destination[0] != event.length:
            self.flag("record-length", f"{event.name} 目标 {destination} 与长度 {event.length} 不符")
        if event.source is None:
            if event.name in self.shadow:
                self.flag("placement", f"{event.name} 重复初次放置")
                self.shadow.remove(event.name)
        else:
            current = self.shadow.remove(event.name)
            if current != tuple(event.source):
                self.flag("source-mismatch", f"{event.name} 源 {event.source} != 影子 {current}")
            if self.checkpointed:
                if any(_cross(span, current or event.source) for span in self._written):
                    self.flag("phase-disjointness", f"{event.name} 的源已在本阶段被覆盖")
                self._freed.append(tuple(event.source))

        others = self.shadow.conflicts(destination)
        if others:
            self.flag("disjointness", f"{event.name}->{destination} 覆盖了 {', '.join(others)}")
        if self.checkpointed:
            if any(_cross(span, destination) for span in self._freed):
                self.flag("freed-cell-discipline", f"{event.name}->{destination} 写入了检查点前释放的单元")
            if event.source is not None:
                self._written.append(destination)
        self.shadow.place(event.name, destination)

    def begin_op(self, op_index: int, length: int = 0) -> None:
        self.op_index = op_index
        self.op_length = length
        self.ledger.begin_op()

    def end_op(self, state: Optional["LayoutState"] = None) -> None:
        self.ledger.end_op()
        if self.deamortized and self.op_length:
            cap = Fraction(4) / self.epsilon_prime * self.op_length + self.ledger.delta
            if self.ledger.op_moved > cap:
                self.flag("per-op-cap", f"搬迁体积 {self.ledger.op_moved} > 上限 {cap}")
        if state is not None:
            self.check_state(state)

    def check_state(self, state: "LayoutState") -> None:
        """对照分配器报告的布局检查结构不变量"""
        for name, span in self.shadow.where.items():
            record = state.objects.get(name)
            if record is None:
                self.flag("divergence", f"影子中的 {name} 在分配器中不存在")
            elif record.interval is None or tuple(record.interval) != span:
                self.flag("divergence", f"{name} 分配器区间 {record.interval} != 影子 {span}")
        for name in state.objects:
            if name not in self.shadow:
                self.flag("divergence", f"分配器中的 {name} 没有出现在事件流里")

        extent = state.extent
        if self.shadow.end > extent:
            self.flag("footprint", f"footprint {self.shadow.end} > extent {extent}")
        if self.space_check is not None and not state.flushing and state.log is None:
            limit = self.space_limit(self.ledger.volume)
            if extent > limit:
                self.flag("space", f"extent {extent} > {float(limit):.3f}（V = {self.ledger.volume}）")

        if not state.flushing:
            self._check_structure(state)
        self._check_flush_logs(state)

    def _check_structure(self, state: "LayoutState") -> None:
        if state.overflow:
            self.flag("overflow-empty", f"操作边界处溢出段非空（{len(state.overflow)} 个对象）")
        for region in state.regions:
            lo, hi = region.start, region.start + region.payload_size
            for item in region.payload_items:
                if item.name not in self.shadow or state.objects.get(item.name) is not item:
                    continue
                if _class_of(item.length) != region.class_index:
                    self.flag("payload-purity", f"{item.name} 不属于负载段 {region.class_index}")
                span = self.shadow.where[item.name]
                if not (lo <= span[0] and span[1] <= hi):
                    self.flag("payload-purity", f"{item.name} {span} 不在负载段 [{lo},{hi})")
            buffer_lo, buffer_hi = hi, hi + region.buffer_size
            for item in region.buffer_items:
                if _class_of(item.length) > region.class_index:
                    self.flag("buffer-class-bound", f"{item.name} 的类别超过缓冲段 {region.class_index}")
                if item.name in self.shadow and state.objects.get(item.name) is item:
                    span = self.shadow.where[item.name]
                    if not (buffer_lo <= span[0] and span[1] <= buffer_hi):
                        self.flag("buffer-class-bound", f"{item.name} {span} 不在缓冲段 [{buffer_lo},{buffer_hi})")
            if region.buffer_fill > region.buffer_size:
                self.flag("buffer-capacity", f"缓冲段 {region.class_index} 占用 {region.buffer_fill} > {region.buffer_size}")
        if state.tail is not None and state.tail.fill > state.tail_capacity:
            self.flag("tail-bound", f"尾缓冲占用 {state.tail.fill} > 容量 {state.tail_capacity}")

    def _check_flush_logs(self, state: "LayoutState") -> None:
        history = state.flush_history
        for stats in history[self._checked_flushes:]:
            if state.tail is None:
                continue
            bound = state.epsilon_prime * stats.volume_at_start
            if stats.logged_volume_before_last > bound:
                self.flag(
                    "log-bound",
                    f"刷新完成前日志体积 {stats.logged_volume_before_last} > ε'V_f = {bound}",
                )
        self._checked_flushes = len(history)


# ==================== 参考求解 ====================


def brute_force_boundary(state: "LayoutState", pending_class: int) -> int:
    """逐个尝试候选 b，直接按定义判断

    b 合法当且仅当 b <= pending_class，且类别 >= b 的缓冲段与尾缓冲中的对象类别都 >= b。
    """
    classes = [region.class_index for region in state.regions]
    top = max(classes + [pending_class])
    tail_items = state.tail.items if state.tail is not None else []
    for b in range(top, 0, -1):
        if b > pending_class:
            continue
        buffered = [
            item
            for region in state.regions
            if region.class_index >= b
            for item in region.buffer_items
        ] + list(tail_items)
        if all(_class_of(item.length) >= b for item in buffered):
            return b
    return 1


def lower_bound_trace(delta: int) -> Trace:
    """构造下界序列：插入长度 Δ 的 X，再插入 Δ 个单位对象，最后删除 X"""
    if delta < 2:
        raise InvalidArgumentError(f"Δ 至少为 2: {delta}")
    ops = [TraceOp("I", "X", delta)]
    ops.extend(TraceOp("I", f"u{i}", 1) for i in range(1, delta + 1))
    ops.append(TraceOp("D", "X"))
    return Trace(ops=ops, header={"kind": "lb-delta", "delta": str(delta)})


def replay_check(
    trace: Trace,
    mode: str = "amortized",
    epsilon: Fraction = Fraction(1, 4),
    divisor: int = 8,
    checkpoint_policy: str = "auto",
    inject_fault_at: Optional[int] = None,
) -> List[Verdict]:
    """用校验器重放轨迹，返回全部违例（空列表表示全部通过）

    inject_fault_at 指定操作序号时，会在该操作结束后伪造一次写入检查点前释放单元的移动，
    用来确认校验器能在该操作上报出问题。
    """
    from src.harness import run

    report = run(
        trace,
        mode=mode,
        epsilon=epsilon,
        divisor=divisor,
        validate=True,
        checkpoint_policy=checkpoint_policy,
        inject_fault_at=inject_fault_at,
    )
    return list(report.verdicts)
