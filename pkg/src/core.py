"""核心数据模型模块

地址空间布局、尺寸类别运算、区域/段簿记，以及所有分配器共享的事件流。

地址和长度都以“单元”为单位，是无上界的非负整数。区间一律为半开区间
[start, end)。
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, Iterator, List, Optional, Tuple, Union

from src.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]


# ==================== 尺寸类别运算 ====================


def size_class(length: int) -> int:
    """计算对象的尺寸类别

    类别 i 满足 2^(i-1) <= length < 2^i。

    Args:
        length: 对象长度（单元数）

    Returns:
        尺寸类别编号（从 1 开始）

    Raises:
        InvalidArgumentError: 长度不是正整数
    """
    if isinstance(length, bool) or not isinstance(length, int) or length < 1:
        raise InvalidArgumentError(f"对象长度必须为正整数: {length!r}")
    return length.bit_length()


def buffer_capacity(class_volume: int, epsilon_prime: Fraction) -> int:
    """计算缓冲段容量 floor(ε'·V(i))

    Args:
        class_volume: 该类别的体积
        epsilon_prime: ε'

    Returns:
        缓冲段容量
    """
    if class_volume < 0:
        raise InvalidArgumentError(f"类别体积不能为负: {class_volume}")
    return math.floor(Fraction(epsilon_prime) * class_volume)


def overlaps(a: Optional[Interval], b: Optional[Interval]) -> bool:
    """两个半开区间是否相交（空区间从不相交）"""
    if a is None or b is None:
        return False
    return a[0] < b[1] and b[0] < a[1] and a[0] < a[1] and b[0] < b[1]


class IntervalSet:
    """有序、自动合并的区间集合

    检查点账本用它记录“自上次检查点以来释放的单元”。
    """

    def __init__(self) -> None:
        self._starts: List[int] = []
        self._ends: List[int] = []

    def add(self, interval: Interval) -> None:
        start, end = interval
        if start >= end:
            return
        # 与相交或相邻的区间合并
        i = bisect_left(self._ends, start)
        j = bisect_right(self._starts, end)
        if i < j:
            start = min(start, self._starts[i])
            end = max(end, self._ends[j - 1])
        self._starts[i:j] = [start]
        self._ends[i:j] = [end]

    def overlaps(self, interval: Interval) -> bool:
        start, end = interval
        if start >= end:
            return False
        i = bisect_right(self._ends, start)
        return i < len(self._starts) and self._starts[i] < end

    def clear(self) -> None:
        self._starts.clear()
        self._ends.clear()

    @property
    def total(self) -> int:
        return sum(e - s for s, e in zip(self._starts, self._ends))

    def __iter__(self) -> Iterator[Interval]:
        return iter(list(zip(self._starts, self._ends)))

    def __len__(self) -> int:
        return len(self._starts)

    def __bool__(self) -> bool:
        return bool(self._starts)


# ==================== 领域类型 ====================


class Residency(str, Enum):
    """对象当前所在的位置"""

    PAYLOAD = "payload"
    BUFFER = "buffer"
    OVERFLOW = "overflow"
    LOG = "log"
    DELETED_PENDING = "deleted-pending"


@dataclass(eq=False)
class ObjectRecord:
    """一个已分配对象（或缓冲段中的删除占位记录）"""

    name: str
    length: int
    size_class: int
    interval: Optional[Interval] = None
    residency: Residency = Residency.BUFFER
    dummy: bool = False

    @property
    def start(self) -> Optional[int]:
        return None if self.interval is None else self.interval[0]

    @property
    def end(self) -> Optional[int]:
        return None if self.interval is None else self.interval[1]


@dataclass(eq=False)
class Region:
    """第 i 个尺寸类别的区域：负载段后紧跟缓冲段"""

    class_index: int
    start: int
    payload_size: int
    buffer_size: int
    payload_items: List[ObjectRecord] = field(default_factory=list)
    buffer_items: List[ObjectRecord] = field(default_factory=list)
    buffer_fill: int = 0

    @property
    def payload(self) -> Interval:
        return (self.start, self.start + self.payload_size)

    @property
    def buffer(self) -> Interval:
        payload_end = self.start + self.payload_size
        return (payload_end, payload_end + self.buffer_size)

    @property
    def end(self) -> int:
        return self.start + self.payload_size + self.buffer_size

    @property
    def buffer_cursor(self) -> int:
        return self.start + self.payload_size + self.buffer_fill

    def fits(self, length: int) -> bool:
        return self.buffer_fill + length <= self.buffer_size


@dataclass(eq=False)
class TailBuffer:
    """去摊还变体的尾缓冲，位于所有区域之后

    首次刷新前 fixed_capacity 为 None，容量按当前体积惰性计算。
    """

    fixed_capacity: Optional[int] = None
    items: List[ObjectRecord] = field(default_factory=list)
    fill: int = 0


@dataclass(eq=False)
class LogEntry:
    kind: str  # "insert" | "delete"
    record: ObjectRecord

    @property
    def length(self) -> int:
        return self.record.length


@dataclass(eq=False)
class FlushLog:
    """刷新期间到达的更新，按到达顺序排空"""

    start: int
    cursor: int
    entries: List[LogEntry] = field(default_factory=list)
    drained: int = 0
    volume: int = 0
    abandoned: set = field(default_factory=set)

    @property
    def pending(self) -> int:
        return len(self.entries) - self.drained


@dataclass
class FlushStats:
    """一次缓冲刷新的统计"""

    boundary_class: int
    flushed_classes: List[int]
    volume_at_start: int = 0
    moved_volume: int = 0
    moves: int = 0
    max_moves_per_object: int = 0
    checkpoints: int = 0
    peak_extent: int = 0
    staging_offset: Optional[int] = None
    L: Optional[int] = None
    L_prime: Optional[int] = None
    B: Optional[int] = None
    delta: Optional[int] = None
    phase_volumes: List[int] = field(default_factory=list)
    phase_kinds: List[str] = field(default_factory=list)
    logged_volume: int = 0
    logged_volume_before_last: int = 0


# ==================== 事件流 ====================


@dataclass(frozen=True)
class MoveEvent:
    """一次物理搬迁或初次放置（source 为 None）"""

    name: str
    length: int
    source: Optional[Interval]
    destination: Interval
    phase_id: int = 0

    def describe(self) -> str:
        src = "-" if self.source is None else f"{self.source[0]}:{self.source[1]}"
        dst = f"{self.destination[0]}:{self.destination[1]}"
        return f"{self.name} {self.length} {src} {dst} {self.phase_id}"


@dataclass(frozen=True)
class ReleaseEvent:
    """分配器真正执行了客户端删除"""

    name: str
    length: int
    interval: Optional[Interval]


@dataclass(frozen=True)
class CheckpointEvent:
    phase_id: int


Event = Union[MoveEvent, ReleaseEvent, CheckpointEvent]
Observer = Callable[[Event], None]


# ==================== 布局状态 ====================


@dataclass(eq=False)
class LayoutState:
    """完整的地址空间配置"""

    epsilon_prime: Fraction
    base: int = 0
    regions: List[Region] = field(default_factory=list)
    objects: Dict[str, ObjectRecord] = field(default_factory=dict)
    pending_deletes: List[ObjectRecord] = field(default_factory=list)
    overflow: List[ObjectRecord] = field(default_factory=list)
    volume_per_class: Dict[int, int] = field(default_factory=dict)
    delta: int = 0
    phase_id: int = 0
    working_end: int = 0
    flushing: bool = False
    tail: Optional[TailBuffer] = None
    log: Optional[FlushLog] = None
    flush_history: List[FlushStats] = field(default_factory=list)
    observers: List[Observer] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.epsilon_prime = Fraction(self.epsilon_prime)
        if not (0 < self.epsilon_prime <= Fraction(1, 2)):
            raise InvalidArgumentError(f"ε' 必须位于 (0, 1/2]: {self.epsilon_prime}")

    @property
    def regions_end(self) -> int:
        return self.regions[-1].end if self.regions else self.base

    @property
    def tail_capacity(self) -> int:
        if self.tail is None:
            return 0
        if self.tail.fixed_capacity is None:
            return buffer_capacity(self.volume, self.epsilon_prime)
        return self.tail.fixed_capacity

    @property
    def volume(self) -> int:
        return sum(self.volume_per_class.values())

    @property
    def extent(self) -> int:
        """区域结构（含尾缓冲、溢出段、日志）的末端"""
        end = self.regions_end
        if self.tail is not None:
            end += max(self.tail_capacity, self.tail.fill)
        return max(end, self.working_end)

    @property
    def footprint(self) -> int:
        """最后一个活动对象单元的末端"""
        ends = [r.end for r in self.objects.values() if r.end is not None]
        return max(ends, default=self.base)

    def subscribe(self, observer: Observer) -> None:
        self.observers.append(observer)

    def unsubscribe(self, observer: Observer) -> None:
        if observer in self.observers:
            self.observers.remove(observer)

    def emit(self, event: Event) -> None:
        for observer in list(self.observers):
            observer(event)

    def region_for(self, class_index: int) -> Optional[Region]:
        for region in self.regions:
            if region.class_index == class_index:
                return region
        return None


def move_record(
    state: LayoutState,
    record: ObjectRecord,
    start: int,
    residency: Residency,
) -> MoveEvent:
    """把对象搬到 start 处并发布 MoveEvent

    记录原本没有区间时视为初次放置。
    """
    source = record.interval
    destination = (start, start + record.length)
    record.interval = destination
    record.residency = residency
    event = MoveEvent(record.name, record.length, source, destination, state.phase_id)
    state.emit(event)
    return event


def complete_checkpoint(state: LayoutState) -> CheckpointEvent:
    state.phase_id += 1
    event = CheckpointEvent(state.phase_id)
    state.emit(event)
    return event


# ==================== 布局校验 ====================


@dataclass(frozen=True)
class Violation:
    invariant: str
    detail: str
    subject: Optional[str] = None


def _contains(outer: Interval, inner: Optional[Interval]) -> bool:
    return inner is not None and outer[0] <= inner[0] and inner[1] <= outer[1]


def validate_layout(state: LayoutState) -> List[Violation]:
    """检查布局不变量，返回全部违例（空列表表示通过）

    刷新进行中时只检查与刷新无关的不变量。
    """
    violations: List[Violation] = []

    for name, record in state.objects.items():
        if record.interval is None:
            violations.append(Violation("placement", "活动对象没有区间", name))
            continue
        if record.interval[1] - record.interval[0] != record.length:
            violations.append(Violation("record-length", f"区间 {record.interval} 与长度 {record.length} 不符", name))
        if record.length < 1 or record.size_class != record.length.bit_length():
            violations.append(Violation("size-class", f"类别 {record.size_class} 与长度 {record.length} 不符", name))

    # 活动对象与删除占位记录两两不相交
    occupied: List[Tuple[int, int, str]] = [
        (r.interval[0], r.interval[1], r.name)
        for r in state.objects.values()
        if r.interval is not None
    ]
    for region in state.regions:
        occupied.extend(
            (item.interval[0], item.interval[1], f"~{item.name}")
            for item in region.buffer_items
            if item.dummy and item.interval is not None
        )
    if state.tail is not None:
        occupied.extend(
            (item.interval[0], item.interval[1], f"~{item.name}")
            for item in state.tail.items
            if item.dummy and item.interval is not None
        )
    occupied.sort()
    for (s1, e1, n1), (s2, e2, n2) in zip(occupied, occupied[1:]):
        if s2 < e1:
            violations.append(Violation("disjointness", f"{n1}[{s1},{e1}) 与 {n2}[{s2},{e2}) 重叠", n2))

    # 体积账本
    recomputed: Dict[int, int] = {}
    for record in list(state.objects.values()) + state.pending_deletes:
        recomputed[record.size_class] = recomputed.get(record.size_class, 0) + record.length
    ledger = {c: v for c, v in state.volume_per_class.items() if v}
    if recomputed != ledger:
        violations.append(Violation("volume-ledger", f"账本 {ledger} 与重算 {recomputed} 不符"))

    if state.footprint > state.extent:
        violations.append(Violation("footprint", f"footprint {state.footprint} 超过 extent {state.extent}"))

    if state.flushing:
        return violations

    if state.overflow:
        violations.append(Violation("overflow-empty", f"溢出段非空: {len(state.overflow)} 个对象"))

    expected_start = state.base
    previous_class = 0
    placed: Dict[int, Residency] = {}
    for region in state.regions:
        label = f"region {region.class_index}"
        if region.class_index <= previous_class:
            violations.append(Violation("region-order", "区域类别未严格递增", label))
        if region.start != expected_start:
            violations.append(Violation("region-order", f"区域起点 {region.start} != {expected_start}", label))
        previous_class = region.class_index
        expected_start = region.end

        for item in region.payload_items:
            if item.size_class != region.class_index:
                violations.append(Violation("payload-purity", f"类别 {item.size_class} 的对象在负载段 {region.class_index}", item.name))
            if item.residency is not Residency.DELETED_PENDING:
                placed[id(item)] = Residency.PAYLOAD
                if not _contains(region.payload, item.interval):
                    violations.append(Violation("payload-purity", f"{item.interval} 不在负载段 {region.payload}", item.name))
        for item in region.buffer_items:
            if item.size_class > region.class_index:
                violations.append(Violation("buffer-class-bound", f"类别 {item.size_class} 的对象在缓冲段 {region.class_index}", item.name))
            if item.residency is Residency.BUFFER:
                if not item.dummy:
                    placed[id(item)] = Residency.BUFFER
                if not _contains(region.buffer, item.interval):
                    violations.append(Violation("buffer-class-bound", f"{item.interval} 不在缓冲段 {region.buffer}", item.name))
        if region.buffer_fill > region.buffer_size:
            violations.append(Violation("buffer-capacity", f"占用 {region.buffer_fill} > 容量 {region.buffer_size}", label))

    if state.tail is not None:
        tail_span = (state.regions_end, state.regions_end + state.tail_capacity)
        for item in state.tail.items:
            if item.residency is Residency.BUFFER:
                if not item.dummy:
                    placed[id(item)] = Residency.BUFFER
                if not _contains(tail_span, item.interval):
                    violations.append(Violation("tail-bound", f"{item.interval} 不在尾缓冲 {tail_span}", item.name))
        if state.tail.fill > state.tail_capacity:
            violations.append(Violation("tail-bound", f"尾缓冲占用 {state.tail.fill} > 容量 {state.tail_capacity}"))

    for name, record in state.objects.items():
        if placed.get(id(record)) is not record.residency:
            violations.append(Violation("placement", f"对象驻留 {record.residency.value} 与所在段不符", name))

    return violations


def describe_layout(state: LayoutState) -> str:
    """生成布局的简要文本描述，便于调试"""
    lines = [f"extent={state.extent} volume={state.volume} ε'={state.epsilon_prime}"]
    for region in state.regions:
        live = sum(1 for item in region.payload_items if item.residency is Residency.PAYLOAD)
        lines.append(
            f"  class {region.class_index}: payload [{region.payload[0]},{region.payload[1]}) "
            f"{live} objs | buffer [{region.buffer[0]},{region.buffer[1]}) "
            f"fill {region.buffer_fill}/{region.buffer_size}"
        )
    if state.tail is not None:
        lines.append(f"  tail: start {state.regions_end} fill {state.tail.fill}/{state.tail_capacity}")
    if state.overflow:
        lines.append(f"  overflow: {len(state.overflow)} objs")
    if state.log is not None:
        lines.append(f"  log: [{state.log.start},{state.log.cursor}) pending {state.log.pending}")
    return "\n".join(lines)
