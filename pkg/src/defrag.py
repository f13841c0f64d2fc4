"""碎片整理模块

把一组已分配对象按任意比较键排序成从 0 开始的无空隙布局，峰值空间不超过 (1+ε)V + Δ。
做法：先压到右侧 V 空间，借左侧 floor(εV) 前缀运行摊还重分配器逐个接收对象，
再按逆序逐个取出放回后缀，最后整体左移到 0。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional

from src import realloc_amortized
from src.core import Event, Interval, LayoutState, MoveEvent
from src.errors import InternalInvariantError, InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_DIVISOR = 8


@dataclass(frozen=True)
class DefragObject:
    name: str
    length: int
    interval: Interval


@dataclass
class DefragInput:
    objects: List[DefragObject]
    epsilon: Fraction = Fraction(1, 4)
    key: Optional[Callable[[str], Any]] = None
    divisor: int = DEFAULT_DIVISOR


@dataclass
class DefragResult:
    events: List[MoveEvent]
    final_layout: Dict[str, Interval]
    order: List[str]
    peak_extent: int
    crunch_offset: int
    volume: int
    phase_boundaries: Dict[str, int] = field(default_factory=dict)

    @property
    def moves(self) -> int:
        return len(self.events)


def validate_input(data: DefragInput) -> int:
    """检查输入并返回总体积

    Raises:
        InvalidArgumentError: ε 越界、名称重复、长度与区间不符、区间重叠或初始 extent 过大
    """
    epsilon = Fraction(data.epsilon)
    if not (0 < epsilon <= Fraction(1, 2)):
        raise InvalidArgumentError(f"ε 必须位于 (0, 1/2]: {epsilon}")
    if data.divisor < 2:
        raise InvalidArgumentError(f"ε' 除数至少为 2: {data.divisor}")

    names = set()
    for obj in data.objects:
        if obj.name in names:
            raise InvalidArgumentError(f"对象名称重复: {obj.name}")
        names.add(obj.name)
        start, end = obj.interval
        if obj.length < 1 or end - start != obj.length or start < 0:
            raise InvalidArgumentError(f"对象 {obj.name} 的区间 {obj.interval} 与长度 {obj.length} 不符")

    ordered = sorted(data.objects, key=lambda o: o.interval)
    for left, right in zip(ordered, ordered[1:]):
        if right.interval[0] < left.interval[1]:
            raise InvalidArgumentError(f"初始区间重叠: {left.name} 与 {right.name}")

    volume = sum(o.length for o in data.objects)
    extent = max((o.interval[1] for o in data.objects), default=0)
    if extent > volume + math.floor(epsilon * volume):
        raise InvalidArgumentError(
            f"初始 extent {extent} 超过 (1+ε)V = {volume + math.floor(epsilon * volume)}"
        )
    return volume


class _Defragmenter:
    """一次整理过程的物理簿记"""

    def __init__(self, data: DefragInput, volume: int):
        self.epsilon = Fraction(data.epsilon)
        self.volume = volume
        self.offset = math.floor(self.epsilon * volume)
        self.staging_start = self.offset + volume
        self.positions: Dict[str, Interval] = {o.name: o.interval for o in data.objects}
        self.lengths: Dict[str, int] = {o.name: o.length for o in data.objects}
        self.events: List[MoveEvent] = []
        self.peak = max((o.interval[1] for o in data.objects), default=0)
        self.allocator: LayoutState = realloc_amortized.new_state(self.epsilon / data.divisor)
        self.allocator.subscribe(self._observe_allocator)
        self.staged_name: Optional[str] = None
        self.suffix_start = self.staging_start

    def move(self, name: str, start: int) -> None:
        length = self.lengths[name]
        destination = (start, start + length)
        source = self.positions[name]
        if source == destination:
            return
        self._record(MoveEvent(name, length, source, destination))

    def _record(self, event: MoveEvent) -> None:
        self.events.append(event)
        self.positions[event.name] = event.destination
        self.peak = max(self.peak, event.destination[1])

    def _observe_allocator(self, event: Event) -> None:
        if not isinstance(event, MoveEvent):
            return
        if event.source is None:
            # 重分配器的初次放置实际上是从暂存槽搬入
            event = replace(event, source=self.positions[event.name])
        if event.destination[1] > self.suffix_start:
            raise InternalInvariantError(
                f"前缀移动 {event.name}->{event.destination} 越过后缀起点 {self.suffix_start}"
            )
        self._record(event)

    def check_prefix(self) -> None:
        if self.allocator.extent > self.suffix_start:
            raise InternalInvariantError(
                f"重分配器 extent {self.allocator.extent} 越过后缀起点 {self.suffix_start}"
            )

    def crunch(self) -> None:
        """从右到左把对象压到 [P, P+V)"""
        cursor = self.offset + self.volume
        for name in sorted(self.positions, key=lambda n: self.positions[n], reverse=True):
            cursor -= self.lengths[name]
            self.move(name, cursor)
        self.suffix_start = self.offset

    def absorb(self) -> None:
        """从左到右把后缀对象经暂存槽插入重分配器"""
        for name in sorted(self.positions, key=lambda n: self.positions[n]):
            length = self.lengths[name]
            self.move(name, self.staging_start)
            self.suffix_start += length
            realloc_amortized.insert(self.allocator, name, length)
            self.check_prefix()

    def extract(self, order: List[str]) -> None:
        """按逆序取出对象，放到后缀中其后继之前"""
        suffix_left = self.staging_start
        for name in reversed(order):
            length = self.lengths[name]
            self.move(name, self.staging_start)
            realloc_amortized.delete(self.allocator, name)
            suffix_left -= length
            self.suffix_start = suffix_left
            self.check_prefix()
            self.move(name, suffix_left)

    def shift_to_origin(self, order: List[str]) -> None:
        for name in order:
            self.move(name, self.positions[name][0] - self.offset)


def defragment(data: DefragInput) -> DefragResult:
    """按比较键排序并整理布局

    Args:
        data: 对象、ε、比较键（默认按名称）

    Returns:
        移动事件、最终布局、峰值 extent 等
    """
    volume = validate_input(data)
    key = data.key or (lambda name: name)
    order = sorted((o.name for o in data.objects), key=key)
    worker = _Defragmenter(data, volume)
    boundaries: Dict[str, int] = {}

    boundaries["crunch"] = len(worker.events)
    worker.crunch()
    boundaries["absorb"] = len(worker.events)
    worker.absorb()
    boundaries["extract"] = len(worker.events)
    worker.extract(order)
    boundaries["shift"] = len(worker.events)
    worker.shift_to_origin(order)

    logger.info(
        "碎片整理完成: %d 个对象 V=%d 移动 %d 次 峰值 %d",
        len(order),
        volume,
        len(worker.events),
        worker.peak,
    )
    return DefragResult(
        events=worker.events,
        final_layout=dict(worker.positions),
        order=order,
        peak_extent=worker.peak,
        crunch_offset=worker.offset,
        volume=volume,
        phase_boundaries=boundaries,
    )
