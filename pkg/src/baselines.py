"""对照分配器模块

三种已知成本函数下的简单策略，用来和成本无关的重分配器对比：
- first-fit：最低地址首次适配，从不移动
- log-compact：从左到右追加，删除后 extent 达到 2V 时整体压紧
- gap-classes：按 2 的幂分类、类别之间留空隙，放不下时挤走更大的对象
"""

from __future__ import annotations

import logging
from bisect import insort
from typing import Dict, List, Optional, Tuple

from src.core import Event, Interval, MoveEvent, Observer, ReleaseEvent
from src.errors import InvalidArgumentError, ObjectNotFoundError

logger = logging.getLogger(__name__)


class BaselineAllocator:
    """对照分配器的公共部分：事件发布与活动对象簿记"""

    name = "baseline"

    def __init__(self) -> None:
        self.observers: List[Observer] = []
        self.positions: Dict[str, Interval] = {}
        self.delta = 0

    def subscribe(self, observer: Observer) -> None:
        self.observers.append(observer)

    def emit(self, event: Event) -> None:
        for observer in list(self.observers):
            observer(event)

    @property
    def volume(self) -> int:
        return sum(e - s for s, e in self.positions.values())

    @property
    def extent(self) -> int:
        return max((e for _, e in self.positions.values()), default=0)

    def _admit(self, name: str, length: int) -> None:
        if isinstance(length, bool) or not isinstance(length, int) or length < 1:
            raise InvalidArgumentError(f"对象长度必须为正整数: {length!r}")
        if name in self.positions:
            raise InvalidArgumentError(f"对象名称已存在: {name}")
        self.delta = max(self.delta, length)

    def _place(self, name: str, length: int, start: int) -> MoveEvent:
        source = self.positions.get(name)
        destination = (start, start + length)
        self.positions[name] = destination
        event = MoveEvent(name, length, source, destination)
        self.emit(event)
        return event

    def _release(self, name: str) -> Interval:
        interval = self.positions.pop(name, None)
        if interval is None:
            raise ObjectNotFoundError(f"对象不存在: {name}")
        self.emit(ReleaseEvent(name, interval[1] - interval[0], interval))
        return interval

    def insert(self, name: str, length: int) -> List[MoveEvent]:
        raise NotImplementedError

    def delete(self, name: str) -> List[MoveEvent]:
        raise NotImplementedError


class FirstFitAllocator(BaselineAllocator):
    name = "first-fit"

    def __init__(self) -> None:
        super().__init__()
        self._spans: List[Tuple[int, int, str]] = []

    def insert(self, name: str, length: int) -> List[MoveEvent]:
        self._admit(name, length)
        cursor = 0
        for start, end, _ in self._spans:
            if start - cursor >= length:
                break
            cursor = max(cursor, end)
        insort(self._spans, (cursor, cursor + length, name))
        return [self._place(name, length, cursor)]

    def delete(self, name: str) -> List[MoveEvent]:
        start, end = self._release(name)
        self._spans.remove((start, end, name))
        return []


class LogCompactAllocator(BaselineAllocator):
    """追加写日志；删除使 extent >= 2V 时按地址顺序压紧"""

    name = "log-compact"

    def __init__(self) -> None:
        super().__init__()
        self.cursor = 0
        self.compactions = 0

    def insert(self, name: str, length: int) -> List[MoveEvent]:
        self._admit(name, length)
        event = self._place(name, length, self.cursor)
        self.cursor += length
        return [event]

    def delete(self, name: str) -> List[MoveEvent]:
        self._release(name)
        volume = self.volume
        if self.cursor < 2 * volume or self.cursor == 0:
            return []
        events = []
        cursor = 0
        for obj, (start, end) in sorted(self.positions.items(), key=lambda kv: kv[1]):
            if start != cursor:
                events.append(self._place(obj, end - start, cursor))
            cursor += end - start
        self.cursor = cursor
        self.compactions += 1
        return events

    @property
    def extent(self) -> int:
        return self.cursor


def slot_class(length: int) -> int:
    """槽类别 k = ceil(lg w)，槽大小 2^k"""
    return (length - 1).bit_length()


class GapClassesAllocator(BaselineAllocator):
    """按槽类别分组，每个类别的对象之后跟着若干空闲槽

    插入时用本类别的空闲槽；没有空闲槽就从更高类别拿一个大槽二进制拆分，
    被占用的大槽里的对象递归重插。删除时用本类别最后一个对象填洞，
    空闲槽攒到 3 个时把其中两个合并上交给更高类别。
    """

    name = "gap-classes"
    MERGE_AT = 3

    def __init__(self) -> None:
        super().__init__()
        self.slots: List[List[str]] = []
        self.free: List[int] = []

    def _ensure(self, k: int) -> None:
        while len(self.slots) <= k:
            self.slots.append([])
            self.free.append(0)

    def _class_start(self, k: int) -> int:
        return sum((len(self.slots[i]) + self.free[i]) << i for i in range(k))

    def _slot_start(self, k: int, index: int) -> int:
        return self._class_start(k) + (index << k)

    @property
    def extent(self) -> int:
        return self._class_start(len(self.slots))

    def _put(self, name: str, length: int, k: int, events: List[MoveEvent]) -> None:
        """把对象放进类别 k：优先空闲槽，否则进位"""
        self._ensure(k)
        if self.free[k] > 0:
            self.free[k] -= 1
            self.slots[k].append(name)
            events.append(self._place(name, length, self._slot_start(k, len(self.slots[k]) - 1)))
            return

        donor = next(
            (i for i in range(k + 1, len(self.slots)) if self.slots[i] or self.free[i]),
            None,
        )
        if donor is None:
            # 更高类别都为空：直接追加在末尾
            self.slots[k].append(name)
            events.append(self._place(name, length, self._slot_start(k, len(self.slots[k]) - 1)))
            return

        displaced: Optional[str] = None
        if self.slots[donor]:
            displaced = self.slots[donor].pop(0)
        else:
            self.free[donor] -= 1
        # 大小 2^donor 的槽拆成新对象 + 类别 k..donor-1 各一个空闲槽
        for i in range(k, donor):
            self.free[i] += 1
        self.slots[k].append(name)
        start = self._slot_start(k, len(self.slots[k]) - 1)
        if displaced is not None:
            # 被挤走的对象先搬走，新对象才能写入它原来的槽
            s, e = self.positions[displaced]
            self._put(displaced, e - s, donor, events)
        events.append(self._place(name, length, start))

    def _merge_up(self, k: int, events: List[MoveEvent]) -> None:
        while k < len(self.slots) and self.free[k] >= self.MERGE_AT:
            self.free[k] -= 2
            upper = k + 1
            self._ensure(upper)
            if self.slots[upper]:
                # 上层最后一个对象轮换到最前面，空出的槽留在末尾
                last = self.slots[upper].pop()
                self.slots[upper].insert(0, last)
                start, end = self.positions[last]
                events.append(self._place(last, end - start, self._slot_start(upper, 0)))
            self.free[upper] += 1
            k = upper

    def _trim(self) -> None:
        while self.slots and not self.slots[-1]:
            self.slots.pop()
            self.free.pop()

    def insert(self, name: str, length: int) -> List[MoveEvent]:
        self._admit(name, length)
        events: List[MoveEvent] = []
        self._put(name, length, slot_class(length), events)
        return events

    def delete(self, name: str) -> List[MoveEvent]:
        start, end = self._release(name)
        k = slot_class(end - start)
        members = self.slots[k]
        index = members.index(name)
        last = members.pop()
        events: List[MoveEvent] = []
        if last != name:
            members[index] = last
            s, e = self.positions[last]
            events.append(self._place(last, e - s, self._slot_start(k, index)))
        self.free[k] += 1
        self._merge_up(k, events)
        self._trim()
        return events


BASELINES = {
    "first-fit": FirstFitAllocator,
    "log-compact": LogCompactAllocator,
    "gap-classes": GapClassesAllocator,
}


def make_baseline(name: str) -> BaselineAllocator:
    try:
        return BASELINES[name]()
    except KeyError:
        raise InvalidArgumentError(f"未知的对照策略: {name}") from None
