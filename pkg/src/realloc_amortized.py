"""摊还重分配模块

按尺寸类别划分区域，插入/删除先进入缓冲段；缓冲段放不下时执行四步刷新：
暂存缓冲对象、负载左压、负载右展、暂存对象归位。
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from src.core import (
    FlushStats,
    LayoutState,
    MoveEvent,
    ObjectRecord,
    Region,
    ReleaseEvent,
    Residency,
    buffer_capacity,
    move_record,
    size_class,
)
from src.errors import InvalidArgumentError, ObjectNotFoundError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class FlushPlan:
    """一次刷新的目标布局

    staged 是刷新前位于被刷新缓冲段（及尾缓冲）中的存活对象，按类别、到达顺序排列；
    payload 是被刷新负载段中的存活对象，按地址排列。
    """

    boundary_class: int
    per_class_volume: Dict[int, int]
    start: int
    new_suffix_size: int
    regions: List[Region]
    payload: List[ObjectRecord]
    staged: List[ObjectRecord]
    pending: Optional[ObjectRecord]
    destinations: Dict[int, int]
    resolved: List[ObjectRecord]
    move_list: List[MoveEvent] = field(default_factory=list)

    @property
    def new_suffix_end(self) -> int:
        return self.start + self.new_suffix_size

    def destination_of(self, record: ObjectRecord) -> int:
        return self.destinations[id(record)]


# ==================== 共享的小操作 ====================


def admit_object(state: LayoutState, name: str, length: int) -> ObjectRecord:
    """登记新对象（尚未放置），更新体积账本与 Δ"""
    cls = size_class(length)
    if name in state.objects:
        raise InvalidArgumentError(f"对象名称已存在: {name}")
    record = ObjectRecord(name=name, length=length, size_class=cls)
    state.objects[name] = record
    state.volume_per_class[cls] = state.volume_per_class.get(cls, 0) + length
    state.delta = max(state.delta, length)
    return record


def retire_object(state: LayoutState, name: str) -> ObjectRecord:
    """执行客户端删除：对象变为待删除空洞，体积在覆盖它的刷新完成后才扣除"""
    record = state.objects.pop(name, None)
    if record is None:
        raise ObjectNotFoundError(f"对象不存在: {name}")
    state.emit(ReleaseEvent(record.name, record.length, record.interval))
    record.residency = Residency.DELETED_PENDING
    state.pending_deletes.append(record)
    return record


def make_dummy(record: ObjectRecord) -> ObjectRecord:
    return ObjectRecord(
        name=record.name,
        length=record.length,
        size_class=record.size_class,
        dummy=True,
    )


def opens_new_class(state: LayoutState, cls: int) -> bool:
    return not state.regions or cls > state.regions[-1].class_index


def append_region(state: LayoutState, record: ObjectRecord) -> MoveEvent:
    """为超出现有类别的对象新建区域，对象直接放入新负载段"""
    start = state.regions_end
    region = Region(
        class_index=record.size_class,
        start=start,
        payload_size=record.length,
        buffer_size=buffer_capacity(record.length, state.epsilon_prime),
    )
    region.payload_items.append(record)
    state.regions.append(region)
    logger.debug("新建区域: 类别 %d 起点 %d", record.size_class, start)
    return move_record(state, record, start, Residency.PAYLOAD)


def find_buffer(state: LayoutState, cls: int, length: int) -> Optional[Region]:
    """最早的、类别 >= cls 且放得下的缓冲段"""
    for region in state.regions:
        if region.class_index >= cls and region.fits(length):
            return region
    return None


def place_in_buffer(state: LayoutState, region: Region, record: ObjectRecord) -> Optional[MoveEvent]:
    """追加到缓冲段末尾；删除占位记录只占空间，不产生事件"""
    start = region.buffer_cursor
    region.buffer_items.append(record)
    region.buffer_fill += record.length
    if record.dummy:
        record.interval = (start, start + record.length)
        record.residency = Residency.BUFFER
        return None
    return move_record(state, record, start, Residency.BUFFER)


# ==================== 刷新 ====================


def find_boundary_class(state: LayoutState, pending_class: int) -> int:
    """从大到小扫描区域，求边界类别 b

    b 是满足“类别 >= b 的缓冲段中所有对象类别都 >= b”的最大值。
    尾缓冲总是参与刷新，其内容也会拉低 b。
    """
    b = pending_class
    if state.tail is not None:
        for item in state.tail.items:
            b = min(b, item.size_class)
    for region in reversed(state.regions):
        if region.class_index < b:
            break
        for item in region.buffer_items:
            b = min(b, item.size_class)
    return b


def plan_flush(state: LayoutState, b: int, pending: Optional[ObjectRecord] = None) -> FlushPlan:
    """计算刷新后的区域布局和每个存活对象的最终位置

    Args:
        state: 当前布局
        b: 边界类别
        pending: 尚未放置、刷新后追加到其负载段末尾的插入对象

    Returns:
        刷新计划
    """
    flushed = [r for r in state.regions if r.class_index >= b]
    start = flushed[0].start if flushed else state.regions_end

    payload: List[ObjectRecord] = []
    staged: List[ObjectRecord] = []
    for region in flushed:
        payload.extend(r for r in region.payload_items if r.residency is Residency.PAYLOAD)
    for region in flushed:
        staged.extend(r for r in region.buffer_items if not r.dummy and r.residency is Residency.BUFFER)
    if state.tail is not None:
        staged.extend(r for r in state.tail.items if not r.dummy and r.residency is Residency.BUFFER)

    survivors = payload + staged + ([pending] if pending is not None else [])
    volumes: Dict[int, int] = {}
    for record in survivors:
        volumes[record.size_class] = volumes.get(record.size_class, 0) + record.length

    regions: List[Region] = []
    cursor = start
    for cls in sorted(volumes):
        region = Region(
            class_index=cls,
            start=cursor,
            payload_size=volumes[cls],
            buffer_size=buffer_capacity(volumes[cls], state.epsilon_prime),
        )
        regions.append(region)
        cursor = region.end

    by_class = {region.class_index: region for region in regions}
    fill = {region.class_index: region.start for region in regions}
    destinations: Dict[int, int] = {}
    for record in sorted(survivors, key=lambda r: r.size_class):
        destinations[id(record)] = fill[record.size_class]
        fill[record.size_class] += record.length
        by_class[record.size_class].payload_items.append(record)

    resolved = [r for r in state.pending_deletes if r.size_class >= b]
    return FlushPlan(
        boundary_class=b,
        per_class_volume=volumes,
        start=start,
        new_suffix_size=cursor - start,
        regions=regions,
        payload=payload,
        staged=staged,
        pending=pending,
        destinations=destinations,
        resolved=resolved,
    )


def install_flush(state: LayoutState, plan: FlushPlan) -> None:
    """用计划中的区域替换被刷新的区域，结清被覆盖的待删除对象"""
    kept = [r for r in state.regions if r.class_index < plan.boundary_class]
    state.regions = kept + plan.regions
    if state.tail is not None:
        state.tail.items = []
        state.tail.fill = 0
    resolved_ids = {id(r) for r in plan.resolved}
    state.pending_deletes = [r for r in state.pending_deletes if id(r) not in resolved_ids]
    for record in plan.resolved:
        remaining = state.volume_per_class.get(record.size_class, 0) - record.length
        if remaining:
            state.volume_per_class[record.size_class] = remaining
        else:
            state.volume_per_class.pop(record.size_class, None)
    state.overflow = []


def collect_stats(plan: FlushPlan, events: List[MoveEvent], volume_at_start: int) -> FlushStats:
    sourced = [e for e in events if e.source is not None]
    per_object = Counter(e.name for e in sourced)
    return FlushStats(
        boundary_class=plan.boundary_class,
        flushed_classes=sorted(plan.per_class_volume),
        volume_at_start=volume_at_start,
        moved_volume=sum(e.length for e in sourced),
        moves=len(sourced),
        max_moves_per_object=max(per_object.values(), default=0),
        peak_extent=max((e.destination[1] for e in events), default=0),
    )


def flush(state: LayoutState, b: int, pending: Optional[ObjectRecord] = None) -> List[MoveEvent]:
    """执行四步缓冲刷新

    Args:
        state: 当前布局
        b: find_boundary_class 的结果
        pending: 触发刷新、尚未放置的插入对象

    Returns:
        刷新产生的移动事件
    """
    plan = plan_flush(state, b, pending)
    volume_at_start = state.volume
    state.flushing = True
    events = plan.move_list

    # 1. 缓冲对象暂存到溢出段，删除占位记录就地销毁
    cursor = max(plan.new_suffix_end, state.regions_end)
    for record in plan.staged:
        events.append(move_record(state, record, cursor, Residency.OVERFLOW))
        state.overflow.append(record)
        cursor += record.length
    state.working_end = max(state.working_end, cursor)

    # 2. 负载对象从小类别到大类别向左压紧
    cursor = plan.start
    for record in plan.payload:
        if record.start != cursor:
            events.append(move_record(state, record, cursor, Residency.PAYLOAD))
        cursor += record.length

    # 3. 从大到小展开到最终位置（最终位置不早于压紧位置）
    for record in reversed(plan.payload):
        destination = plan.destination_of(record)
        if record.start != destination:
            events.append(move_record(state, record, destination, Residency.PAYLOAD))

    # 4. 溢出对象与待插入对象追加到各自负载段末尾
    for record in plan.staged:
        events.append(move_record(state, record, plan.destination_of(record), Residency.PAYLOAD))
    if pending is not None:
        events.append(move_record(state, pending, plan.destination_of(pending), Residency.PAYLOAD))

    install_flush(state, plan)
    state.flushing = False
    state.working_end = 0

    stats = collect_stats(plan, events, volume_at_start)
    stats.peak_extent = max(stats.peak_extent, cursor)
    state.flush_history.append(stats)
    logger.debug(
        "刷新完成: b=%d 类别=%s 搬迁体积=%d", b, stats.flushed_classes, stats.moved_volume
    )
    return events


# ==================== 客户端操作 ====================


def new_state(epsilon_prime, base: int = 0) -> LayoutState:
    return LayoutState(epsilon_prime=epsilon_prime, base=base)


def insert(state: LayoutState, name: str, length: int) -> List[MoveEvent]:
    """插入对象，返回包括刷新在内的全部移动事件"""
    record = admit_object(state, name, length)
    if opens_new_class(state, record.size_class):
        return [append_region(state, record)]

    region = find_buffer(state, record.size_class, length)
    if region is not None:
        event = place_in_buffer(state, region, record)
        return [event] if event is not None else []

    b = find_boundary_class(state, record.size_class)
    return flush(state, b, pending=record)


def delete(state: LayoutState, name: str) -> List[MoveEvent]:
    """删除对象：留下空洞并在缓冲段放置同长度的占位记录"""
    record = retire_object(state, name)
    dummy = make_dummy(record)
    region = find_buffer(state, record.size_class, record.length)
    if region is not None:
        place_in_buffer(state, region, dummy)
        return []

    b = find_boundary_class(state, record.size_class)
    return flush(state, b)
