"""检查点重分配模块

刷新被拆成若干阶段，阶段之间以检查点分隔：
同一阶段内源区间与目标区间互不相交，且目标不得落在上次检查点之后释放的单元上。
空间上只比摊还版本多 Δ 的工作区。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from src.core import (
    CheckpointEvent,
    Event,
    FlushStats,
    Interval,
    IntervalSet,
    LayoutState,
    MoveEvent,
    ObjectRecord,
    ReleaseEvent,
    Residency,
    complete_checkpoint,
    move_record,
    overlaps,
    size_class,
)
from src.errors import InternalInvariantError, InvalidArgumentError, ObjectNotFoundError
from src.realloc_amortized import (
    FlushPlan,
    admit_object,
    append_region,
    collect_stats,
    find_boundary_class,
    find_buffer,
    install_flush,
    make_dummy,
    opens_new_class,
    place_in_buffer,
    plan_flush,
    retire_object,
)

logger = logging.getLogger(__name__)

CHECKPOINT_POLICIES = ("auto", "trace")


# ==================== 计划 ====================


@dataclass(eq=False)
class PlannedMove:
    record: ObjectRecord
    source: Interval
    destination: Interval
    residency: Residency

    @property
    def length(self) -> int:
        return self.record.length


@dataclass(eq=False)
class Phase:
    kind: str  # "stage" | "pack" | "unpack" | "place"
    moves: List[PlannedMove] = field(default_factory=list)

    @property
    def volume(self) -> int:
        return sum(m.length for m in self.moves)


@dataclass(eq=False)
class PhasedFlushPlan:
    base: FlushPlan
    L: int
    L_prime: int
    B: int
    delta: int
    staging_offset: int
    phases: List[Phase]
    trigger: Optional[ObjectRecord] = None
    events: List[MoveEvent] = field(default_factory=list)

    @property
    def staging_end(self) -> int:
        return self.staging_offset + sum(r.length for r in self.base.staged)


def _group_phases(kind: str, moves: List[PlannedMove], B: int) -> List[Phase]:
    """贪心分组：体积超过 B 即收尾，非末阶段体积落在 [B+1, B+Δ]

    暂存偏移足够靠后时阶段内天然不相交；万一下一步会破坏不相交就提前收尾并告警。
    """
    phases: List[Phase] = []
    current = Phase(kind)
    sources = IntervalSet()
    destinations = IntervalSet()
    for move in moves:
        if current.moves and (
            sources.overlaps(move.destination) or destinations.overlaps(move.source)
        ):
            logger.warning(
                "%s 阶段提前收尾: 体积 %d <= B=%d，%s 与本阶段冲突",
                kind,
                current.volume,
                B,
                move.record.name,
            )
            phases.append(current)
            current = Phase(kind)
            sources = IntervalSet()
            destinations = IntervalSet()
        current.moves.append(move)
        sources.add(move.source)
        destinations.add(move.destination)
        if current.volume > B:
            phases.append(current)
            current = Phase(kind)
            sources = IntervalSet()
            destinations = IntervalSet()
    if current.moves:
        phases.append(current)
    return phases


def plan_phased_flush(
    state: LayoutState,
    b: int,
    trigger: Optional[ObjectRecord],
    extent_before: int,
    extra_suffix: int = 0,
) -> PhasedFlushPlan:
    """计算暂存偏移和各阶段的移动

    Args:
        state: 当前布局（触发插入已放入缓冲段）
        b: 边界类别
        trigger: 触发刷新的插入对象，删除触发时为 None
        extent_before: 触发操作之前的 extent，即 L
        extra_suffix: 刷新后结构末尾额外占用的空间（尾缓冲）

    Returns:
        分阶段刷新计划
    """
    base = plan_flush(state, b)
    flushed = [r for r in state.regions if r.class_index >= b]
    B = sum(r.buffer_size for r in flushed)
    if state.tail is not None:
        B += state.tail_capacity

    w = trigger.length if trigger is not None else 0
    L = extent_before
    L_prime = base.new_suffix_end + extra_suffix - w
    delta = state.delta
    # 触发对象之后的负载段可能越过 L'，按负载对象的实际源末端和目标末端取上界，
    # 这样每阶段不超过 B+Δ 的体积时阶段内不会相交
    reach = max(
        [L, L_prime]
        + [r.end for r in base.payload if r.end is not None]
        + [base.destination_of(r) + r.length for r in base.payload]
    )
    T = reach + B + delta

    # 不低于任何已占用单元的末端
    occupied = [r.end for r in base.payload + base.staged if r.end is not None]
    T = max([T] + occupied)

    # 单个压紧/展开移动不得与自身源区间重叠
    after = 0
    for record in reversed(base.payload):
        final_end = base.destination_of(record) + record.length
        T = max(T, final_end + after + record.length, record.end + after)
        after += record.length

    staging: Dict[int, int] = {}
    cursor = T
    stage = Phase("stage")
    for record in base.staged:
        staging[id(record)] = cursor
        stage.moves.append(
            PlannedMove(record, record.interval, (cursor, cursor + record.length), Residency.OVERFLOW)
        )
        cursor += record.length

    packed: Dict[int, int] = {}
    cursor = T
    pack_moves: List[PlannedMove] = []
    for record in reversed(base.payload):
        cursor -= record.length
        packed[id(record)] = cursor
        if record.start != cursor:
            pack_moves.append(
                PlannedMove(record, record.interval, (cursor, cursor + record.length), Residency.PAYLOAD)
            )

    unpack_moves: List[PlannedMove] = []
    for record in base.payload:
        source = packed[id(record)]
        destination = base.destination_of(record)
        if source != destination:
            unpack_moves.append(
                PlannedMove(
                    record,
                    (source, source + record.length),
                    (destination, destination + record.length),
                    Residency.PAYLOAD,
                )
            )

    place = Phase("place")
    for record in base.staged:
        source = staging[id(record)]
        destination = base.destination_of(record)
        place.moves.append(
            PlannedMove(
                record,
                (source, source + record.length),
                (destination, destination + record.length),
                Residency.PAYLOAD,
            )
        )

    phases = [stage]
    phases += _group_phases("pack", pack_moves, B)
    phases += _group_phases("unpack", unpack_moves, B)
    if place.moves:
        phases.append(place)

    return PhasedFlushPlan(
        base=base,
        L=L,
        L_prime=L_prime,
        B=B,
        delta=delta,
        staging_offset=T,
        phases=phases,
        trigger=trigger,
    )


# ==================== 检查点账本 ====================


@dataclass(eq=False)
class FlushJob:
    plan: PhasedFlushPlan
    stats: FlushStats
    next_phase: int = 0
    awaiting_checkpoint: bool = False

    @property
    def done(self) -> bool:
        return self.next_phase >= len(self.plan.phases)


@dataclass(eq=False)
class CheckpointLedger:
    """检查点纪律的簿记，同时作为布局事件的观察者"""

    policy: str = "auto"
    current_phase: int = 0
    freed_since_checkpoint: IntervalSet = field(default_factory=IntervalSet)
    written_this_phase: IntervalSet = field(default_factory=IntervalSet)
    checkpoints_this_flush: int = 0
    checkpoints_total: int = 0
    checkpoints_per_op: Dict[int, int] = field(default_factory=dict)
    op_index: int = -1
    job: Optional[FlushJob] = None
    queued: List[Tuple[str, str, Optional[int]]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.policy not in CHECKPOINT_POLICIES:
            raise InvalidArgumentError(f"未知的检查点策略: {self.policy}")

    @property
    def blocked(self) -> bool:
        return self.job is not None and self.job.awaiting_checkpoint

    def begin_op(self) -> None:
        self.op_index += 1
        self.checkpoints_per_op[self.op_index] = 0

    def checkpoints_in_op(self) -> int:
        return self.checkpoints_per_op.get(self.op_index, 0)

    def observe(self, event: Event) -> None:
        if isinstance(event, MoveEvent):
            self._record_move(event)
        elif isinstance(event, ReleaseEvent) and event.interval is not None:
            self.freed_since_checkpoint.add(event.interval)
        elif isinstance(event, CheckpointEvent):
            self.current_phase = event.phase_id

    def _record_move(self, event: MoveEvent) -> None:
        if event.source is not None:
            if self.written_this_phase.overlaps(event.source):
                raise InternalInvariantError(
                    f"{event.name} 的源 {event.source} 已在本阶段被写入"
                )
            self.freed_since_checkpoint.add(event.source)
        if self.freed_since_checkpoint.overlaps(event.destination):
            raise InternalInvariantError(
                f"{event.name} 的目标 {event.destination} 与检查点前释放的单元重叠"
            )
        # 初次放置只可能被同一对象再次搬走，不计入阶段写集合
        if event.source is not None:
            self.written_this_phase.add(event.destination)

    def grant(self, state: LayoutState) -> None:
        """完成一次检查点"""
        self.freed_since_checkpoint.clear()
        self.written_this_phase.clear()
        self.checkpoints_total += 1
        self.checkpoints_this_flush += 1
        self.checkpoints_per_op[self.op_index] = self.checkpoints_per_op.get(self.op_index, 0) + 1
        complete_checkpoint(state)


def new_state(epsilon_prime, policy: str = "auto", base: int = 0) -> Tuple[LayoutState, CheckpointLedger]:
    """创建布局与检查点账本，账本订阅布局事件"""
    state = LayoutState(epsilon_prime=epsilon_prime, base=base)
    ledger = CheckpointLedger(policy=policy)
    state.subscribe(ledger.observe)
    return state, ledger


# ==================== 刷新执行 ====================


def run_phase(state: LayoutState, ledger: CheckpointLedger) -> List[MoveEvent]:
    """执行下一阶段的全部移动（跳过刷新期间已删除的对象）"""
    job = ledger.job
    if job is None or job.awaiting_checkpoint or job.done:
        raise InternalInvariantError("没有可执行的刷新阶段")
    phase = job.plan.phases[job.next_phase]
    events: List[MoveEvent] = []
    for move in phase.moves:
        if move.record.residency is Residency.DELETED_PENDING:
            continue
        if move.record.interval != move.source:
            raise InternalInvariantError(
                f"{move.record.name} 位于 {move.record.interval}，计划源为 {move.source}"
            )
        if overlaps(move.source, move.destination):
            raise InternalInvariantError(f"{move.record.name} 的移动与自身源区间重叠")
        events.append(move_record(state, move.record, move.destination[0], move.residency))
    if phase.kind == "stage":
        state.overflow = [m.record for m in phase.moves]
    job.plan.events.extend(events)
    job.stats.phase_kinds.append(phase.kind)
    job.stats.phase_volumes.append(sum(e.length for e in events))
    job.next_phase += 1
    job.awaiting_checkpoint = True
    return events


def finish_flush(state: LayoutState, ledger: CheckpointLedger) -> None:
    job = ledger.job
    install_flush(state, job.plan.base)
    state.flushing = False
    state.working_end = 0
    stats = job.stats
    merged = collect_stats(job.plan.base, job.plan.events, stats.volume_at_start)
    stats.moved_volume = merged.moved_volume
    stats.moves = merged.moves
    stats.max_moves_per_object = merged.max_moves_per_object
    stats.peak_extent = max(merged.peak_extent, job.plan.staging_end)
    stats.checkpoints = ledger.checkpoints_this_flush
    state.flush_history.append(stats)
    ledger.job = None
    logger.debug(
        "分阶段刷新完成: b=%d 搬迁体积=%d 检查点=%d",
        stats.boundary_class,
        stats.moved_volume,
        stats.checkpoints,
    )


def _drive(state: LayoutState, ledger: CheckpointLedger) -> List[MoveEvent]:
    events: List[MoveEvent] = []
    while ledger.job is not None and not ledger.job.awaiting_checkpoint:
        events.extend(run_phase(state, ledger))
        if ledger.policy != "auto":
            break
        ledger.grant(state)
        ledger.job.awaiting_checkpoint = False
        if ledger.job.done:
            finish_flush(state, ledger)
    return events


def phased_flush(
    state: LayoutState,
    ledger: CheckpointLedger,
    b: int,
    trigger: Optional[ObjectRecord] = None,
    extent_before: Optional[int] = None,
) -> PhasedFlushPlan:
    """开始一次分阶段刷新；auto 策略下一次跑完

    Returns:
        刷新计划，已执行的移动记录在 plan.events
    """
    if ledger.job is not None:
        raise InternalInvariantError("上一次刷新尚未完成")
    L = state.extent if extent_before is None else extent_before
    plan = plan_phased_flush(state, b, trigger, L)
    stats = FlushStats(
        boundary_class=b,
        flushed_classes=sorted(plan.base.per_class_volume),
        volume_at_start=state.volume,
        staging_offset=plan.staging_offset,
        L=plan.L,
        L_prime=plan.L_prime,
        B=plan.B,
        delta=plan.delta,
    )
    ledger.job = FlushJob(plan=plan, stats=stats)
    ledger.checkpoints_this_flush = 0
    state.flushing = True
    state.working_end = max(state.working_end, plan.staging_end, plan.staging_offset)
    logger.debug(
        "分阶段刷新开始: b=%d 暂存偏移=%d L=%d L'=%d B=%d Δ=%d 阶段数=%d",
        b,
        plan.staging_offset,
        plan.L,
        plan.L_prime,
        plan.B,
        plan.delta,
        len(plan.phases),
    )
    _drive(state, ledger)
    return plan


# ==================== 客户端操作 ====================


def _virtual_names(state: LayoutState, ledger: CheckpointLedger) -> set:
    names = set(state.objects)
    for kind, name, _ in ledger.queued:
        if kind == "insert":
            names.add(name)
        else:
            names.discard(name)
    return names


def _apply_insert(state: LayoutState, ledger: CheckpointLedger, name: str, length: int) -> List[MoveEvent]:
    extent_before = state.extent
    record = admit_object(state, name, length)
    if opens_new_class(state, record.size_class):
        return [append_region(state, record)]

    region = find_buffer(state, record.size_class, length)
    if region is not None:
        return [place_in_buffer(state, region, record)]

    # 先放入最后一个缓冲段（超出容量），再触发刷新
    event = place_in_buffer(state, state.regions[-1], record)
    b = find_boundary_class(state, record.size_class)
    plan = phased_flush(state, ledger, b, trigger=record, extent_before=extent_before)
    return [event] + plan.events


def _apply_delete(state: LayoutState, ledger: CheckpointLedger, name: str) -> List[MoveEvent]:
    extent_before = state.extent
    record = retire_object(state, name)
    region = find_buffer(state, record.size_class, record.length)
    if region is not None:
        place_in_buffer(state, region, make_dummy(record))
        return []

    # 触发刷新的删除不占用缓冲空间
    b = find_boundary_class(state, record.size_class)
    plan = phased_flush(state, ledger, b, extent_before=extent_before)
    return list(plan.events)


def _apply_queued(state: LayoutState, ledger: CheckpointLedger) -> List[MoveEvent]:
    events: List[MoveEvent] = []
    while ledger.queued and ledger.job is None:
        kind, name, length = ledger.queued.pop(0)
        if kind == "insert":
            events.extend(_apply_insert(state, ledger, name, length))
        else:
            events.extend(_apply_delete(state, ledger, name))
    return events


def insert_ckpt(
    state: LayoutState, ledger: CheckpointLedger, name: str, length: int
) -> Tuple[List[MoveEvent], int]:
    """插入对象；阻塞期间（trace 策略等待检查点）入队

    Returns:
        (移动事件, 本操作消耗的检查点数)
    """
    ledger.begin_op()
    if ledger.job is not None:
        if name in _virtual_names(state, ledger):
            raise InvalidArgumentError(f"对象名称已存在: {name}")
        size_class(length)
        ledger.queued.append(("insert", name, length))
        return [], 0
    events = _apply_insert(state, ledger, name, length)
    return events, ledger.checkpoints_in_op()


def delete_ckpt(state: LayoutState, ledger: CheckpointLedger, name: str) -> Tuple[List[MoveEvent], int]:
    """删除对象；阻塞期间入队

    Returns:
        (移动事件, 本操作消耗的检查点数)
    """
    ledger.begin_op()
    if ledger.job is not None:
        if name not in _virtual_names(state, ledger):
            raise ObjectNotFoundError(f"对象不存在: {name}")
        ledger.queued.append(("delete", name, None))
        return [], 0
    events = _apply_delete(state, ledger, name)
    return events, ledger.checkpoints_in_op()


def checkpoint(state: LayoutState, ledger: CheckpointLedger) -> Tuple[List[MoveEvent], int]:
    """系统发起的检查点（trace 策略的 C 事件）

    推进被阻塞的刷新；刷新结束后依次执行排队的操作。
    """
    ledger.begin_op()
    ledger.grant(state)
    events: List[MoveEvent] = []
    job = ledger.job
    if job is None:
        return events, ledger.checkpoints_in_op()

    job.awaiting_checkpoint = False
    if job.done:
        finish_flush(state, ledger)
        events.extend(_apply_queued(state, ledger))
    else:
        events.extend(_drive(state, ledger))
    return events, ledger.checkpoints_in_op()


def settle(state: LayoutState, ledger: CheckpointLedger) -> Tuple[List[MoveEvent], int, int]:
    """轨迹结束时补发检查点，直到挂起的刷新完成、排队操作全部执行

    Returns:
        (移动事件, 补发的检查点数, 开始时排队的操作数)
    """
    queued = len(ledger.queued)
    events: List[MoveEvent] = []
    granted = 0
    while ledger.job is not None:
        more, used = checkpoint(state, ledger)
        events.extend(more)
        granted += used
    if ledger.queued:
        raise InternalInvariantError(f"没有挂起的刷新，仍有 {len(ledger.queued)} 个排队操作")
    if granted:
        logger.info("补发 %d 个检查点，执行了 %d 个排队操作", granted, queued)
    return events, granted, queued
