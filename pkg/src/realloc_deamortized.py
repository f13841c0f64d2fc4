"""去摊还重分配模块

在区域之后增加尾缓冲；刷新不再一次做完，而是拆成后续每次更新承担的一份工作：
长度为 w 的更新推进 (4/ε')·w 体积的移动。刷新期间到达的更新写入日志，
在最后阶段按到达顺序排空到新结构中。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple, Union

from src.core import (
    FlushLog,
    FlushStats,
    LayoutState,
    LogEntry,
    MoveEvent,
    ObjectRecord,
    Residency,
    TailBuffer,
    buffer_capacity,
    move_record,
    size_class,
)
from src.errors import InternalInvariantError, InvalidArgumentError, ObjectNotFoundError
from src.realloc_amortized import (
    admit_object,
    append_region,
    collect_stats,
    find_boundary_class,
    find_buffer,
    install_flush,
    make_dummy,
    opens_new_class,
    place_in_buffer,
    retire_object,
)
from src.realloc_checkpointed import (
    CheckpointLedger,
    PhasedFlushPlan,
    PlannedMove,
    plan_phased_flush,
)

logger = logging.getLogger(__name__)

_CHECKPOINT = "checkpoint"

Step = Union[PlannedMove, str]


@dataclass(eq=False)
class DeamortizedJob:
    """进行中的增量刷新"""

    plan: PhasedFlushPlan
    stats: FlushStats
    steps: List[Step]
    tail_capacity: int
    cursor: int = 0
    installed: bool = False
    events: List[MoveEvent] = field(default_factory=list)

    @property
    def moves_done(self) -> bool:
        return self.cursor >= len(self.steps)


def new_state(epsilon_prime, base: int = 0) -> Tuple[LayoutState, CheckpointLedger]:
    """创建带尾缓冲的布局与检查点账本（去摊还变体总是 auto 策略）"""
    state = LayoutState(epsilon_prime=epsilon_prime, base=base, tail=TailBuffer())
    ledger = CheckpointLedger(policy="auto")
    state.subscribe(ledger.observe)
    return state, ledger


def work_budget(state: LayoutState, length: int) -> Fraction:
    return Fraction(4) / state.epsilon_prime * length


# ==================== 尾缓冲 ====================


def _tail_fits(state: LayoutState, length: int) -> bool:
    return state.tail.fill + length <= state.tail_capacity


def _place_in_tail(state: LayoutState, record: ObjectRecord) -> Optional[MoveEvent]:
    start = state.regions_end + state.tail.fill
    state.tail.items.append(record)
    state.tail.fill += record.length
    if record.dummy:
        record.interval = (start, start + record.length)
        record.residency = Residency.BUFFER
        return None
    return move_record(state, record, start, Residency.BUFFER)


def _adopt_into_tail(state: LayoutState, record: ObjectRecord) -> None:
    """日志中的触发对象原地并入尾缓冲，由下一次刷新从原位置暂存"""
    state.tail.items.append(record)
    state.tail.fill += record.length
    record.residency = Residency.BUFFER


def _place(state: LayoutState, record: ObjectRecord) -> Tuple[bool, Optional[MoveEvent]]:
    """普通放置规则：新类别建区域、缓冲段、尾缓冲

    只有尾缓冲为空且没有日志时才新建区域，否则区域会推移到日志所在的单元上。

    Returns:
        (是否放下, 事件)
    """
    can_append = not state.tail.items and state.log is None
    if not record.dummy and can_append and opens_new_class(state, record.size_class):
        return True, append_region(state, record)
    region = find_buffer(state, record.size_class, record.length)
    if region is not None:
        return True, place_in_buffer(state, region, record)
    if _tail_fits(state, record.length):
        return True, _place_in_tail(state, record)
    return False, None


# ==================== 刷新任务 ====================


def _begin_job(
    state: LayoutState,
    ledger: CheckpointLedger,
    b: int,
    trigger: Optional[ObjectRecord],
    extent_before: int,
) -> DeamortizedJob:
    volume_at_start = state.volume
    new_tail = buffer_capacity(volume_at_start, state.epsilon_prime)
    plan = plan_phased_flush(state, b, trigger, extent_before, extra_suffix=new_tail)

    steps: List[Step] = []
    for phase in plan.phases:
        steps.extend(phase.moves)
        steps.append(_CHECKPOINT)

    log_start = max(plan.staging_end, plan.base.new_suffix_end + new_tail)
    state.log = FlushLog(start=log_start, cursor=log_start)
    state.flushing = True
    state.working_end = max(state.working_end, plan.staging_end, log_start)

    stats = FlushStats(
        boundary_class=b,
        flushed_classes=sorted(plan.base.per_class_volume),
        volume_at_start=volume_at_start,
        staging_offset=plan.staging_offset,
        L=plan.L,
        L_prime=plan.L_prime,
        B=plan.B,
        delta=plan.delta,
    )
    job = DeamortizedJob(plan=plan, stats=stats, steps=steps, tail_capacity=new_tail)
    ledger.job = job
    ledger.checkpoints_this_flush = 0
    logger.debug(
        "增量刷新开始: b=%d V_f=%d 暂存偏移=%d 日志起点=%d 步数=%d",
        b,
        volume_at_start,
        plan.staging_offset,
        log_start,
        len(steps),
    )
    return job


def _install(state: LayoutState, job: DeamortizedJob) -> None:
    install_flush(state, job.plan.base)
    state.tail = TailBuffer(fixed_capacity=job.tail_capacity)
    job.installed = True


def _finish_job(state: LayoutState, ledger: CheckpointLedger) -> None:
    job: DeamortizedJob = ledger.job
    ledger.grant(state)
    log = state.log
    stats = job.stats
    merged = collect_stats(job.plan.base, job.events, stats.volume_at_start)
    stats.moved_volume = merged.moved_volume
    stats.moves = merged.moves
    stats.max_moves_per_object = merged.max_moves_per_object
    stats.peak_extent = max(merged.peak_extent, job.plan.staging_end, log.cursor)
    stats.checkpoints = ledger.checkpoints_this_flush
    stats.logged_volume = log.volume
    last = log.entries[-1].length if log.entries else 0
    stats.logged_volume_before_last = log.volume - last
    state.flush_history.append(stats)
    state.log = None
    state.flushing = False
    state.working_end = 0
    ledger.job = None
    logger.debug(
        "增量刷新完成: b=%d 搬迁体积=%d 日志体积=%d 检查点=%d",
        stats.boundary_class,
        stats.moved_volume,
        stats.logged_volume,
        stats.checkpoints,
    )


def _run_step(state: LayoutState, ledger: CheckpointLedger, job: DeamortizedJob) -> Tuple[int, List[MoveEvent]]:
    step = job.steps[job.cursor]
    job.cursor += 1
    if step == _CHECKPOINT:
        ledger.grant(state)
        if job.moves_done:
            _install(state, job)
        return 0, []
    move: PlannedMove = step
    record = move.record
    if record.residency is Residency.DELETED_PENDING:
        return 0, []
    if record.interval != move.source:
        raise InternalInvariantError(f"{record.name} 位于 {record.interval}，计划源为 {move.source}")
    if ledger.freed_since_checkpoint.overlaps(move.destination):
        # 刷新期间删除的对象释放了目标单元，先补一个检查点
        ledger.grant(state)
    event = move_record(state, record, move.destination[0], move.residency)
    job.events.append(event)
    return record.length, [event]


def _drain_step(state: LayoutState, ledger: CheckpointLedger, job: DeamortizedJob) -> Tuple[int, List[MoveEvent]]:
    """排空一条日志记录；返回 (计入预算的体积, 事件)"""
    log = state.log
    entry = log.entries[log.drained]
    log.drained += 1
    is_last = log.pending == 0
    record = entry.record

    if entry.kind == "insert":
        if record.residency is Residency.DELETED_PENDING:
            # 刷新期间插入又删除：直接放弃
            log.abandoned.add(id(record))
            return record.length, []
        placed, event = _place(state, record)
        if placed:
            if event is not None:
                job.events.append(event)
            return record.length, [event] if event is not None else []
        if not is_last:
            raise InternalInvariantError(f"日志排空前触发了嵌套刷新: {record.name}")
        # 最后一条放不下：结束本次刷新，由它触发下一次
        _finish_job(state, ledger)
        extent_before = state.extent
        _adopt_into_tail(state, record)
        b = find_boundary_class(state, record.size_class)
        _begin_job(state, ledger, b, record, extent_before)
        return record.length, []

    # 删除记录
    if id(record) in log.abandoned:
        state.pending_deletes = [r for r in state.pending_deletes if r is not record]
        remaining = state.volume_per_class.get(record.size_class, 0) - record.length
        if remaining:
            state.volume_per_class[record.size_class] = remaining
        else:
            state.volume_per_class.pop(record.size_class, None)
        return record.length, []
    dummy = make_dummy(record)
    placed, _ = _place(state, dummy)
    if placed:
        return record.length, []
    if not is_last:
        raise InternalInvariantError(f"日志排空前触发了嵌套刷新: 删除 {record.name}")
    _finish_job(state, ledger)
    extent_before = state.extent
    b = find_boundary_class(state, record.size_class)
    _begin_job(state, ledger, b, None, extent_before)
    return record.length, []


def advance(state: LayoutState, ledger: CheckpointLedger, budget: Fraction) -> List[MoveEvent]:
    """推进进行中的刷新，直到完成的体积达到 budget（以整对象为单位向上取整）"""
    events: List[MoveEvent] = []
    work = 0
    while ledger.job is not None and work < budget:
        job: DeamortizedJob = ledger.job
        if not job.moves_done:
            spent, produced = _run_step(state, ledger, job)
        elif state.log is not None and state.log.pending:
            spent, produced = _drain_step(state, ledger, job)
        else:
            _finish_job(state, ledger)
            break
        work += spent
        events.extend(produced)
    # 预算恰好用完时日志可能已空，立即收尾
    job = ledger.job
    if job is not None and job.moves_done and state.log is not None and not state.log.pending:
        _finish_job(state, ledger)
    return events


def drain_log(state: LayoutState, ledger: CheckpointLedger, budget: Optional[Fraction] = None) -> List[MoveEvent]:
    """按到达顺序把日志记录重新应用到新结构；budget 为 None 时排空全部

    前提：刷新的移动阶段已全部完成。
    """
    job = ledger.job
    if job is None or state.log is None:
        return []
    if not job.moves_done:
        raise InternalInvariantError("移动阶段未完成时不能排空日志")
    events: List[MoveEvent] = []
    work = 0
    while ledger.job is job and state.log is not None and state.log.pending:
        if budget is not None and work >= budget:
            break
        spent, produced = _drain_step(state, ledger, job)
        work += spent
        events.extend(produced)
    if ledger.job is job and state.log is not None and not state.log.pending:
        _finish_job(state, ledger)
    return events


# ==================== 客户端操作 ====================


def _log_update(state: LayoutState, op: str, name: str, length: Optional[int]) -> Optional[MoveEvent]:
    """把刷新期间的更新追加到日志；插入在日志游标处初次放置"""
    log = state.log
    event = None
    if op == "insert":
        record = admit_object(state, name, length)
        event = move_record(state, record, log.cursor, Residency.LOG)
    else:
        record = retire_object(state, name)
    log.cursor += record.length
    log.entries.append(LogEntry(op, record))
    log.volume += record.length
    state.working_end = max(state.working_end, log.cursor)
    return event


def _apply_direct(
    state: LayoutState, ledger: CheckpointLedger, op: str, name: str, length: Optional[int]
) -> List[MoveEvent]:
    extent_before = state.extent
    if op == "insert":
        record = admit_object(state, name, length)
        placed, event = _place(state, record)
        events = [event] if event is not None else []
        if not placed:
            events.append(_place_in_tail(state, record))
            b = find_boundary_class(state, record.size_class)
            _begin_job(state, ledger, b, record, extent_before)
        return events

    record = retire_object(state, name)
    placed, _ = _place(state, make_dummy(record))
    if not placed:
        b = find_boundary_class(state, record.size_class)
        _begin_job(state, ledger, b, None, extent_before)
    return []


def update_deamortized(
    state: LayoutState,
    ledger: CheckpointLedger,
    op: str,
    name: str,
    length: Optional[int] = None,
) -> List[MoveEvent]:
    """执行一次更新并推进进行中的刷新

    Args:
        state: 布局
        ledger: 检查点账本
        op: "insert" 或 "delete"
        name: 对象名称
        length: 插入长度

    Returns:
        本次更新产生的全部移动事件
    """
    ledger.begin_op()
    if op == "insert":
        size_class(length)
        if name in state.objects:
            raise InvalidArgumentError(f"对象名称已存在: {name}")
        w = length
    elif op == "delete":
        if name not in state.objects:
            raise ObjectNotFoundError(f"对象不存在: {name}")
        w = state.objects[name].length
    else:
        raise InvalidArgumentError(f"未知的更新类型: {op}")

    events: List[MoveEvent] = []
    if ledger.job is None:
        events.extend(_apply_direct(state, ledger, op, name, length))
    else:
        event = _log_update(state, op, name, length)
        if event is not None:
            events.append(event)

    if ledger.job is not None:
        events.extend(advance(state, ledger, work_budget(state, w)))
    return events


def checkpoint(state: LayoutState, ledger: CheckpointLedger) -> None:
    """额外的系统检查点：只清空释放集合"""
    ledger.begin_op()
    ledger.grant(state)


def max_work_per_update(state: LayoutState, length: int) -> int:
    return math.floor(work_budget(state, length)) + state.delta
