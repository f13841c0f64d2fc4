"""去摊还重分配器测试"""

from fractions import Fraction

import pytest

from src.core import MoveEvent, Residency, validate_layout
from src.errors import InternalInvariantError, InvalidArgumentError, ObjectNotFoundError
from src.realloc_deamortized import (
    checkpoint,
    drain_log,
    max_work_per_update,
    new_state,
    update_deamortized,
    work_budget,
)
from tests.conftest import make_random_trace


def _insert(state, ledger, name, length):
    return update_deamortized(state, ledger, "insert", name, length)


def _delete(state, ledger, name):
    return update_deamortized(state, ledger, "delete", name)


def _moved(events):
    return sum(e.length for e in events if e.source is not None)


class TestTailBuffer:
    """测试尾缓冲"""

    def test_first_insert_opens_region(self, half):
        """测试首个对象新建区域，尾缓冲跟在区域之后"""
        state, ledger = new_state(half)

        events = _insert(state, ledger, "A", 4)

        assert events == [MoveEvent("A", 4, None, (0, 4), 0)]
        assert state.tail_capacity == 2
        assert state.extent == 8

    def test_overflow_goes_to_tail(self, half):
        """测试缓冲段满后进入尾缓冲"""
        state, ledger = new_state(half)
        for name, length in [("A", 4), ("B", 1), ("C", 1)]:
            _insert(state, ledger, name, length)

        events = _insert(state, ledger, "D", 1)

        assert events == [MoveEvent("D", 1, None, (6, 7), 0)]
        assert state.tail.fill == 1
        assert ledger.job is None
        assert validate_layout(state) == []


class TestIncrementalFlush:
    """测试增量刷新"""

    def _until_flush(self, state, ledger, limit=30):
        for i in range(limit):
            _insert(state, ledger, f"u{i}", 1)
            if ledger.job is not None:
                return i
        raise AssertionError("刷新没有被触发")

    def test_tail_overflow_starts_job(self, half):
        """测试尾缓冲溢出开始刷新，日志随后接收更新"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)

        self._until_flush(state, ledger)

        assert state.flushing
        assert state.log is not None
        assert state.log.start >= state.regions_end

    def test_job_completes_and_structure_is_valid(self, half):
        """测试后续更新推进刷新直到完成"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)
        start = self._until_flush(state, ledger)

        for i in range(start + 1, start + 40):
            _insert(state, ledger, f"u{i}", 1)
            if ledger.job is None:
                break

        assert ledger.job is None
        assert state.log is None
        assert len(state.flush_history) >= 1
        assert validate_layout(state) == []
        stats = state.flush_history[0]
        assert stats.logged_volume_before_last <= half * stats.volume_at_start

    def test_logged_insert_lands_in_log(self, half):
        """测试刷新期间的插入先写到日志游标处"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)
        self._until_flush(state, ledger)
        cursor = state.log.cursor

        events = _insert(state, ledger, "late", 1)

        assert events[0].source is None
        assert events[0].destination == (cursor, cursor + 1)

    def test_per_update_work_is_bounded(self):
        """测试每次更新搬迁的体积不超过 (4/ε')w + Δ"""
        trace = make_random_trace(600, 32, seed=9)
        state, ledger = new_state(Fraction(1, 8))

        for op in trace.ops:
            if op.kind == "I":
                w = op.length
                events = _insert(state, ledger, op.name, op.length)
            else:
                w = state.objects[op.name].length
                events = _delete(state, ledger, op.name)
            assert _moved(events) <= work_budget(state, w) + state.delta

    def test_drain_requires_finished_moves(self, half):
        """测试移动阶段未完成时不能排空日志"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)
        self._until_flush(state, ledger)
        assert not ledger.job.moves_done

        with pytest.raises(InternalInvariantError):
            drain_log(state, ledger)


class TestUpdateValidation:
    """测试更新参数校验"""

    def test_errors(self, half):
        """测试非法更新"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)

        with pytest.raises(InvalidArgumentError):
            _insert(state, ledger, "A", 1)
        with pytest.raises(InvalidArgumentError):
            _insert(state, ledger, "B", 0)
        with pytest.raises(ObjectNotFoundError):
            _delete(state, ledger, "ghost")
        with pytest.raises(InvalidArgumentError):
            update_deamortized(state, ledger, "move", "A")

    def test_extra_checkpoint_is_counted(self, half):
        """测试额外检查点只计数"""
        state, ledger = new_state(half)

        checkpoint(state, ledger)

        assert ledger.checkpoints_total == 1

    def test_max_work_per_update(self, half):
        """测试单次更新的工作上限"""
        state, ledger = new_state(half)
        _insert(state, ledger, "A", 4)

        assert max_work_per_update(state, 1) == 8 + 4

    def test_deleted_object_leaves_buffer_record(self, half):
        """测试删除在缓冲中留下占位记录"""
        state, ledger = new_state(half)
        for name, length in [("A", 4), ("B", 1)]:
            _insert(state, ledger, name, length)

        _delete(state, ledger, "B")

        assert state.pending_deletes[0].residency is Residency.DELETED_PENDING
        assert "B" not in state.objects
        assert any(item.dummy for item in state.regions[0].buffer_items)
