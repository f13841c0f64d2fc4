"""核心数据模型测试"""

from fractions import Fraction

import pytest

from src.core import (
    IntervalSet,
    LayoutState,
    MoveEvent,
    ObjectRecord,
    Region,
    Residency,
    buffer_capacity,
    describe_layout,
    move_record,
    overlaps,
    size_class,
    validate_layout,
)
from src.errors import InvalidArgumentError
from src.realloc_amortized import insert, new_state


class TestSizeClass:
    """测试尺寸类别"""

    @pytest.mark.parametrize(
        "length, expected",
        [(1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (7, 3), (8, 4), (1023, 10), (1024, 11)],
    )
    def test_power_of_two_boundaries(self, length, expected):
        """测试 2 的幂附近的类别边界"""
        assert size_class(length) == expected

    @pytest.mark.parametrize("length", [0, -3, 1.5, True, "4"])
    def test_rejects_invalid_length(self, length):
        """测试非正整数长度被拒绝"""
        with pytest.raises(InvalidArgumentError):
            size_class(length)


class TestBufferCapacity:
    """测试缓冲段容量"""

    def test_floor_of_product(self):
        """测试向下取整"""
        assert buffer_capacity(8, Fraction(1, 2)) == 4
        assert buffer_capacity(3, Fraction(1, 2)) == 1
        assert buffer_capacity(1, Fraction(1, 4)) == 0
        assert buffer_capacity(7, Fraction(1, 2)) == 3
        assert buffer_capacity(31, Fraction(1, 32)) == 0

    def test_zero_volume(self):
        """测试空类别容量为 0"""
        assert buffer_capacity(0, Fraction(1, 4)) == 0

    def test_negative_volume_rejected(self):
        """测试负体积被拒绝"""
        with pytest.raises(InvalidArgumentError):
            buffer_capacity(-1, Fraction(1, 4))


class TestOverlaps:
    """测试半开区间相交"""

    def test_adjacent_intervals_do_not_overlap(self):
        """测试相邻区间不相交"""
        assert not overlaps((0, 4), (4, 6))

    def test_nested_intervals_overlap(self):
        """测试包含关系算相交"""
        assert overlaps((0, 10), (3, 4))

    def test_none_and_empty(self):
        """测试 None 与空区间"""
        assert not overlaps(None, (0, 1))
        assert not overlaps((2, 2), (0, 5))


class TestIntervalSet:
    """测试区间集合"""

    def test_merges_adjacent_and_overlapping(self):
        """测试相邻与重叠区间合并"""
        spans = IntervalSet()
        spans.add((0, 2))
        spans.add((2, 4))
        spans.add((10, 12))
        spans.add((3, 11))

        assert list(spans) == [(0, 12)]
        assert spans.total == 12

    def test_overlap_query(self):
        """测试相交查询"""
        spans = IntervalSet()
        spans.add((5, 8))
        spans.add((20, 21))

        assert spans.overlaps((7, 9))
        assert spans.overlaps((0, 100))
        assert not spans.overlaps((8, 20))
        assert not spans.overlaps((0, 5))

    def test_clear(self):
        """测试清空"""
        spans = IntervalSet()
        spans.add((0, 1))
        spans.clear()

        assert not spans
        assert len(spans) == 0


class TestLayoutState:
    """测试布局状态"""

    def test_epsilon_prime_range(self):
        """测试 ε' 必须位于 (0, 1/2]"""
        with pytest.raises(InvalidArgumentError):
            LayoutState(epsilon_prime=Fraction(3, 4))
        with pytest.raises(InvalidArgumentError):
            LayoutState(epsilon_prime=0)

    def test_single_insert_extent_and_footprint(self, half):
        """测试插入 A(4) 后 extent 为 6、footprint 为 4"""
        state = new_state(half)

        insert(state, "A", 4)

        assert state.objects["A"].interval == (0, 4)
        assert state.extent == 6
        assert state.footprint == 4
        assert state.volume == 4

    def test_observers_receive_events(self, half):
        """测试订阅者收到移动事件，取消订阅后不再收到"""
        state = new_state(half)
        seen = []
        state.subscribe(seen.append)

        insert(state, "A", 4)
        state.unsubscribe(seen.append)
        insert(state, "B", 1)

        assert seen == [MoveEvent("A", 4, None, (0, 4), 0)]

    def test_move_record_reports_source(self, half):
        """测试搬迁事件带有原区间"""
        state = new_state(half)
        record = ObjectRecord("x", 3, 2)

        first = move_record(state, record, 10, Residency.BUFFER)
        second = move_record(state, record, 0, Residency.PAYLOAD)

        assert first.source is None
        assert second.source == (10, 13)
        assert record.interval == (0, 3)
        assert record.residency is Residency.PAYLOAD


class TestValidateLayout:
    """测试布局校验"""

    def test_empty_state(self, half):
        """测试空布局合法"""
        assert validate_layout(new_state(half)) == []

    def test_valid_layout_has_no_violations(self, half):
        """测试正常插入序列没有违例"""
        state = new_state(half)
        for name, length in [("A", 4), ("B", 1), ("C", 2), ("D", 9)]:
            insert(state, name, length)

        assert validate_layout(state) == []

    def test_detects_overlap(self, half):
        """测试检出重叠"""
        state = new_state(half)
        insert(state, "A", 4)
        insert(state, "B", 1)
        state.objects["B"].interval = (3, 4)

        invariants = {v.invariant for v in validate_layout(state)}

        assert "disjointness" in invariants

    def test_detects_impure_payload(self, half):
        """测试检出负载段混入其他类别"""
        state = new_state(half)
        insert(state, "A", 4)
        stranger = ObjectRecord("s", 1, 1, interval=(0, 1), residency=Residency.PAYLOAD)
        state.regions[0].payload_items.append(stranger)

        invariants = {v.invariant for v in validate_layout(state)}

        assert "payload-purity" in invariants

    def test_detects_overfull_buffer(self, half):
        """测试检出缓冲段超量"""
        state = new_state(half)
        insert(state, "A", 4)
        state.regions[0].buffer_fill = 3

        invariants = {v.invariant for v in validate_layout(state)}

        assert "buffer-capacity" in invariants

    def test_detects_ledger_mismatch(self, half):
        """测试检出体积账本不一致"""
        state = new_state(half)
        insert(state, "A", 4)
        state.volume_per_class[3] = 5

        invariants = {v.invariant for v in validate_layout(state)}

        assert "volume-ledger" in invariants

    def test_detects_region_gap(self, half):
        """测试检出区域之间的空隙"""
        state = new_state(half)
        state.regions.append(Region(class_index=2, start=3, payload_size=0, buffer_size=0))

        invariants = {v.invariant for v in validate_layout(state)}

        assert "region-order" in invariants


class TestDescribeLayout:
    """测试布局描述"""

    def test_mentions_regions(self, half):
        """测试输出包含各区域"""
        state = new_state(half)
        insert(state, "A", 4)

        text = describe_layout(state)

        assert "extent=6" in text
        assert "class 3" in text
