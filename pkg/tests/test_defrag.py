"""碎片整理测试"""

import math
import random
from fractions import Fraction

import pytest

from src.defrag import DefragInput, DefragObject, defragment, validate_input
from src.errors import InvalidArgumentError


def _objects(*specs):
    return [DefragObject(name, end - start, (start, end)) for name, start, end in specs]


def _random_instance(seed, count, max_len=16, epsilon=Fraction(1, 4)):
    """随机生成满足 extent <= (1+ε)V 的初始布局"""
    rng = random.Random(seed)
    lengths = [rng.randint(1, max_len) for _ in range(count)]
    volume = sum(lengths)
    slack = math.floor(epsilon * volume)
    gaps = [0] * (count + 1)
    for _ in range(slack):
        gaps[rng.randrange(count + 1)] += 1
    names = [f"n{i:03d}" for i in range(count)]
    rng.shuffle(names)
    objects = []
    cursor = 0
    for name, length, gap in zip(names, lengths, gaps):
        cursor += gap
        objects.append(DefragObject(name, length, (cursor, cursor + length)))
        cursor += length
    return objects, volume


class TestValidateInput:
    """测试输入校验"""

    def test_returns_volume(self):
        """测试返回总体积"""
        objects = _objects(("a", 0, 2), ("b", 3, 4), ("c", 4, 7))

        assert validate_input(DefragInput(objects)) == 6

    def test_rejects_overlap(self):
        """测试初始区间重叠"""
        objects = _objects(("a", 0, 3), ("b", 2, 4))

        with pytest.raises(InvalidArgumentError):
            validate_input(DefragInput(objects))

    def test_rejects_large_extent(self):
        """测试初始 extent 超过 (1+ε)V"""
        objects = _objects(("a", 0, 2), ("b", 10, 12))

        with pytest.raises(InvalidArgumentError):
            validate_input(DefragInput(objects))

    def test_rejects_duplicate_names(self):
        """测试名称重复"""
        objects = _objects(("a", 0, 2), ("a", 2, 4))

        with pytest.raises(InvalidArgumentError):
            validate_input(DefragInput(objects))

    def test_rejects_bad_epsilon(self):
        """测试 ε 越界"""
        objects = _objects(("a", 0, 2))

        with pytest.raises(InvalidArgumentError):
            validate_input(DefragInput(objects, epsilon=Fraction(3, 4)))


class TestDefragment:
    """测试整理结果"""

    def test_sorted_by_name(self):
        """测试默认按名称排列并紧密放置"""
        objects = _objects(("c", 0, 3), ("a", 4, 6), ("b", 6, 7))

        result = defragment(DefragInput(objects))

        assert result.order == ["a", "b", "c"]
        assert result.final_layout == {"a": (0, 2), "b": (2, 3), "c": (3, 6)}
        assert result.crunch_offset == 1
        assert result.peak_extent <= 6 + 1 + 3

    def test_custom_key(self):
        """测试自定义比较键"""
        objects = _objects(("a", 0, 2), ("b", 2, 3), ("c", 3, 6))

        result = defragment(DefragInput(objects, key=lambda name: -ord(name)))

        assert result.order == ["c", "b", "a"]
        assert result.final_layout == {"c": (0, 3), "b": (3, 4), "a": (4, 6)}

    def test_phase_boundaries_are_ordered(self):
        """测试各阶段的事件下标单调"""
        objects, _ = _random_instance(seed=1, count=20)

        result = defragment(DefragInput(objects))

        marks = [result.phase_boundaries[p] for p in ("crunch", "absorb", "extract", "shift")]
        assert marks == sorted(marks)
        assert result.moves == len(result.events)

    def test_empty_input(self):
        """测试空输入"""
        result = defragment(DefragInput([]))

        assert result.order == []
        assert result.final_layout == {}

    @pytest.mark.parametrize("seed", range(8))
    def test_random_instances(self, seed):
        """测试随机实例：顺序正确、紧密、峰值受限、移动互不重叠"""
        objects, volume = _random_instance(seed, count=40)
        delta = max(o.length for o in objects)

        result = defragment(DefragInput(objects))

        expected = sorted(o.name for o in objects)
        assert result.order == expected
        cursor = 0
        for name in expected:
            start, end = result.final_layout[name]
            assert start == cursor
            cursor = end
        assert cursor == volume
        assert result.peak_extent <= volume + math.floor(Fraction(1, 4) * volume) + delta

        # 重放事件：目标区间不覆盖其他对象
        where = {o.name: o.interval for o in objects}
        for event in result.events:
            assert where[event.name] == event.source
            del where[event.name]
            for other in where.values():
                assert not (other[0] < event.destination[1] and event.destination[0] < other[1])
            where[event.name] = event.destination
