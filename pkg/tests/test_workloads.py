"""工作负载生成测试"""

import pytest

from src.errors import InvalidArgumentError
from src.storage import parse_trace, serialize_trace
from src.workloads import WORKLOAD_KINDS, generate


def _max_length(trace):
    return max(op.length for op in trace.ops if op.kind == "I")


class TestGenerate:
    """测试生成器"""

    @pytest.mark.parametrize("kind", WORKLOAD_KINDS)
    def test_deterministic(self, kind):
        """测试同一种子得到同一轨迹"""
        params = {"delta": 16, "n": 200} if kind not in ("lb-delta", "anti-compact", "anti-gap") else {"delta": 16}

        first = generate(kind, params, seed=4)
        second = generate(kind, params, seed=4)

        assert serialize_trace(first) == serialize_trace(second)
        assert first.header["kind"] == kind

    @pytest.mark.parametrize("kind", WORKLOAD_KINDS)
    def test_generated_traces_are_valid(self, kind):
        """测试生成的轨迹能被解析器接受，长度不超过 Δ"""
        trace = generate(kind, {"delta": 8}, seed=1)

        reparsed = parse_trace(serialize_trace(trace))

        assert len(reparsed) == len(trace)
        assert _max_length(trace) <= 8

    def test_seeds_differ(self):
        """测试不同种子得到不同轨迹"""
        first = generate("uniform-random", {"n": 100}, seed=1)
        second = generate("uniform-random", {"n": 100}, seed=2)

        assert first.ops != second.ops

    def test_lower_bound_kind(self):
        """测试 lb-delta 为 Δ+2 条操作"""
        trace = generate("lb-delta", {"delta": 4})

        assert len(trace) == 6
        assert trace.ops[0].length == 4

    def test_anti_compact_shape(self):
        """测试 anti-compact 的轮次结构"""
        trace = generate("anti-compact", {"delta": 4, "rounds": 2})

        assert [op.kind for op in trace.ops] == ["I"] * 4 + ["I", "I", "D", "D"] * 2
        assert [op.name for op in trace.ops if op.kind == "D"] == ["o4", "o0", "o6", "o1"]

    def test_churn_keeps_target(self):
        """测试 churn 填充到目标数量后保持稳态"""
        trace = generate("churn", {"n": 400, "delta": 8, "target": 50}, seed=3)

        live = set()
        for op in trace.ops:
            if op.kind == "I":
                live.add(op.name)
            else:
                live.discard(op.name)

        assert len(live) >= 49

    def test_checkpoint_every(self):
        """测试每隔 k 条操作插入检查点"""
        trace = generate("lb-delta", {"delta": 4}, checkpoint_every=2)

        kinds = [op.kind for op in trace.ops]

        assert kinds.count("C") == 3
        assert kinds[2] == "C"

    def test_unknown_kind(self):
        """测试未知类型"""
        with pytest.raises(InvalidArgumentError):
            generate("zipf")

    def test_non_positive_delta(self):
        """测试 Δ 非正"""
        with pytest.raises(InvalidArgumentError):
            generate("uniform-random", {"delta": 0})
