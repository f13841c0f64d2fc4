"""工作负载生成模块

按 (kind, params, seed) 确定性地生成轨迹。对象依次命名为 o0, o1, ...
"""

from __future__ import annotations

import logging
import random
from collections import deque
from typing import Any, Callable, Dict, List, Mapping, Optional

from src.errors import InvalidArgumentError
from src.oracle import lower_bound_trace
from src.storage import Trace, TraceOp

logger = logging.getLogger(__name__)

WORKLOAD_KINDS = (
    "uniform-random",
    "skewed-sizes",
    "churn",
    "lb-delta",
    "anti-compact",
    "anti-gap",
)

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "uniform-random": {"n": 1000, "delta": 64, "delete_prob": 0.4},
    "skewed-sizes": {"n": 1000, "delta": 1024, "alpha": 1.2, "delete_prob": 0.4},
    "churn": {"n": 1000, "delta": 64, "target": 200},
    "lb-delta": {"delta": 64},
    "anti-compact": {"delta": 32, "rounds": 10},
    "anti-gap": {"delta": 64, "rounds": 4},
}


class _Builder:
    """记录活动对象，保证生成的轨迹总是合法"""

    def __init__(self) -> None:
        self.ops: List[TraceOp] = []
        self.active: List[str] = []
        self.lengths: Dict[str, int] = {}
        self._next = 0

    def insert(self, length: int) -> str:
        name = f"o{self._next}"
        self._next += 1
        self.ops.append(TraceOp("I", name, length))
        self.active.append(name)
        self.lengths[name] = length
        return name

    def delete(self, name: str) -> None:
        self.active.remove(name)
        self.ops.append(TraceOp("D", name))

    def delete_random(self, rng: random.Random) -> None:
        # 交换删除，O(1)
        i = rng.randrange(len(self.active))
        self.active[i], self.active[-1] = self.active[-1], self.active[i]
        name = self.active.pop()
        self.ops.append(TraceOp("D", name))


def _uniform(params: Mapping[str, Any], rng: random.Random) -> _Builder:
    builder = _Builder()
    delta = int(params["delta"])
    for _ in range(int(params["n"])):
        if builder.active and rng.random() < float(params["delete_prob"]):
            builder.delete_random(rng)
        else:
            builder.insert(rng.randint(1, delta))
    return builder


def _skewed(params: Mapping[str, Any], rng: random.Random) -> _Builder:
    builder = _Builder()
    delta = int(params["delta"])
    alpha = float(params["alpha"])
    for _ in range(int(params["n"])):
        if builder.active and rng.random() < float(params["delete_prob"]):
            builder.delete_random(rng)
        else:
            builder.insert(min(delta, int(rng.paretovariate(alpha))))
    return builder


def _churn(params: Mapping[str, Any], rng: random.Random) -> _Builder:
    """先填充到目标数量，之后插删交替保持稳态"""
    builder = _Builder()
    delta = int(params["delta"])
    target = int(params["target"])
    for _ in range(int(params["n"])):
        if len(builder.active) < target:
            builder.insert(rng.randint(1, delta))
        elif rng.random() < 0.5:
            builder.delete_random(rng)
        else:
            builder.insert(rng.randint(1, delta))
    return builder


def _anti_compact(params: Mapping[str, Any], rng: random.Random) -> _Builder:
    """Δ 个单位对象排成先进先出队列

    每轮插入一个 Δ 大小的对象和一个单位对象，删除大对象，再删除最老的单位对象。
    最老的单位对象在最左边，它留下的洞右侧压着其余全部单位对象。
    """
    builder = _Builder()
    delta = int(params["delta"])
    units = deque(builder.insert(1) for _ in range(delta))
    for _ in range(int(params["rounds"])):
        big = builder.insert(delta)
        units.append(builder.insert(1))
        builder.delete(big)
        builder.delete(units.popleft())
    return builder


def _anti_gap(params: Mapping[str, Any], rng: random.Random) -> _Builder:
    """每个 2 的幂各一个对象，之后反复成批插入、删除单位对象"""
    builder = _Builder()
    delta = int(params["delta"])
    size = 1
    while size <= delta:
        builder.insert(size)
        size *= 2
    for _ in range(int(params["rounds"])):
        batch = [builder.insert(1) for _ in range(4 * delta)]
        for name in batch:
            builder.delete(name)
    return builder


_GENERATORS: Dict[str, Callable[[Mapping[str, Any], random.Random], _Builder]] = {
    "uniform-random": _uniform,
    "skewed-sizes": _skewed,
    "churn": _churn,
    "anti-compact": _anti_compact,
    "anti-gap": _anti_gap,
}


def generate(
    kind: str,
    params: Optional[Mapping[str, Any]] = None,
    seed: int = 0,
    checkpoint_every: int = 0,
) -> Trace:
    """生成轨迹

    Args:
        kind: 工作负载类型
        params: 覆盖默认参数
        seed: 随机种子
        checkpoint_every: 大于 0 时每隔这么多条更新插入一行 C

    Returns:
        Trace

    Raises:
        InvalidArgumentError: 未知类型或参数非法
    """
    if kind not in WORKLOAD_KINDS:
        raise InvalidArgumentError(f"未知的工作负载类型: {kind}，可选 {', '.join(WORKLOAD_KINDS)}")
    merged = {**DEFAULT_PARAMS[kind], **(params or {})}
    if int(merged.get("delta", 1)) < 1:
        raise InvalidArgumentError(f"Δ 必须为正: {merged['delta']}")

    if kind == "lb-delta":
        trace = lower_bound_trace(int(merged["delta"]))
        ops = trace.ops
    else:
        rng = random.Random(seed)
        ops = _GENERATORS[kind](merged, rng).ops

    if checkpoint_every > 0:
        spaced: List[TraceOp] = []
        for i, op in enumerate(ops, start=1):
            spaced.append(op)
            if i % checkpoint_every == 0:
                spaced.append(TraceOp("C"))
        ops = spaced

    header = {"kind": kind, "seed": str(seed)}
    header.update({k: str(v) for k, v in sorted(merged.items())})
    logger.debug("生成工作负载 %s: %d 条操作", kind, len(ops))
    return Trace(ops=ops, header=header)
