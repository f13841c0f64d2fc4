"""成本模型模块

次可加成本函数与计量。分配器从不查询成本；计量器事后为移动事件定价，
同一事件流可以同时按多个模型计价。所有金额用 Fraction 精确计算。
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.core import Event, MoveEvent
from src.errors import InvalidArgumentError, InvalidModelError

logger = logging.getLogger(__name__)

MODEL_KINDS = ("constant", "linear", "sqrt", "affine_seek", "table")

# 命令行里的简写
_SPEC_ALIASES = {"seek": "affine_seek", "affine": "affine_seek"}


@dataclass(frozen=True)
class CostModel:
    """f(w)，单调不减且次可加"""

    kind: str
    params: Tuple[Fraction, ...] = ()
    table: Tuple[Tuple[int, Fraction], ...] = ()
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise InvalidModelError(f"未知的成本模型: {self.kind}")
        if not self.label:
            object.__setattr__(self, "label", self.default_label())

    def default_label(self) -> str:
        if self.kind == "table":
            return f"table[{len(self.table)}]"
        shown = ",".join(str(p) for p in self.params)
        prefix = "seek" if self.kind == "affine_seek" else self.kind
        return f"{prefix}:{shown}"


def constant(a=1) -> CostModel:
    return CostModel("constant", (Fraction(a),))


def linear(b=1) -> CostModel:
    return CostModel("linear", (Fraction(b),))


def sqrt(b=1) -> CostModel:
    return CostModel("sqrt", (Fraction(b),))


def affine_seek(a, b=1) -> CostModel:
    return CostModel("affine_seek", (Fraction(a), Fraction(b)))


def from_table(points: Iterable[Tuple[int, object]], label: str = "") -> CostModel:
    """由 (长度, 成本) 采样点构造插值表，并校验单调性与次可加性"""
    ordered = tuple(sorted((int(w), Fraction(c)) for w, c in points))
    if not ordered:
        raise InvalidModelError("成本表为空")
    if ordered[0][0] < 1 or len({w for w, _ in ordered}) != len(ordered):
        raise InvalidModelError("成本表的长度必须为互不相同的正整数")
    model = CostModel("table", table=ordered, label=label)
    counterexample = validate_subadditive(model, bound=max(ordered[-1][0], 2))
    if counterexample is not None:
        raise InvalidModelError(f"成本表不满足{counterexample.rule}: ({counterexample.x}, {counterexample.y})")
    return model


def price(model: CostModel, length: int) -> Fraction:
    """计算 f(length)

    Raises:
        InvalidArgumentError: 长度小于 1
    """
    if length < 1:
        raise InvalidArgumentError(f"计价长度必须为正: {length}")
    kind = model.kind
    if kind == "constant":
        return model.params[0]
    if kind == "linear":
        return model.params[0] * length
    if kind == "sqrt":
        root = math.isqrt(length)
        if root * root < length:
            root += 1
        return model.params[0] * root
    if kind == "affine_seek":
        return model.params[0] + model.params[1] * length
    return _interpolate(model.table, length)


def _interpolate(table: Sequence[Tuple[int, Fraction]], length: int) -> Fraction:
    # 第一个采样点之前从 (0, 0) 线性插值，最后一个点之后取常数
    previous = (0, Fraction(0))
    for w, cost in table:
        if length == w:
            return cost
        if length < w:
            w0, c0 = previous
            return c0 + (cost - c0) * Fraction(length - w0, w - w0)
        previous = (w, cost)
    return table[-1][1]


# ==================== 次可加性校验 ====================


@dataclass(frozen=True)
class Counterexample:
    x: int
    y: int
    rule: str  # "monotonicity" | "subadditivity"


def validate_subadditive(
    model: CostModel,
    bound: int = 64,
    random_pairs: int = 256,
    seed: int = 0,
) -> Optional[Counterexample]:
    """检查单调性与次可加性

    先穷举 1..bound 内的长度和 x <= y 的长度对，再随机抽取较大的长度对。

    Returns:
        第一个反例，全部通过时返回 None
    """
    cache: Dict[int, Fraction] = {}

    def f(w: int) -> Fraction:
        if w not in cache:
            cache[w] = price(model, w)
        return cache[w]

    for w in range(1, 2 * bound):
        if f(w + 1) < f(w):
            return Counterexample(w, w + 1, "monotonicity")
    for x in range(1, bound + 1):
        for y in range(x, bound + 1):
            if f(x + y) > f(x) + f(y):
                return Counterexample(x, y, "subadditivity")

    rng = random.Random(seed)
    upper = max(bound * 1024, 1 << 20)
    for _ in range(random_pairs):
        x = rng.randint(1, upper)
        y = rng.randint(x, upper)
        if f(y) < f(x):
            return Counterexample(x, y, "monotonicity")
        if f(x + y) > f(x) + f(y):
            return Counterexample(x, y, "subadditivity")
    return None


# ==================== 解析 ====================


def parse_cost_spec(spec: str, base_dir: Optional[Path] = None) -> CostModel:
    """解析命令行成本描述

    支持 constant:a、linear:b、sqrt:b、seek:a,b 和 table:path。
    """
    kind, sep, rest = spec.strip().partition(":")
    kind = _SPEC_ALIASES.get(kind, kind)
    if not sep or not rest:
        raise InvalidModelError(f"成本描述格式错误: {spec!r}")
    if kind == "table":
        path = Path(rest).expanduser()
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        from src.storage import load_cost_table

        return from_table(load_cost_table(path), label=spec)
    try:
        params = tuple(Fraction(p.strip()) for p in rest.split(","))
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidModelError(f"成本参数无法解析: {spec!r}") from exc
    expected = 2 if kind == "affine_seek" else 1
    if kind not in MODEL_KINDS or len(params) != expected:
        raise InvalidModelError(f"成本描述格式错误: {spec!r}")
    if any(p < 0 for p in params):
        raise InvalidModelError(f"成本参数不能为负: {spec!r}")
    return CostModel(kind, params, label=spec)


# ==================== 计量 ====================


@dataclass
class CostLedger:
    model: CostModel
    allocation_cost_total: Fraction = Fraction(0)
    reallocation_cost_total: Fraction = Fraction(0)
    per_op_cost: List[Fraction] = field(default_factory=list)

    @property
    def b_ratio(self) -> Fraction:
        if self.allocation_cost_total == 0:
            return Fraction(0)
        return self.reallocation_cost_total / self.allocation_cost_total

    @property
    def max_op_cost(self) -> Fraction:
        return max(self.per_op_cost, default=Fraction(0))


def meter(ledger: CostLedger, model: CostModel, events: Iterable[Event]) -> CostLedger:
    """把一批事件（视为一个操作）计入账本

    初次放置计入分配成本，有源的移动计入重分配成本。
    """
    op_cost = Fraction(0)
    for event in events:
        if not isinstance(event, MoveEvent):
            continue
        cost = price(model, event.length)
        if event.source is None:
            ledger.allocation_cost_total += cost
        else:
            ledger.reallocation_cost_total += cost
            op_cost += cost
    ledger.per_op_cost.append(op_cost)
    return ledger


class CostMeter:
    """事件观察者：按操作分组，同时为多个模型记账"""

    def __init__(self, models: Sequence[CostModel]):
        self.ledgers = [CostLedger(model) for model in models]
        self._current: List[MoveEvent] = []

    def __call__(self, event: Event) -> None:
        if isinstance(event, MoveEvent):
            self._current.append(event)

    def begin_op(self) -> None:
        self._current = []

    def end_op(self) -> None:
        for ledger in self.ledgers:
            meter(ledger, ledger.model, self._current)
        self._current = []

    def ledger_for(self, label: str) -> CostLedger:
        for ledger in self.ledgers:
            if ledger.model.label == label:
                return ledger
        raise KeyError(label)
