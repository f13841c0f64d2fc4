"""成本模型测试"""

import ast
from fractions import Fraction
from pathlib import Path

import pytest

from src.core import MoveEvent, ReleaseEvent
from src.costmodel import (
    CostLedger,
    CostMeter,
    CostModel,
    affine_seek,
    constant,
    from_table,
    linear,
    meter,
    parse_cost_spec,
    price,
    sqrt,
    validate_subadditive,
)
from src.errors import InvalidArgumentError, InvalidModelError


class TestPrice:
    """测试计价"""

    def test_linear(self):
        """测试线性模型 f(7) = 7"""
        assert price(linear(1), 7) == 7

    def test_constant(self):
        """测试常数模型与长度无关"""
        assert price(constant(1), 1024) == 1

    def test_affine_seek(self):
        """测试寻道模型 10 + 4 = 14"""
        assert price(affine_seek(10, 1), 4) == 14

    def test_sqrt_rounds_up(self):
        """测试平方根模型向上取整"""
        assert price(sqrt(1), 16) == 4
        assert price(sqrt(1), 17) == 5
        assert price(sqrt(2), 1) == 2

    def test_table_interpolation(self):
        """测试成本表插值：首点前从原点插值，末点后取常数"""
        model = from_table([(2, 2), (4, 3)])

        assert price(model, 1) == 1
        assert price(model, 3) == Fraction(5, 2)
        assert price(model, 4) == 3
        assert price(model, 100) == 3

    def test_non_positive_length(self):
        """测试长度必须为正"""
        with pytest.raises(InvalidArgumentError):
            price(linear(1), 0)


class TestValidateSubadditive:
    """测试次可加性校验"""

    @pytest.mark.parametrize("model", [linear(1), constant(1), sqrt(1), affine_seek(10, 1)])
    def test_standard_models_pass(self, model):
        """测试四种标准模型通过校验"""
        assert validate_subadditive(model, bound=32, random_pairs=64) is None

    def test_superadditive_table_rejected(self):
        """测试 {1→1, 2→3} 的反例为 (1, 1)"""
        model = CostModel("table", table=((1, Fraction(1)), (2, Fraction(3))))

        counterexample = validate_subadditive(model, bound=2)

        assert (counterexample.x, counterexample.y) == (1, 1)
        assert counterexample.rule == "subadditivity"

    def test_from_table_raises(self):
        """测试构造非法成本表时报错"""
        with pytest.raises(InvalidModelError):
            from_table([(1, 1), (2, 3)])

    def test_decreasing_table_rejected(self):
        """测试单调性反例"""
        with pytest.raises(InvalidModelError):
            from_table([(1, 2), (2, 1)])


class TestMeter:
    """测试计量"""

    def test_single_insert(self):
        """测试单次插入只计分配成本"""
        ledger = CostLedger(linear(1))

        meter(ledger, ledger.model, [MoveEvent("a", 5, None, (0, 5))])

        assert ledger.allocation_cost_total == 5
        assert ledger.reallocation_cost_total == 0
        assert ledger.b_ratio == 0

    def test_moves_count_as_reallocation(self):
        """测试插入后被移动两次，重分配成本为 2f(w)"""
        ledger = CostLedger(constant(3))
        meter(ledger, ledger.model, [MoveEvent("a", 5, None, (0, 5))])

        meter(
            ledger,
            ledger.model,
            [
                MoveEvent("a", 5, (0, 5), (10, 15)),
                MoveEvent("a", 5, (10, 15), (2, 7)),
                ReleaseEvent("b", 1, (20, 21)),
            ],
        )

        assert ledger.reallocation_cost_total == 6
        assert ledger.b_ratio == 2
        assert ledger.per_op_cost == [0, 6]
        assert ledger.max_op_cost == 6

    def test_meter_prices_all_models_from_one_stream(self):
        """测试一个事件流同时按多个模型计价"""
        cost_meter = CostMeter([linear(1), constant(1), affine_seek(10, 1)])

        cost_meter.begin_op()
        cost_meter(MoveEvent("a", 4, None, (0, 4)))
        cost_meter(MoveEvent("a", 4, (0, 4), (8, 12)))
        cost_meter.end_op()

        assert cost_meter.ledger_for("linear:1").reallocation_cost_total == 4
        assert cost_meter.ledger_for("constant:1").reallocation_cost_total == 1
        assert cost_meter.ledger_for("seek:10,1").allocation_cost_total == 14
        with pytest.raises(KeyError):
            cost_meter.ledger_for("sqrt:1")


class TestParseCostSpec:
    """测试成本描述解析"""

    def test_builtin_specs(self):
        """测试内置模型"""
        assert parse_cost_spec("linear:2") == CostModel("linear", (Fraction(2),), label="linear:2")
        assert parse_cost_spec("seek:10,1").kind == "affine_seek"
        assert parse_cost_spec("sqrt:1").label == "sqrt:1"

    @pytest.mark.parametrize("spec", ["linear", "cubic:1", "seek:1", "linear:x", "constant:-1"])
    def test_malformed_specs(self, spec):
        """测试格式错误的描述"""
        with pytest.raises(InvalidModelError):
            parse_cost_spec(spec)

    def test_table_file(self, temp_dir):
        """测试从文件加载成本表"""
        table = temp_dir / "disk.txt"
        table.write_text("# length cost\n1 1\n8 4\n64 10\n", encoding="utf-8")

        model = parse_cost_spec("table:disk.txt", base_dir=temp_dir)

        assert model.kind == "table"
        assert price(model, 8) == 4
        assert model.label == "table:disk.txt"


class TestObliviousness:
    """测试分配器模块不依赖成本模型"""

    @pytest.mark.parametrize(
        "module",
        ["core", "realloc_amortized", "realloc_checkpointed", "realloc_deamortized", "defrag", "baselines"],
    )
    def test_allocators_do_not_import_costmodel(self, module):
        """测试分配器源码不导入成本模型"""
        source = Path(__file__).resolve().parent.parent / "src" / f"{module}.py"
        tree = ast.parse(source.read_text(encoding="utf-8"))

        imported = set()
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom) and node.module:
                imported.add(node.module)
            elif isinstance(node, ast.Import):
                imported.update(alias.name for alias in node.names)

        assert "src.costmodel" not in imported
