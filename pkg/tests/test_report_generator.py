"""报告生成模块测试"""

from fractions import Fraction

import pytest

from src.defrag import DefragInput, DefragObject, defragment
from src.harness import SweepCell, run
from src.oracle import Verdict
from src.report_generator import (
    format_ratio,
    parse_run_report,
    render_defrag_report,
    render_run_report,
    render_sweep_summary,
    run_report_fields,
)


@pytest.fixture
def report(sample_trace):
    return run(sample_trace, mode="amortized", epsilon=Fraction(1, 4))


class TestFormatRatio:
    """测试比值格式"""

    @pytest.mark.parametrize(
        "value, expected",
        [(Fraction(1, 3), "0.333333"), (0, "0.000000"), (Fraction(5, 2), "2.500000"), (2, "2.000000")],
    )
    def test_six_decimals(self, value, expected):
        """测试保留 6 位小数"""
        assert format_ratio(value) == expected


class TestRunReport:
    """测试运行报告"""

    def test_key_order(self, report):
        """测试键序固定：基本信息在前，模型其次，违例与耗时在后"""
        keys = [key for key, _ in run_report_fields(report)]

        assert keys[:4] == ["mode", "epsilon", "epsilon_prime", "checkpoint_policy"]
        assert keys.index("event_digest") < keys.index("model.constant:1.allocation")
        assert keys[-2:] == ["verdicts", "wall_time_s"]
        assert len(keys) == len(set(keys))

    def test_render_and_parse(self, report):
        """测试渲染后能按原键序读回"""
        text = render_run_report(report)

        fields = parse_run_report(text)

        assert list(fields) == [key for key, _ in run_report_fields(report)]
        assert fields["mode"] == "amortized"
        assert fields["epsilon"] == "1/4"
        assert fields["epsilon_prime"] == "1/32"
        assert fields["ops"] == "7"
        assert fields["inserts"] == "4"
        assert fields["checkpoint_ops"] == "1"
        assert fields["delta"] == "7"
        assert fields["model.linear:1.allocation"] == "15.000000"
        assert fields["verdicts"] == "0"

    def test_verdicts_are_listed(self, report):
        """测试违例逐条列出"""
        report.verdicts = [Verdict(3, "disjointness", "a 覆盖了 b")]

        fields = parse_run_report(render_run_report(report))

        assert fields["verdicts"] == "1"
        assert fields["verdict.0"] == "op 3: [disjointness] a 覆盖了 b"


class TestSweepSummary:
    """测试扫描表格"""

    def test_table_rows_and_slopes(self, sample_trace):
        """测试每个单元一行，模型列按出现顺序排列"""
        first = run(sample_trace, mode="amortized")
        second = run(sample_trace, mode="baseline:first-fit")
        results = [
            (SweepCell("amortized", Fraction(1, 4), "handmade", 8, 0), first),
            (SweepCell("baseline:first-fit", Fraction(1, 4), "handmade", 8, 0), second),
        ]

        text = render_sweep_summary(results, {("amortized", "linear:1"): 0.5})

        assert text.startswith("# 参数扫描结果")
        assert "b[constant:1]" in text
        assert "| amortized | 1/4 | handmade | 8 | 0 |" in text
        assert "| baseline:first-fit | 1/4 |" in text
        assert "| amortized | linear:1 | 0.5000 |" in text

    def test_no_slopes_section_when_empty(self, sample_trace):
        """测试没有斜率时不输出斜率小节"""
        results = [(SweepCell("amortized", Fraction(1, 4), "handmade", 8, 0), run(sample_trace))]

        text = render_sweep_summary(results, {})

        assert "斜率" not in text


class TestDefragReport:
    """测试碎片整理报告"""

    def test_fields(self):
        """测试包含阶段边界和最终位置"""
        objects = [
            DefragObject("c", 3, (0, 3)),
            DefragObject("a", 2, (4, 6)),
            DefragObject("b", 1, (6, 7)),
        ]
        result = defragment(DefragInput(objects))

        fields = parse_run_report(render_defrag_report(result))

        assert fields["objects"] == "3"
        assert fields["volume"] == "6"
        assert fields["crunch_offset"] == "1"
        assert fields["moves"] == str(result.moves)
        assert "phase.crunch" in fields
        assert (fields["a"], fields["b"], fields["c"]) == ("0", "2", "3")
