"""报告生成模块

把运行结果渲染成固定键序的扁平键值文本，把参数扫描渲染成 Markdown 表格。
"""

from __future__ import annotations

from fractions import Fraction
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Sequence, Tuple

from jinja2 import Environment, StrictUndefined

if TYPE_CHECKING:
    from src.defrag import DefragResult
    from src.harness import RunReport, SweepCell

_env = Environment(
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    undefined=StrictUndefined,
)

RUN_REPORT_TEMPLATE = _env.from_string(
    """\
{% for key, value in fields %}
{{ key }}: {{ value }}
{% endfor %}
"""
)

SWEEP_TEMPLATE = _env.from_string(
    """\
# 参数扫描结果

| mode | ε | workload | Δ | seed | max extent ratio | max moved/op |{% for label in models %} b[{{ label }}] |{% endfor %}

|---|---|---|---|---|---|---|{% for label in models %}---|{% endfor %}

{% for row in rows %}
| {{ row.mode }} | {{ row.epsilon }} | {{ row.kind }} | {{ row.delta }} | {{ row.seed }} | {{ row.extent_ratio }} | {{ row.moved }} |{% for b in row.b_ratios %} {{ b }} |{% endfor %}

{% endfor %}
{% if slopes %}

## b-ratio 随 lg Δ 的斜率

| mode | model | slope |
|---|---|---|
{% for mode, label, slope in slopes %}
| {{ mode }} | {{ label }} | {{ slope }} |
{% endfor %}
{% endif %}
"""
)

DEFRAG_TEMPLATE = _env.from_string(
    """\
objects: {{ result.order | length }}
volume: {{ result.volume }}
crunch_offset: {{ result.crunch_offset }}
peak_extent: {{ result.peak_extent }}
moves: {{ result.moves }}
{% for phase, index in result.phase_boundaries.items() %}
phase.{{ phase }}: {{ index }}
{% endfor %}
{% for name in result.order %}
{{ name }}: {{ result.final_layout[name][0] }}
{% endfor %}
"""
)


def format_ratio(value: Any) -> str:
    """比值统一保留 6 位小数"""
    return f"{float(Fraction(value)):.6f}"


def run_report_fields(report: "RunReport") -> List[Tuple[str, str]]:
    """按固定顺序列出报告字段"""
    fields: List[Tuple[str, str]] = [
        ("mode", report.mode),
        ("epsilon", str(report.epsilon)),
        ("epsilon_prime", str(report.epsilon_prime)),
        ("checkpoint_policy", report.checkpoint_policy),
        ("ops", str(report.ops)),
        ("inserts", str(report.inserts)),
        ("deletes", str(report.deletes)),
        ("checkpoint_ops", str(report.checkpoint_ops)),
        ("delta", str(report.delta)),
        ("final_volume", str(report.final_volume)),
        ("final_extent", str(report.final_extent)),
        ("max_extent_ratio", format_ratio(report.max_extent_ratio)),
        ("max_transient_ratio", format_ratio(report.max_transient_ratio)),
        ("flushes", str(report.flushes)),
        ("checkpoints_total", str(report.checkpoints_total)),
        ("settle_checkpoints", str(report.settle_checkpoints)),
        ("settled_ops", str(report.settled_ops)),
        ("max_checkpoints_per_op", str(report.max_checkpoints_per_op)),
        ("max_checkpoints_per_flush", str(report.max_checkpoints_per_flush)),
        ("max_moved_volume_per_op", str(report.max_moved_volume_per_op)),
        ("total_moved_volume", str(report.total_moved_volume)),
        ("event_digest", report.event_digest),
    ]
    for summary in report.models:
        prefix = f"model.{summary.label}"
        fields.extend([
            (f"{prefix}.allocation", format_ratio(summary.allocation)),
            (f"{prefix}.reallocation", format_ratio(summary.reallocation)),
            (f"{prefix}.b_ratio", format_ratio(summary.b_ratio)),
            (f"{prefix}.max_op_cost", format_ratio(summary.max_op_cost)),
        ])
    fields.append(("verdicts", str(len(report.verdicts))))
    for i, verdict in enumerate(report.verdicts):
        fields.append((f"verdict.{i}", verdict.describe()))
    fields.append(("wall_time_s", f"{report.wall_time_s:.3f}"))
    return fields


def render_run_report(report: "RunReport") -> str:
    return RUN_REPORT_TEMPLATE.render(fields=run_report_fields(report))


def parse_run_report(text: str) -> Dict[str, str]:
    """把扁平键值文本读回字典（保持键序）"""
    fields: Dict[str, str] = {}
    for line in text.splitlines():
        key, sep, value = line.partition(": ")
        if sep:
            fields[key.strip()] = value.strip()
    return fields


def render_sweep_summary(
    results: Sequence[Tuple["SweepCell", "RunReport"]],
    slopes: Mapping[Tuple[str, str], float],
) -> str:
    """渲染扫描表格；slopes 以 (mode, 模型标签) 为键"""
    models: List[str] = []
    for _, report in results:
        for summary in report.models:
            if summary.label not in models:
                models.append(summary.label)

    rows = []
    for cell, report in results:
        by_label = {s.label: s for s in report.models}
        rows.append({
            "mode": cell.mode,
            "epsilon": str(cell.epsilon),
            "kind": cell.kind,
            "delta": cell.delta,
            "seed": cell.seed,
            "extent_ratio": format_ratio(report.max_extent_ratio),
            "moved": report.max_moved_volume_per_op,
            "b_ratios": [
                format_ratio(by_label[label].b_ratio) if label in by_label else "-"
                for label in models
            ],
        })
    slope_rows = [(mode, label, f"{slope:.4f}") for (mode, label), slope in sorted(slopes.items())]
    return SWEEP_TEMPLATE.render(models=models, rows=rows, slopes=slope_rows)


def render_defrag_report(result: "DefragResult") -> str:
    return DEFRAG_TEMPLATE.render(result=result)
