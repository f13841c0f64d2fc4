"""存储管理模块

轨迹文本的解析与序列化、轨迹/布局文件读写、运行报告归档和索引。
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from src.errors import InvalidModelError, TraceParseError

TRACE_VERSION = 1

_NAME_RE = re.compile(r"^[^\s#]+$")


@dataclass(frozen=True)
class TraceOp:
    """一条轨迹操作：I 插入、D 删除、C 检查点、P 初始放置"""

    kind: str
    name: Optional[str] = None
    length: Optional[int] = None
    start: Optional[int] = None

    def to_line(self) -> str:
        if self.kind == "I":
            return f"I {self.name} {self.length}"
        if self.kind == "D":
            return f"D {self.name}"
        if self.kind == "P":
            return f"P {self.name} {self.start}"
        return "C"


@dataclass
class Trace:
    ops: List[TraceOp] = field(default_factory=list)
    header: Dict[str, str] = field(default_factory=dict)
    version: int = TRACE_VERSION

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def updates(self) -> List[TraceOp]:
        return [op for op in self.ops if op.kind in ("I", "D")]

    def placements(self) -> Dict[str, int]:
        return {op.name: op.start for op in self.ops if op.kind == "P"}


def _parse_int(token: str, line_no: int, line: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise TraceParseError(line_no, f"{what}不是整数: {token!r}", line) from None


def _parse_header(body: str, line_no: int, line: str) -> Dict[str, str]:
    header: Dict[str, str] = {}
    for token in body.split():
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise TraceParseError(line_no, f"头部字段格式错误: {token!r}", line)
        header[key] = value
    return header


def parse_trace(text: str) -> Trace:
    """逐行解析轨迹文本

    Args:
        text: 轨迹文本

    Returns:
        Trace

    Raises:
        TraceParseError: 行格式错误、重复插入、删除未知对象、长度非正
    """
    trace = Trace()
    active: Dict[str, int] = {}
    placed: set = set()

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#%"):
            trace.header.update(_parse_header(line[2:], line_no, raw_line))
            continue
        if line.startswith("#"):
            continue

        tokens = line.split()
        kind = tokens[0]
        if kind == "I":
            if len(tokens) != 3:
                raise TraceParseError(line_no, "插入格式应为 'I name length'", raw_line)
            name = tokens[1]
            length = _parse_int(tokens[2], line_no, raw_line, "长度")
            if not _NAME_RE.match(name):
                raise TraceParseError(line_no, f"非法名称: {name!r}", raw_line)
            if length < 1:
                raise TraceParseError(line_no, f"长度必须为正: {length}", raw_line)
            if name in active:
                raise TraceParseError(line_no, f"重复插入: {name}", raw_line)
            active[name] = length
            trace.ops.append(TraceOp("I", name, length))
        elif kind == "D":
            if len(tokens) != 2:
                raise TraceParseError(line_no, "删除格式应为 'D name'", raw_line)
            name = tokens[1]
            if name not in active:
                raise TraceParseError(line_no, f"删除未知对象: {name}", raw_line)
            del active[name]
            placed.discard(name)
            trace.ops.append(TraceOp("D", name))
        elif kind == "C":
            if len(tokens) != 1:
                raise TraceParseError(line_no, "检查点行只能是 'C'", raw_line)
            trace.ops.append(TraceOp("C"))
        elif kind == "P":
            if len(tokens) != 3:
                raise TraceParseError(line_no, "放置格式应为 'P name start'", raw_line)
            name = tokens[1]
            start = _parse_int(tokens[2], line_no, raw_line, "起点")
            if name not in active:
                raise TraceParseError(line_no, f"放置未插入的对象: {name}", raw_line)
            if name in placed:
                raise TraceParseError(line_no, f"重复放置: {name}", raw_line)
            if start < 0:
                raise TraceParseError(line_no, f"起点不能为负: {start}", raw_line)
            placed.add(name)
            trace.ops.append(TraceOp("P", name, active[name], start))
        else:
            raise TraceParseError(line_no, f"未知操作: {kind!r}", raw_line)

    version = trace.header.get("version")
    if version is not None:
        trace.version = _parse_int(version, 1, "", "版本号")
    return trace


def serialize_trace(trace: Trace) -> str:
    lines: List[str] = []
    header = {"version": str(trace.version), **{k: v for k, v in trace.header.items() if k != "version"}}
    lines.append("#% " + " ".join(f"{k}={v}" for k, v in header.items()))
    lines.extend(op.to_line() for op in trace.ops)
    return "\n".join(lines) + "\n"


def load_trace(path: Path) -> Trace:
    return parse_trace(Path(path).read_text(encoding="utf-8"))


def save_trace(trace: Trace, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_trace(trace), encoding="utf-8")
    return path


def layout_from_trace(trace: Trace) -> List[Tuple[str, int, Tuple[int, int]]]:
    """从放置扩展中取出初始布局 (名称, 长度, 区间)

    Raises:
        TraceParseError: 有活动对象缺少 P 行
    """
    active: Dict[str, int] = {}
    for op in trace.ops:
        if op.kind == "I":
            active[op.name] = op.length
        elif op.kind == "D":
            active.pop(op.name, None)
    placements = trace.placements()
    missing = [name for name in active if name not in placements]
    if missing:
        raise TraceParseError(0, f"对象缺少放置行: {', '.join(missing[:5])}")
    return [
        (name, length, (placements[name], placements[name] + length))
        for name, length in active.items()
    ]


def load_cost_table(path: Path) -> List[Tuple[int, Fraction]]:
    """读取成本表：每行 'length cost'，# 开头为注释"""
    points: List[Tuple[int, Fraction]] = []
    try:
        content = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidModelError(f"无法读取成本表 {path}: {exc}") from exc
    for line_no, raw_line in enumerate(content.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidModelError(f"成本表第 {line_no} 行格式错误: {raw_line!r}")
        try:
            points.append((int(parts[0]), Fraction(parts[1])))
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidModelError(f"成本表第 {line_no} 行无法解析: {raw_line!r}") from exc
    return points


# ==================== 运行报告归档 ====================


def get_results_dir(base_dir: Optional[Path] = None) -> Path:
    """获取报告目录

    Args:
        base_dir: 指定目录，默认为 ~/.realloc-sim/results

    Returns:
        报告目录路径
    """
    if base_dir is not None:
        return Path(base_dir)
    return Path.home() / ".realloc-sim" / "results"


def get_report_path(name: str, base_dir: Optional[Path] = None) -> Path:
    return get_results_dir(base_dir) / f"{name}.txt"


def save_run_report(content: str, name: str, base_dir: Optional[Path] = None) -> Path:
    """保存运行报告（同名覆盖）

    Returns:
        保存的文件路径
    """
    path = get_report_path(name, base_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content if content.endswith("\n") else content + "\n", encoding="utf-8")
    return path


def _read_fields(path: Path, keys: Tuple[str, ...]) -> Dict[str, str]:
    fields: Dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(":")
        if sep and key.strip() in keys:
            fields[key.strip()] = value.strip()
    return fields


def list_run_reports(base_dir: Optional[Path] = None) -> List[Dict[str, Any]]:
    """列出所有运行报告，按文件名排序

    Returns:
        报告列表，每项包含 name, path, mode, epsilon
    """
    results_dir = get_results_dir(base_dir)
    if not results_dir.exists():
        return []

    reports = []
    for report_file in sorted(results_dir.glob("*.txt")):
        fields = _read_fields(report_file, ("mode", "epsilon"))
        reports.append({
            "name": report_file.stem,
            "path": report_file,
            "filename": report_file.name,
            "mode": fields.get("mode", "?"),
            "epsilon": fields.get("epsilon", "?"),
        })
    return reports


def update_index(base_dir: Optional[Path] = None) -> Path:
    """按模式分组重写 index.md

    Returns:
        索引文件路径
    """
    results_dir = get_results_dir(base_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    reports = list_run_reports(base_dir)

    by_mode: Dict[str, List[Dict[str, Any]]] = {}
    for report in reports:
        by_mode.setdefault(report["mode"], []).append(report)

    lines = ["# 运行报告索引\n"]
    for mode in sorted(by_mode):
        lines.append(f"\n## {mode}\n")
        for report in by_mode[mode]:
            lines.append(f"- [{report['name']}](./{report['filename']}) ε={report['epsilon']}")
    if not reports:
        lines.append("\n暂无运行报告。\n")

    index_path = results_dir / "index.md"
    index_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return index_path


def delete_run_report(name: str, base_dir: Optional[Path] = None) -> bool:
    path = get_report_path(name, base_dir)
    if not path.exists():
        return False
    path.unlink()
    return True
