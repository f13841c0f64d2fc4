"""命令行入口

子命令：
- run       重放轨迹，输出运行报告
- generate  生成工作负载轨迹
- defrag    对带放置行的轨迹做整理
- sweep     参数网格扫描

退出码：0 正常，1 用法错误，2 校验失败，3 轨迹解析失败。
"""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src import __version__
from src.config_manager import load_config, parse_epsilon, resolve_settings, validate_epsilon
from src.defrag import DefragInput, DefragObject, defragment
from src.errors import (
    InternalInvariantError,
    InvalidArgumentError,
    InvalidModelError,
    ObjectNotFoundError,
    TraceParseError,
)
from src.harness import MODES, failed_cells, models_from_specs, run, summarize_sweep, sweep, sweep_cells
from src.report_generator import render_defrag_report, render_run_report, render_sweep_summary
from src.storage import (
    layout_from_trace,
    parse_trace,
    save_run_report,
    serialize_trace,
    update_index,
)
from src.workloads import WORKLOAD_KINDS, generate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERDICT = 2
EXIT_PARSE = 3


class _ArgumentParser(argparse.ArgumentParser):
    """用法错误统一以退出码 1 结束（2 留给校验失败）"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: 错误: {message}\n")


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).expanduser().read_text(encoding="utf-8")


def _write_output(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    target = Path(path).expanduser()
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info("已写入 %s", target)


def _parse_param(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _collect_params(pairs: Sequence[str]) -> Dict[str, Any]:
    params: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise InvalidArgumentError(f"参数格式应为 key=value: {pair!r}")
        params[key.strip()] = _parse_param(value.strip())
    return params


def _settings(args: argparse.Namespace, epsilon: Optional[str] = None):
    config_path = Path(args.config).expanduser() if args.config else None
    overrides = {
        "epsilon": epsilon,
        "epsilon_prime_divisor": args.epsilon_prime_divisor,
        "costs": args.cost or None,
        "checkpoint_policy": getattr(args, "checkpoint_policy", None),
        "validate": True if getattr(args, "validate", False) else None,
        "results_dir": getattr(args, "results_dir", None),
    }
    return resolve_settings(load_config(config_path), overrides)


# ==================== 子命令 ====================


def cmd_run(args: argparse.Namespace) -> int:
    settings = _settings(args, args.epsilon)
    trace = parse_trace(_read_text(args.trace))
    report = run(
        trace,
        mode=args.mode,
        epsilon=settings.epsilon,
        models=models_from_specs(settings.costs),
        validate=settings.validate,
        divisor=settings.divisor,
        checkpoint_policy=settings.checkpoint_policy,
    )
    text = render_run_report(report)
    _write_output(text, args.report)
    if settings.results_dir is not None:
        name = f"{Path(args.trace).stem}__{args.mode.replace(':', '-')}"
        save_run_report(text, name, settings.results_dir)
        update_index(settings.results_dir)

    if report.verdicts:
        for verdict in report.verdicts[:10]:
            print(verdict.describe(), file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    params = _collect_params(args.param)
    if args.delta is not None:
        params["delta"] = args.delta
    if args.n is not None:
        params["n"] = args.n
    trace = generate(args.kind, params, seed=args.seed, checkpoint_every=args.checkpoint_every)
    _write_output(serialize_trace(trace), args.output)
    return EXIT_OK


def cmd_defrag(args: argparse.Namespace) -> int:
    settings = _settings(args, args.epsilon)
    trace = parse_trace(_read_text(args.trace))
    objects = [
        DefragObject(name, length, interval)
        for name, length, interval in layout_from_trace(trace)
    ]
    result = defragment(DefragInput(objects, epsilon=settings.epsilon, divisor=settings.divisor))
    _write_output(render_defrag_report(result), args.report)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings(args)
    epsilons: List[Fraction] = []
    for raw in args.epsilon or [str(settings.epsilon)]:
        epsilon = parse_epsilon(raw)
        ok, message = validate_epsilon(epsilon)
        if not ok:
            raise InvalidArgumentError(message)
        epsilons.append(epsilon)
    for mode in args.mode or []:
        if mode not in MODES:
            raise InvalidArgumentError(f"未知的模式: {mode}")

    cells = sweep_cells(
        modes=args.mode or ["amortized"],
        epsilons=epsilons,
        kinds=args.kind or ["uniform-random"],
        deltas=args.delta or [64],
        seeds=args.seed or [0],
        n=args.n or 0,
    )
    logger.info("扫描 %d 个单元", len(cells))
    results = sweep(
        cells,
        cost_specs=settings.costs,
        divisor=settings.divisor,
        validate=settings.validate,
        workers=args.workers,
    )
    summary = render_sweep_summary(results, summarize_sweep(results))
    _write_output(summary, args.report)

    if settings.results_dir is not None:
        for cell, report in results:
            save_run_report(render_run_report(report), cell.key, settings.results_dir)
        index = update_index(settings.results_dir)
        logger.info("报告已归档到 %s", index.parent)

    failed = failed_cells(results)
    for cell, report in failed:
        print(f"{cell.key}: {report.verdicts[0].describe()}", file=sys.stderr)
    return EXIT_VERDICT if failed else EXIT_OK


# ==================== 参数解析 ====================


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="realloc-sim",
        description="成本无关的存储重分配模拟器",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v 输出 INFO，-vv 输出 DEBUG")
    parser.add_argument("--config", help="配置文件路径（默认 ~/.realloc-sim/config.json）")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epsilon-prime-divisor", type=int, help="ε' = ε / divisor，默认 8")
        p.add_argument("--cost", action="append", help="成本模型，可重复：constant:1 linear:1 sqrt:1 seek:a,b table:path")

    p_run = sub.add_parser("run", help="重放轨迹")
    p_run.add_argument("--trace", required=True, help="轨迹文件，- 表示标准输入")
    p_run.add_argument("--mode", default="amortized", choices=MODES)
    p_run.add_argument("--epsilon", help="ε，如 1/4")
    p_run.add_argument("--validate", action="store_true", help="挂上独立校验器")
    p_run.add_argument("--checkpoint-policy", choices=("auto", "trace"))
    p_run.add_argument("--report", help="报告输出路径，默认标准输出")
    p_run.add_argument("--results-dir", help="同时归档到该目录")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("generate", help="生成工作负载轨迹")
    p_gen.add_argument("--kind", required=True, choices=WORKLOAD_KINDS)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--delta", type=int)
    p_gen.add_argument("--n", type=int)
    p_gen.add_argument("--param", action="append", default=[], help="其他参数 key=value，可重复")
    p_gen.add_argument("--checkpoint-every", type=int, default=0, help="每隔多少条更新插入一次 C")
    p_gen.add_argument("--output", "-o", help="输出路径，默认标准输出")
    p_gen.set_defaults(func=cmd_generate)

    p_defrag = sub.add_parser("defrag", help="整理带放置行的布局")
    p_defrag.add_argument("--trace", required=True, help="含 P 行的轨迹文件")
    p_defrag.add_argument("--epsilon", help="ε，如 1/4")
    p_defrag.add_argument("--report", help="报告输出路径，默认标准输出")
    add_common(p_defrag)
    p_defrag.set_defaults(func=cmd_defrag)

    p_sweep = sub.add_parser("sweep", help="参数网格扫描")
    p_sweep.add_argument("--mode", action="append", help="可重复")
    p_sweep.add_argument("--epsilon", action="append", help="可重复")
    p_sweep.add_argument("--kind", action="append", choices=WORKLOAD_KINDS, help="可重复")
    p_sweep.add_argument("--delta", action="append", type=int, help="可重复")
    p_sweep.add_argument("--seed", action="append", type=int, help="可重复")
    p_sweep.add_argument("--n", type=int, help="每个单元的操作数")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--validate", action="store_true")
    p_sweep.add_argument("--report", help="汇总表输出路径，默认标准输出")
    p_sweep.add_argument("--results-dir", help="逐单元归档报告的目录")
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    try:
        return args.func(args)
    except TraceParseError as exc:
        print(f"轨迹解析失败: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InvalidArgumentError, InvalidModelError, ObjectNotFoundError) as exc:
        print(f"错误: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InternalInvariantError as exc:
        logger.exception("内部不变量被破坏")
        print(f"内部不变量被破坏: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except OSError as exc:
        print(f"文件读写失败: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
