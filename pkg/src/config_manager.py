"""配置管理模块

管理模拟器的默认参数：ε、ε' 除数、成本模型、检查点策略与报告目录。
命令行参数覆盖配置文件，配置文件覆盖默认值。
"""

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from src.errors import InvalidArgumentError

# 默认配置
DEFAULT_CONFIG: Dict[str, Any] = {
    "epsilon": "1/4",
    "epsilon_prime_divisor": 8,
    "costs": ["constant:1", "linear:1", "sqrt:1", "seek:10,1"],
    "checkpoint_policy": "auto",
    "validate": False,
    "results_dir": None,
}

CHECKPOINT_POLICIES = ("auto", "trace")


@dataclass(frozen=True)
class RunSettings:
    """一次运行实际使用的参数"""

    epsilon: Fraction
    divisor: int
    costs: Tuple[str, ...]
    checkpoint_policy: str
    validate: bool
    results_dir: Optional[Path] = None

    @property
    def epsilon_prime(self) -> Fraction:
        return self.epsilon / self.divisor


def get_config_path(base_dir: Optional[Path] = None) -> Path:
    """获取配置文件路径

    Args:
        base_dir: 基础目录，默认为 ~/.realloc-sim

    Returns:
        配置文件路径
    """
    if base_dir is None:
        base_dir = Path.home() / ".realloc-sim"

    return base_dir / "config.json"


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """加载配置文件，缺失或损坏时回退到默认配置

    Args:
        config_path: 配置文件路径，默认为 ~/.realloc-sim/config.json

    Returns:
        配置字典
    """
    if config_path is None:
        config_path = get_config_path()

    if not config_path.exists():
        return dict(DEFAULT_CONFIG)

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = json.load(f)
            # 合并默认配置，确保所有字段都存在
            return {**DEFAULT_CONFIG, **config}
    except (json.JSONDecodeError, OSError):
        return dict(DEFAULT_CONFIG)


def save_config(
    config: Dict[str, Any],
    config_path: Optional[Path] = None,
) -> None:
    """保存配置文件

    Args:
        config: 配置字典
        config_path: 配置文件路径
    """
    if config_path is None:
        config_path = get_config_path()

    # 确保父目录存在
    config_path.parent.mkdir(parents=True, exist_ok=True)

    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, ensure_ascii=False)


def parse_epsilon(value: Any) -> Fraction:
    """把 "1/4"、"0.25" 或数字转成精确分数

    Raises:
        InvalidArgumentError: 无法解析
    """
    try:
        if isinstance(value, float):
            return Fraction(str(value))
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise InvalidArgumentError(f"无法解析 ε: {value!r}") from None


def validate_epsilon(epsilon: Fraction) -> Tuple[bool, Optional[str]]:
    """验证 ε 是否位于 (0, 1/2]

    Returns:
        (is_valid, error_message)
    """
    if not (0 < epsilon <= Fraction(1, 2)):
        return False, f"ε 必须位于 (0, 1/2]: {epsilon}"
    return True, None


def validate_config(config: Mapping[str, Any]) -> Tuple[bool, Optional[str]]:
    """验证配置字典

    Returns:
        (is_valid, error_message)
    """
    try:
        epsilon = parse_epsilon(config.get("epsilon"))
    except InvalidArgumentError as exc:
        return False, str(exc)
    ok, message = validate_epsilon(epsilon)
    if not ok:
        return False, message

    divisor = config.get("epsilon_prime_divisor")
    if isinstance(divisor, bool) or not isinstance(divisor, int) or divisor < 2:
        return False, f"epsilon_prime_divisor 必须是不小于 2 的整数: {divisor!r}"

    costs = config.get("costs")
    if not isinstance(costs, (list, tuple)) or not costs:
        return False, "costs 必须是非空列表"
    if not all(isinstance(c, str) and ":" in c for c in costs):
        return False, f"成本描述格式错误: {costs!r}"

    policy = config.get("checkpoint_policy")
    if policy not in CHECKPOINT_POLICIES:
        return False, f"未知的检查点策略: {policy!r}"

    return True, None


def resolve_settings(
    config: Mapping[str, Any],
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunSettings:
    """合并配置与命令行覆盖项（值为 None 表示未指定）

    Raises:
        InvalidArgumentError: 合并结果不合法
    """
    merged = dict(DEFAULT_CONFIG)
    merged.update(config)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    ok, message = validate_config(merged)
    if not ok:
        raise InvalidArgumentError(message)

    results_dir = merged.get("results_dir")
    return RunSettings(
        epsilon=parse_epsilon(merged["epsilon"]),
        divisor=int(merged["epsilon_prime_divisor"]),
        costs=tuple(merged["costs"]),
        checkpoint_policy=merged["checkpoint_policy"],
        validate=bool(merged["validate"]),
        results_dir=Path(results_dir).expanduser() if results_dir else None,
    )
