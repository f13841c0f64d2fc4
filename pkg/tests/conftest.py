"""Pytest 配置和共享 fixtures"""

import json
import random
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict

import pytest

from src.storage import Trace, TraceOp, parse_trace


@pytest.fixture
def temp_dir():
    """创建临时目录"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def half() -> Fraction:
    """ε' = 1/2，缓冲段最大，便于手算"""
    return Fraction(1, 2)


@pytest.fixture
def sample_trace_text() -> str:
    """小型轨迹文本"""
    return """\
#% version=1
#% kind=handmade
# 注释行
I a 4
I b 3
I c 1
D b
I d 7
C
D a
"""


@pytest.fixture
def sample_trace(sample_trace_text) -> Trace:
    """解析后的小型轨迹"""
    return parse_trace(sample_trace_text)


def make_random_trace(n: int, delta: int, seed: int, delete_prob: float = 0.4) -> Trace:
    """确定性的随机插入/删除轨迹"""
    rng = random.Random(seed)
    ops = []
    active = []
    for i in range(n):
        if active and rng.random() < delete_prob:
            name = active.pop(rng.randrange(len(active)))
            ops.append(TraceOp("D", name))
        else:
            name = f"x{i}"
            active.append(name)
            ops.append(TraceOp("I", name, rng.randint(1, delta)))
    return Trace(ops=ops)


@pytest.fixture
def random_trace() -> Trace:
    """300 条操作的随机轨迹，Δ <= 32"""
    return make_random_trace(300, 32, seed=11)


@pytest.fixture
def sample_config() -> Dict[str, Any]:
    """模拟配置数据"""
    return {
        "epsilon": "1/8",
        "epsilon_prime_divisor": 4,
        "costs": ["linear:1"],
        "checkpoint_policy": "auto",
        "validate": True,
    }


@pytest.fixture
def mock_config_file(temp_dir, sample_config):
    """创建模拟配置文件"""
    config_path = temp_dir / "config.json"
    config_path.write_text(json.dumps(sample_config, indent=2))
    return config_path
