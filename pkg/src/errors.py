"""错误类型模块

分配器、成本模型、轨迹解析共用的异常层次。
"""

from typing import Optional


class ReallocError(Exception):
    """所有重分配相关错误的基类"""


class InvalidArgumentError(ReallocError, ValueError):
    """参数非法：长度非正、名称重复、ε 越界等"""


class ObjectNotFoundError(ReallocError, KeyError):
    """删除或查询了不存在的对象"""

    def __str__(self) -> str:
        # KeyError 默认会给消息加引号
        return str(self.args[0]) if self.args else ""


class InvalidModelError(ReallocError, ValueError):
    """成本模型不满足单调性/次可加性，或描述串格式错误"""


class InternalInvariantError(ReallocError, AssertionError):
    """内部不变量被破坏（属于实现缺陷，不可恢复）"""


class TraceParseError(ReallocError):
    """轨迹文本解析失败，携带出错行号"""

    def __init__(self, line_no: int, message: str, line: Optional[str] = None):
        self.line_no = line_no
        self.message = message
        self.line = line
        super().__init__(f"第 {line_no} 行: {message}")
