"""realloc-sim - 成本无关的存储重分配模拟器"""

__version__ = "0.1.0"
