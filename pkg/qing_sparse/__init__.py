# -*- coding: utf-8 -*-
"""
QING-SparseFFN
门控FFN的ReLU激活稀疏化工具包：激活替换、渐进式L1稀疏正则、激活阈值平移、
稀疏度度量、激活预测器与CPU稀疏算子
"""

import importlib
import inspect
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

__version__ = "1.0.0"

logger = logging.getLogger(__name__)


def _discover_and_register_commands() -> Tuple[Dict[str, type], Dict[str, str]]:
    """
    自动发现并注册 commands 目录下的所有命令类
    优先使用模块的 COMMAND_CLASS_MAPPINGS，否则回退到按类属性检查
    """
    command_classes: Dict[str, type] = {}
    display_names: Dict[str, str] = {}

    commands_dir = Path(__file__).parent / "commands"
    if not commands_dir.exists():
        return command_classes, display_names

    for py_file in sorted(commands_dir.glob("*.py")):
        if py_file.name.startswith("__"):
            continue
        try:
            module = importlib.import_module(f".commands.{py_file.stem}", package=__package__)
        except ImportError as e:
            logger.warning("⚠ 跳过无法导入的命令模块 %s: %s", py_file.stem, e)
            continue

        module_classes = getattr(module, "COMMAND_CLASS_MAPPINGS", {})
        module_names = getattr(module, "COMMAND_DISPLAY_NAME_MAPPINGS", {})
        if module_classes:
            command_classes.update(module_classes)
            display_names.update(module_names)
            continue

        for name, obj in inspect.getmembers(module, inspect.isclass):
            if obj.__module__ != module.__name__:
                continue
            # 跳过标记为基类的类
            if getattr(obj, "_IS_BASE_CLASS", False) and "_IS_BASE_CLASS" in obj.__dict__:
                continue
            if hasattr(obj, "INPUT_TYPES") and hasattr(obj, "FUNCTION"):
                command_classes[name] = obj
                display_names[name] = module_names.get(name, name)

    return command_classes, display_names


_COMMANDS: Optional[Tuple[Dict[str, type], Dict[str, str]]] = None


def get_command_classes() -> Tuple[Dict[str, type], Dict[str, str]]:
    """获取 (命令类映射, 显示名称映射)，首次调用时发现"""
    global _COMMANDS
    if _COMMANDS is None:
        _COMMANDS = _discover_and_register_commands()
    return _COMMANDS


__all__ = ["__version__", "get_command_classes"]
