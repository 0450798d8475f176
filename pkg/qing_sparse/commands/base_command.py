# -*- coding: utf-8 -*-
"""
命令基础框架
每个命令类用 INPUT_TYPES 声明参数，由 CLI 统一转换为 argparse 子命令
命令文件导出 COMMAND_CLASS_MAPPINGS / COMMAND_DISPLAY_NAME_MAPPINGS，由包入口自动发现
"""

import argparse
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)

# INPUT_TYPES 类型到 argparse 参数的映射
_TYPE_CONVERTERS = {
    "PATH": Path,
    "INT": int,
    "FLOAT": float,
    "STRING": str,
}

# train / pipeline 输出目录中的最终模型清单
MODEL_MANIFEST = "model_final.json"


def parse_float_list(text: str) -> List[float]:
    """解析逗号分隔的浮点数列表，如 "0.0,0.5,0.9" """
    try:
        return [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无法解析为浮点数列表: '{text}'")


class BaseCommand(ABC):
    """命令抽象基类"""
    _IS_BASE_CLASS = True

    FUNCTION = "execute"
    CATEGORY = "🎨QING/SparseFFN"

    @classmethod
    @abstractmethod
    def INPUT_TYPES(cls) -> Dict[str, Dict[str, Tuple[str, Dict[str, Any]]]]:
        """{"positional": {...}, "required": {名称: (类型, 选项)}, "optional": {...}}"""
        pass

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        """按 INPUT_TYPES 注册命令行参数，positional 组按声明顺序注册为位置参数"""
        spec = cls.INPUT_TYPES()
        for name, (kind, options) in spec.get("positional", {}).items():
            positional: Dict[str, Any] = {"help": options.get("help"), "type": _TYPE_CONVERTERS[kind]}
            if "choices" in options:
                positional["choices"] = options["choices"]
            parser.add_argument(name, **positional)
        for group, required in (("required", True), ("optional", False)):
            for name, (kind, options) in spec.get(group, {}).items():
                flag = "--" + name.replace("_", "-")
                kwargs: Dict[str, Any] = {"dest": name, "help": options.get("help")}
                if kind == "BOOLEAN":
                    kwargs["action"] = "store_true"
                elif kind == "PATHS":
                    kwargs["type"] = Path
                    kwargs["nargs"] = "+"
                elif kind == "FLOATS":
                    kwargs["type"] = parse_float_list
                else:
                    kwargs["type"] = _TYPE_CONVERTERS[kind]
                if "choices" in options:
                    kwargs["choices"] = options["choices"]
                if "default" in options:
                    kwargs["default"] = options["default"]
                if required:
                    kwargs["required"] = True
                parser.add_argument(flag, **kwargs)

    @abstractmethod
    def execute(self, args: argparse.Namespace) -> int:
        """执行命令，返回退出码"""
        pass

    @staticmethod
    def model_path(path: Path) -> Path:
        """--model 可以是模型清单文件，也可以是 train / pipeline 的输出目录"""
        path = Path(path)
        return path / MODEL_MANIFEST if path.is_dir() else path

    @staticmethod
    def out_dir(args: argparse.Namespace, default: str) -> Path:
        out = Path(args.out) if getattr(args, "out", None) else Path("runs") / default
        out.mkdir(parents=True, exist_ok=True)
        return out

    @staticmethod
    def report(lines: List[str], stream: Optional[Any] = None) -> None:
        """输出给用户的结果行（不经过日志）"""
        text = "\n".join(lines)
        if stream is None:
            print(text)
        else:
            stream.write(text + "\n")
