# -*- coding: utf-8 -*-
"""
命令行入口
qing-sparse <train|compare|sweep-threshold|predictor|bench|pipeline|validate> [选项]
退出码：0 成功，2 配置校验失败，1 运行失败
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numba

from . import __version__, get_command_classes
from .core.errors import ConfigurationError, QingSparseError, StageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME_FAILURE = 1
EXIT_VALIDATION_FAILURE = 2

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _global_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("全局选项")
    group.add_argument("--seed", type=int, default=None, help="覆盖配置中的所有随机种子")
    group.add_argument("--out", type=Path, default=None, help="输出目录（bench 也接受 .csv 文件路径）")
    group.add_argument("--threads", type=int, default=1, help="稀疏算子线程数（默认单线程）")
    group.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别"
    )
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _global_parser()
    parser = argparse.ArgumentParser(
        prog="qing-sparse",
        description="🎨QING SparseFFN: 激活替换 / 渐进式L1正则 / 阈值平移 / 稀疏度度量 / 激活预测器 / 稀疏算子",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="<command>")
    subparsers.required = True

    command_classes, display_names = get_command_classes()
    for name, command_class in command_classes.items():
        sub = subparsers.add_parser(
            name,
            parents=[parent],
            help=display_names.get(name, name),
            description=(command_class.__doc__ or "").strip() or None,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        command_class.add_arguments(sub)
        sub.set_defaults(command_class=command_class)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def _set_threads(threads: int) -> None:
    if threads < 1:
        raise ConfigurationError(f"❌ --threads 必须 ≥ 1，实际 {threads}", [f"--threads: {threads}"])
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        _set_threads(args.threads)
        command = args.command_class()
        return getattr(command, command.FUNCTION)(args)
    except StageError as e:
        if isinstance(e.cause, ConfigurationError):
            _log_diagnostics(e.cause)
            return EXIT_VALIDATION_FAILURE
        logger.error("%s", e)
        return EXIT_RUNTIME_FAILURE
    except ConfigurationError as e:
        _log_diagnostics(e)
        return EXIT_VALIDATION_FAILURE
    except (QingSparseError, OSError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME_FAILURE
    except KeyboardInterrupt:
        logger.warning("⚠ 已中断")
        return EXIT_RUNTIME_FAILURE


def _log_diagnostics(error: ConfigurationError) -> None:
    logger.error("%s", error)
    message = str(error)
    for item in error.diagnostics:
        if item not in message:
            logger.error("  - %s", item)


if __name__ == "__main__":
    sys.exit(main())
