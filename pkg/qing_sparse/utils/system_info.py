# -*- coding: utf-8 -*-
"""
运行环境信息
用于基准测试输出文件头与实验清单
"""

import os
import platform
import sys
from datetime import datetime
from typing import Any, Dict

import numba
import numpy as np
import scipy

# 可选依赖，如果不存在则使用基础功能
try:
    import psutil
    HAS_PSUTIL = True
except ImportError:
    HAS_PSUTIL = False


def get_system_info() -> Dict[str, Any]:
    """获取机器与运行时信息"""
    info: Dict[str, Any] = {
        "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "python_version": sys.version.split()[0],
        "platform": platform.platform(),
        "architecture": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count() or 0,
        "numba_threads": numba.get_num_threads(),
    }

    # 内存信息
    if HAS_PSUTIL:
        try:
            memory = psutil.virtual_memory()
            info["memory_total_mb"] = round(memory.total / 1024 / 1024)
            info["cpu_freq_mhz"] = round(psutil.cpu_freq().current) if psutil.cpu_freq() else 0
        except Exception:
            info["memory_total_mb"] = 0
            info["cpu_freq_mhz"] = 0
    else:
        info["memory_total_mb"] = 0
        info["cpu_freq_mhz"] = 0

    return info


def get_module_versions() -> Dict[str, str]:
    """依赖版本（写入实验清单）"""
    from .. import __version__

    return {
        "qing_sparse": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def format_header_lines(info: Dict[str, Any]) -> list:
    """转为CSV注释头行"""
    return [f"{key}: {value}" for key, value in info.items()]
