# -*- coding: utf-8 -*-
"""
Commands 命令模块
每个文件导出 COMMAND_CLASS_MAPPINGS，由 qing_sparse.get_command_classes() 自动发现
"""
