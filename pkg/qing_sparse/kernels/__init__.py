# -*- coding: utf-8 -*-
"""
Kernels 稀疏算子与基准测试
"""
