# -*- coding: utf-8 -*-
"""
Core 核心数值模块
"""
