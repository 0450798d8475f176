# -*- coding: utf-8 -*-
"""
Utils 工具模块
"""
