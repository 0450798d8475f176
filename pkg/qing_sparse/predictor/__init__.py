# -*- coding: utf-8 -*-
"""
Predictor 激活预测器模块
"""
