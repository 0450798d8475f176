# -*- coding: utf-8 -*-
"""
Training 训练模块
正则调度、稀疏度度量、合成任务、优化器、方法框架与训练器
"""
