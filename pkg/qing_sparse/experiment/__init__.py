# -*- coding: utf-8 -*-
"""
Experiment 端到端实验流水线
"""
