"""polyred — 按子群的 Lie–Poisson 约化与数值诊断"""

__version__ = "0.3.0"
