"""
命令模块：每个模块提供 register(subparsers) 与对应的 cmd_* 处理函数
"""
