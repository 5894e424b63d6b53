# 工具函数
