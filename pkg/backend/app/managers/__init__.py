# 管理器
