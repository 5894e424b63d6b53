# 核心配置
