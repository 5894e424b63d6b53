# 数据湖命令行后端
