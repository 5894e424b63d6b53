# 数据湖后端包
