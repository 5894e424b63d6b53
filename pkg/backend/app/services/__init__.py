# 业务服务
