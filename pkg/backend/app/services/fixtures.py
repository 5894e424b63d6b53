"""
车辆交易示例数据
生成 customer / product / showroom / sales / stock 五张表，给 demo 与测试使用
"""
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd
import structlog

from app.services.text_analytics import DEFAULT_BRANDS

logger = structlog.get_logger(__name__)

_MODELS = ["Sedan", "Coupe", "Wagon", "Pickup", "Van", "Hatch"]
_CITIES = ["Montreal", "Toronto", "Vancouver", "Calgary", "Ottawa", "Quebec"]
_FIRST_NAMES = ["Alex", "Sam", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Jamie"]

# 品牌销量偏斜：越靠前越畅销
_POPULARITY = np.array([10, 9, 8, 7, 6, 5, 4, 3, 2, 1], dtype=float)


def car_trading_frames(seed: int = 7, sales_rows: int = 1000, customers: int = 200,
                       showrooms: int = 12, models_per_brand: int = 3) -> Dict[str, pd.DataFrame]:
    rng = np.random.default_rng(seed)

    products = []
    for b, brand in enumerate(DEFAULT_BRANDS):
        for m in range(models_per_brand):
            products.append({
                "product_id": str(len(products) + 1),
                "brand": brand,
                "model": f"{_MODELS[(b + m) % len(_MODELS)]} {m + 1}",
                "price": str(int(rng.integers(15, 90)) * 1000),
            })
    product = pd.DataFrame(products)

    customer = pd.DataFrame([
        {
            "customer_id": str(i),
            "name": f"{_FIRST_NAMES[i % len(_FIRST_NAMES)]} {i}",
            "city": _CITIES[int(rng.integers(len(_CITIES)))],
        }
        for i in range(1, customers + 1)
    ])

    showroom = pd.DataFrame([
        {"showroom_id": str(i), "name": f"Showroom {i}", "city": _CITIES[(i - 1) % len(_CITIES)]}
        for i in range(1, showrooms + 1)
    ])

    brand_p = _POPULARITY / _POPULARITY.sum()
    brand_idx = rng.choice(len(DEFAULT_BRANDS), size=sales_rows, p=brand_p)
    model_idx = rng.integers(models_per_brand, size=sales_rows)
    days = rng.integers(0, 365, size=sales_rows)
    base_day = np.datetime64("2018-01-01")
    sales = pd.DataFrame({
        "sale_id": [str(i) for i in range(1, sales_rows + 1)],
        "product_id": [str(int(b) * models_per_brand + int(m) + 1) for b, m in zip(brand_idx, model_idx)],
        "customer_id": [str(int(v)) for v in rng.integers(1, customers + 1, size=sales_rows)],
        "showroom_id": [str(int(v)) for v in rng.integers(1, showrooms + 1, size=sales_rows)],
        "quantity": [str(int(v)) for v in rng.integers(1, 4, size=sales_rows)],
        "sale_date": [str(base_day + int(d)) for d in days],
    })

    stock = pd.DataFrame([
        {"showroom_id": str(s), "product_id": str(p), "quantity": str(int(rng.integers(0, 20)))}
        for s in range(1, showrooms + 1)
        for p in range(1, len(products) + 1)
    ])

    return {"customer": customer, "product": product, "showroom": showroom,
            "sales": sales, "stock": stock}


def write_car_trading_fixtures(directory, seed: int = 7, sales_rows: int = 1000) -> Dict[str, Path]:
    """写出 <table>.csv，同一 seed 输出逐字节一致"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, frame in car_trading_frames(seed, sales_rows).items():
        path = directory / f"{name}.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        paths[name] = path
    logger.info("fixtures_written", directory=str(directory), seed=seed, sales_rows=sales_rows)
    return paths
