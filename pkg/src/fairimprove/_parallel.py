"""Ordered thread-pool map; results never depend on the worker count."""

from concurrent.futures import ThreadPoolExecutor


def pool_map(fn, items, threads=1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
