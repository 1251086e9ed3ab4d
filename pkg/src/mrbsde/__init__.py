"""Mean reflected BSDE solver with law-dependent drivers."""
