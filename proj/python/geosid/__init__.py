"""Python access to the geosid native core."""

from ._core import (  # noqa: F401
    GeosidError,
    geohash_encode,
    haversine_km,
    kmeans,
    ndcg_at_k,
    recall_at_k,
    run_stage,
)
