from __future__ import annotations


class FeatureError(ValueError):
    """A feature could not be computed; the message names the feature."""


def require_area(mask, minimum: int, what: str) -> int:
    area = int(mask.sum())
    if area < minimum:
        raise FeatureError(f"{what}: mask area {area} < {minimum}")
    return area
