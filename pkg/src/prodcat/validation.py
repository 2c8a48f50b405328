"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Sequence


def check_fractions(fractions: Sequence[float], *, atol: float = 1e-9) -> tuple[float, ...]:
    """Validate split fractions: positive and summing to 1 within `atol`."""
    fracs = tuple(float(f) for f in fractions)
    if len(fracs) != 3:
        raise ValueError(f"expected 3 split fractions, got {len(fracs)}")
    if any(f <= 0 for f in fracs):
        raise ValueError(f"split fractions must be positive, got {fracs}")
    if abs(sum(fracs) - 1.0) > atol:
        raise ValueError(f"split fractions must sum to 1, got {fracs} (sum {sum(fracs)})")
    return fracs


def check_positive(value: int | float, name: str, *, minimum=1) -> None:
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")


def check_consistent_length(X, y) -> None:
    if len(X) != len(y):
        raise ValueError(f"X and y have inconsistent lengths: {len(X)} vs {len(y)}")


def check_product_fields(id, unstructured, structured, *, where: str = "product"):
    """Validate the raw fields of a product record.

    Returns the list of offending field names (empty when valid) so callers
    can either raise or report, e.g. the HTTP layer names bad fields in its
    validation response.
    """
    bad = []
    if not isinstance(id, str) or not id:
        bad.append("id")
    if not isinstance(unstructured, dict) or not all(
        isinstance(k, str) and k and isinstance(v, str) for k, v in unstructured.items()
    ):
        bad.append("unstructured")
    if not _valid_structured(structured):
        bad.append("structured")
    return bad


def _valid_structured(structured) -> bool:
    if not isinstance(structured, (list, tuple)):
        return False
    for pair in structured:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            return False
        name, value = pair
        if not isinstance(name, str) or not name or not isinstance(value, str):
            return False
    return True
