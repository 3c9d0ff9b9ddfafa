from __future__ import annotations

import csv
import math
from pathlib import Path

from ..dynamics import PricePath
from ..errors import ParseError, ValidationError


def ingest_price_csv(file) -> PricePath:
    """Read a ``t,price`` CSV into a PricePath tagged ``external``.

    Raises ParseError for malformed rows and ValidationError for
    non-increasing times or non-positive prices, both with the 1-based line.
    """
    path = Path(file)
    times, prices = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        if [h.strip() for h in header] != ["t", "price"]:
            raise ParseError(f"expected header 't,price', got {','.join(header)!r}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=line)
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from exc
            if not (math.isfinite(t) and math.isfinite(p)):
                raise ParseError("non-finite value", line=line)
            if p <= 0:
                raise ValidationError(f"price must be positive, got {row[1].strip()}", line=line)
            if times and t <= times[-1]:
                raise ValidationError(f"time {row[0].strip()} does not increase", line=line)
            times.append(t)
            prices.append(p)
    if len(prices) < 2:
        raise ValidationError("need at least two price points")
    return PricePath(times, prices, seed=None, scheme="external", meta={"source": str(path)})
