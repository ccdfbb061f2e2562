"""Report serialization: CSV tables, flat JSON summaries and key = value config files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError


def format_value(v) -> str:
    """Text form of one CSV cell; floats carry 17 significant digits."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, rows, columns=None) -> Path:
    """Write a list of dicts with a mandatory header row (RFC 4180 quoting)."""
    rows = list(rows)
    if columns is None:
        if not rows:
            raise ValidationError("cannot infer CSV columns from no rows")
        columns = list(rows[0].keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in columns])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def flatten(obj: dict, prefix: str = "") -> dict:
    """Nested dicts to one level with dotted keys."""
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = _plain(v)
    return out


def sanitize(obj: dict) -> dict:
    """Replace non-finite floats by ``null`` and add a ``<key>_status`` entry naming the value."""
    out = {}
    for k, v in flatten(obj).items():
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = None
            out[f"{k}_status"] = "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        elif isinstance(v, list) and any(isinstance(x, float) and not math.isfinite(x) for x in v):
            out[k] = [x if not (isinstance(x, float) and not math.isfinite(x)) else None for x in v]
            out[f"{k}_status"] = "contains non-finite entries"
        else:
            out[k] = v
    return out


def to_json(obj: dict) -> str:
    return json.dumps(sanitize(obj), indent=1, allow_nan=False) + "\n"


def write_json(path, obj: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ValidationError(f"{path}:{n}: empty key")
        out[k.replace("-", "_")] = v
    return out
