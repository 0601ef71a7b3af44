"""Shared helpers: strict timestamp handling, local-day arithmetic, distances, errors."""

from __future__ import annotations

import math
import os
import tempfile
from datetime import date, timedelta

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

SECONDS_PER_DAY = 86400


class DataError(Exception):
    """Malformed or inconsistent input data. Maps to CLI exit code 2."""

    def __init__(self, message, *, path=None, row=None):
        self.path = path
        self.row = row
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if row is not None:
            prefix += f"row {row}: "
        super().__init__(prefix + message)


def parse_iso_ts(s: str) -> int:
    """Parse a strict ``YYYY-MM-DDThh:mm:ssZ`` timestamp to epoch seconds (UTC).

    Raises ValueError("bad timestamp ...") on any deviation from the fixed
    20-character layout, including impossible calendar dates.
    """
    try:
        if len(s) != 20 or s[10] != "T" or s[19] != "Z" or s[13] != ":" or s[16] != ":":
            raise ValueError
        day = parse_iso_date(s[:10])
        h = int(s[11:13])
        m = int(s[14:16])
        sec = int(s[17:19])
        if h > 23 or m > 59 or sec > 59 or h < 0 or m < 0 or sec < 0:
            raise ValueError
    except ValueError:
        raise ValueError(f"bad timestamp {s!r}") from None
    return day * SECONDS_PER_DAY + h * 3600 + m * 60 + sec


def format_iso_ts(ts: int) -> str:
    day, rem = divmod(int(ts), SECONDS_PER_DAY)
    h, rem = divmod(rem, 3600)
    m, s = divmod(rem, 60)
    return f"{format_iso_date(day)}T{h:02d}:{m:02d}:{s:02d}Z"


def parse_iso_date(s: str) -> int:
    """Parse ``YYYY-MM-DD`` (``/`` separators accepted) to days since 1970-01-01."""
    s = s.replace("/", "-")
    if len(s) != 10 or s[4] != "-" or s[7] != "-":
        raise ValueError(f"bad date {s!r}")
    d = date(int(s[:4]), int(s[5:7]), int(s[8:10]))
    return d.toordinal() - _EPOCH_ORDINAL


def format_iso_date(day: int) -> str:
    return (date(1970, 1, 1) + timedelta(days=int(day))).isoformat()


def local_day(ts: int, utc_offset_minutes: int) -> int:
    """Local calendar day number (days since 1970-01-01 in local clock)."""
    return (ts + utc_offset_minutes * 60) // SECONDS_PER_DAY


def local_hour_index(ts: int, utc_offset_minutes: int) -> int:
    """Absolute local hour slot; two instants share it iff in the same local clock hour."""
    return (ts + utc_offset_minutes * 60) // 3600


EARTH_RADIUS_M = 6371008.8


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between two WGS84 points."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def atomic_write_bytes(path, data: bytes):
    """Write via temp-then-rename so readers never observe a truncated file."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))
