"""Run configuration dataclasses (JSON file + flag overrides)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .util import DataError


@dataclass
class AnalysisParams:
    utc_offset_minutes: int = 120
    visit_gap_days: int = 2
    od_window_minutes: int = 60
    od_max_gap_minutes: int = 60
    snap_max_m: float = 2000.0
    poi_radius_m: float = 300.0
    day_hours: tuple = (8, 20)
    home_country: str = "AD"

    def validate(self):
        if self.visit_gap_days <= 0 or self.od_window_minutes <= 0 \
                or self.od_max_gap_minutes <= 0 or self.snap_max_m <= 0 \
                or self.poi_radius_m <= 0:
            raise DataError("analysis parameters must be positive")
        lo, hi = self.day_hours
        if not (0 <= lo < hi <= 24):
            raise DataError(f"bad day_hours {self.day_hours!r}")
        if len(self.home_country) != 2 or not self.home_country.isupper():
            raise DataError(f"bad home_country {self.home_country!r}")


_PATH_KEYS = ("cdr", "towers", "roads_nodes", "roads_edges", "pois", "counts", "tac_prices")


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)  # logical name -> file path
    params: AnalysisParams = field(default_factory=AnalysisParams)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                obj = json.load(f)
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"bad config JSON: {e}", path=path) from None
        base = os.path.dirname(os.path.abspath(path))
        paths = {}
        for key in _PATH_KEYS:
            if key in obj:
                p = obj[key]
                paths[key] = p if os.path.isabs(p) else os.path.join(base, p)
        params = AnalysisParams()
        param_names = {f.name for f in fields(AnalysisParams)}
        for key, value in obj.items():
            if key in param_names:
                if key == "day_hours":
                    value = tuple(value)
                setattr(params, key, value)
            elif key not in _PATH_KEYS:
                raise DataError(f"unknown config key {key!r}", path=path)
        params.validate()
        return cls(paths=paths, params=params)

    def require(self, *keys):
        for key in keys:
            if key not in self.paths:
                raise DataError(f"config is missing the {key!r} path")
            if not os.path.exists(self.paths[key]):
                raise DataError(f"missing file: {self.paths[key]}")
        return [self.paths[k] for k in keys]
