"""Pipeline configuration bundle and TOML/JSON config files."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .curation import MIN_CLASS_SIZE
from .detector import ScaleSpaceParams
from .errors import InputError
from .knn import IndexParams
from .pairwise import MatchParams


@dataclass(frozen=True)
class PipelineConfig:
    detector: ScaleSpaceParams = field(default_factory=ScaleSpaceParams)
    index: IndexParams = field(default_factory=IndexParams)
    match: MatchParams = field(default_factory=MatchParams)
    z_threshold: float = 5.0
    min_class_size: int = MIN_CLASS_SIZE
    threads: int = 1
    seed: Optional[int] = None

    def echo(self) -> dict:
        """The config block embedded in reports (includes the log base)."""
        return {
            "log_base": "e",
            "z_threshold": self.z_threshold,
            "min_class_size": self.min_class_size,
            "seed": self.seed,
            "detector": {
                "base_sigma": self.detector.base_sigma,
                "scales_per_octave": self.detector.scales_per_octave,
                "max_octaves": self.detector.max_octaves,
                "contrast_threshold": self.detector.contrast_threshold,
                "edge_ratio": self.detector.edge_ratio,
            },
            "index": {
                "leaf_size": self.index.leaf_size,
                "checks": self.index.checks,
                "k": self.index.k,
            },
            "match": {
                "ratio": self.match.ratio,
                "min_matches": self.match.min_matches,
            },
        }


def _build_section(cls, section: dict, path, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise InputError(
            f"{path}: unknown key(s) {sorted(unknown)} in [{name}] "
            f"(allowed: {sorted(allowed)})"
        )
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid [{name}] section ({exc})") from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a TOML or JSON config file; None yields all defaults.

    Recognized sections: [detector], [index], [match]; top-level keys:
    z_threshold, min_class_size, threads, seed.
    """
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    if path.suffix.lower() == ".json":
        try:
            raw: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
    else:
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{path}: invalid TOML ({exc})") from exc

    known = {"detector", "index", "match", "z_threshold", "min_class_size", "threads", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise InputError(f"{path}: unknown key(s) {sorted(unknown)}")

    cfg = PipelineConfig(
        detector=_build_section(ScaleSpaceParams, raw.get("detector", {}), path, "detector"),
        index=_build_section(IndexParams, raw.get("index", {}), path, "index"),
        match=_build_section(MatchParams, raw.get("match", {}), path, "match"),
    )
    scalars = {}
    for key in ("z_threshold", "min_class_size", "threads", "seed"):
        if key in raw:
            scalars[key] = raw[key]
    return replace(cfg, **scalars) if scalars else cfg
