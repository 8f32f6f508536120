"""Pipeline configuration: JSON loading, schema validation and typed views.

Weight paths are resolved relative to the directory of the config file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .ensemble import EnsembleSpec, parse_weight
from .errors import ConfigError, LoadError
from .stage1 import Stage1Config, Tiling
from .stage2 import Stage2Config
from .tensor import resolve_dtype


def schema() -> dict:
    text = resources.files("htcan").joinpath("schema/pipeline.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def field_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate(data: Any, source: str = "<config>") -> None:
    """Raise :class:`ConfigError` naming the offending field for the first schema violation."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(f"{source}: {field_path(err.absolute_path)}: {err.message}")


def read_json(path: str | os.PathLike) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc


@dataclass(frozen=True)
class Stage1Member:
    name: str
    weights: Path
    weight: float
    config: Stage1Config


@dataclass(frozen=True)
class StereoStage:
    config: Stage2Config
    weights: Path
    self_ensemble: bool = True
    include_swap: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    members: tuple[Stage1Member, ...]
    stage1_self_ensemble: bool = True
    stage2: StereoStage | None = None
    stage3: StereoStage | None = None
    final_weights: tuple[float, float] = (0.5, 0.5)
    tiling: Tiling = Tiling()
    precision: str = "float32"
    source: str = "<config>"
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def dtype(self):
        return resolve_dtype(self.precision)

    @property
    def stage1_spec(self) -> EnsembleSpec:
        return EnsembleSpec([(m.name, m.weight) for m in self.members])

    @property
    def final_spec(self) -> EnsembleSpec:
        return EnsembleSpec([("stage2", self.final_weights[0]), ("stage3", self.final_weights[1])])

    def weight_files(self) -> list[Path]:
        files = [m.weights for m in self.members]
        files += [s.weights for s in (self.stage2, self.stage3) if s is not None]
        return files

    def check_files(self) -> None:
        missing = [str(p) for p in self.weight_files() if not p.is_file()]
        if missing:
            raise LoadError(f"{self.source}: missing weight file(s): {', '.join(missing)}")

    def with_stages(self, stages: str) -> "PipelineConfig":
        """Restrict to ``"1"``, ``"12"`` or ``"123"``."""
        if stages not in ("1", "12", "123"):
            raise ConfigError(f"stages must be 1, 12 or 123, got {stages!r}")
        if "2" in stages and self.stage2 is None:
            raise ConfigError(f"{self.source}: stage 2 requested but not configured")
        if "3" in stages and self.stage3 is None:
            raise ConfigError(f"{self.source}: stage 3 requested but not configured")
        return dataclasses.replace(self, stage2=self.stage2 if "2" in stages else None,
                                   stage3=self.stage3 if "3" in stages else None)

    def without_self_ensemble(self) -> "PipelineConfig":
        def off(s):
            return None if s is None else dataclasses.replace(s, self_ensemble=False)
        return dataclasses.replace(self, stage1_self_ensemble=False, stage2=off(self.stage2), stage3=off(self.stage3))

    def with_tiling(self, tiling: Tiling) -> "PipelineConfig":
        return dataclasses.replace(self, tiling=tiling)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | os.PathLike = ".",
                  source: str = "<config>") -> "PipelineConfig":
        validate(data, source)
        base = Path(base_dir)
        s1 = data["stage1"]
        base_cfg = dict(s1.get("config", {}))
        raw_members = s1["members"]
        given = [m for m in raw_members if "weight" in m]
        if given and len(given) != len(raw_members):
            raise ConfigError(f"{source}: stage1.members: give a weight for every member or for none")
        members = []
        for i, m in enumerate(raw_members):
            try:
                cfg = Stage1Config.from_dict({**base_cfg, **m.get("config", {})})
            except (ConfigError, TypeError) as exc:
                raise ConfigError(f"{source}: stage1.members[{i}].config: {exc}") from exc
            weight = parse_weight(m["weight"]) if given else 1.0 / len(raw_members)
            members.append(Stage1Member(m["name"], base / m["weights"], weight, cfg))
        names = [m.name for m in members]
        if len(set(names)) != len(names):
            raise ConfigError(f"{source}: stage1.members: duplicate member names {names}")
        scales = {m.config.scale for m in members}
        if len(scales) != 1:
            raise ConfigError(f"{source}: stage1.members: all members must share one scale, got {sorted(scales)}")
        try:
            EnsembleSpec([(m.name, m.weight) for m in members])
        except ValueError as exc:
            raise ConfigError(f"{source}: stage1.members: {exc}") from exc

        def stereo(key: str, fallback: Mapping[str, Any] | None) -> StereoStage | None:
            if key not in data:
                return None
            d = data[key]
            try:
                cfg = Stage2Config.from_dict(d.get("config", fallback or {}))
            except (ConfigError, TypeError) as exc:
                raise ConfigError(f"{source}: {key}.config: {exc}") from exc
            return StereoStage(cfg, base / d["weights"], d.get("self_ensemble", True), d.get("include_swap", True))

        stage2 = stereo("stage2", None)
        stage3 = stereo("stage3", data.get("stage2", {}).get("config"))
        if stage3 is not None and stage2 is None:
            raise ConfigError(f"{source}: stage3 needs stage2 to be configured")
        fe = data.get("final_ensemble", {})
        final = (parse_weight(fe.get("stage2", 0.5)), parse_weight(fe.get("stage3", 0.5)))
        try:
            EnsembleSpec([("stage2", final[0]), ("stage3", final[1])])
        except ValueError as exc:
            raise ConfigError(f"{source}: final_ensemble: {exc}") from exc
        til = data.get("tiling", {})
        return cls(
            members=tuple(members),
            stage1_self_ensemble=s1.get("self_ensemble", True),
            stage2=stage2,
            stage3=stage3,
            final_weights=final,
            tiling=Tiling(batch=til.get("batch", 64), workers=til.get("workers", 1)),
            precision=data.get("precision", "float32"),
            source=source,
            raw=data,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        p = Path(path)
        return cls.from_dict(read_json(p), p.parent, str(p))
