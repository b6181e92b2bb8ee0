"""Utility module for the preset catalog of fields, cutoffs and multipliers."""

import json
from datetime import datetime
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ValidationError

from app.models.exceptions import ConfigError, LabError


class PresetFamily(str, Enum):
    """Kinds of objects built from presets."""

    FIELDS = "fields"
    CUTOFFS = "cutoffs"
    MULTIPLIERS = "multipliers"


class ParamSpec(BaseModel):
    """Model for one preset parameter."""

    description: str
    default: Any = None
    required: bool = False


class PresetSpec(BaseModel):
    """Model for a single preset."""

    description: str
    params: dict[str, ParamSpec]


class PresetCatalog(BaseModel):
    """Model for the complete preset catalog."""

    version: str
    last_updated: datetime
    fields: dict[str, PresetSpec]
    cutoffs: dict[str, PresetSpec]
    multipliers: dict[str, PresetSpec]


class PresetManager:
    """Loads the preset catalog and resolves preset parameters."""

    def __init__(self, config_path: str | None = None):
        """Initialize the preset manager.

        Args:
            config_path: Path to the preset catalog JSON file.
                       If None, uses the default path.
        """
        if config_path is None:
            config_path = str(
                Path(__file__).parent.parent / "core" / "static" / "presets.json"
            )

        try:
            with open(config_path) as f:
                self.catalog = PresetCatalog(**json.load(f))
        except FileNotFoundError:
            raise ConfigError(f"Preset catalog not found: {config_path}")
        except json.JSONDecodeError:
            raise ConfigError(f"Invalid JSON in preset catalog: {config_path}")
        except ValidationError as e:
            raise ConfigError(f"Malformed preset catalog {config_path}: {e}")

    def family(self, family: str | PresetFamily) -> dict[str, PresetSpec]:
        return getattr(self.catalog, PresetFamily(family).value)

    def names(self, family: str | PresetFamily) -> list[str]:
        return sorted(self.family(family))

    def resolve(
        self,
        family: str | PresetFamily,
        preset_id: str,
        params: dict[str, Any] | None,
        error: type[LabError] = ConfigError,
    ) -> dict[str, Any]:
        """Merge user parameters with catalog defaults.

        Args:
            family: Preset family to look in
            preset_id: Preset name
            params: User supplied parameters
            error: Exception class raised on a bad preset or parameter

        Returns:
            Complete parameter dict for the preset
        """
        presets = self.family(family)
        if preset_id not in presets:
            raise error(
                f"Unknown {PresetFamily(family).value} preset: {preset_id}; "
                f"known: {', '.join(sorted(presets))}"
            )
        spec = presets[preset_id]
        params = dict(params or {})

        unknown = sorted(set(params) - set(spec.params))
        if unknown:
            raise error(f"Preset {preset_id} has no parameter(s): {', '.join(unknown)}")

        resolved = {}
        for name, param in spec.params.items():
            if name in params:
                resolved[name] = params[name]
            elif param.required:
                raise error(f"Preset {preset_id} requires parameter: {name}")
            else:
                resolved[name] = param.default
        return resolved

    def render(self) -> str:
        """Deterministic text listing of every preset and its parameters."""
        lines = []
        for family in PresetFamily:
            lines.append(f"[{family.value}]")
            for name in self.names(family):
                spec = self.family(family)[name]
                lines.append(f"  {name}: {spec.description}")
                for pname in sorted(spec.params):
                    param = spec.params[pname]
                    default = "required" if param.required else f"default={param.default!r}"
                    lines.append(f"    - {pname} ({default}): {param.description}")
        return "\n".join(lines) + "\n"

    @property
    def version(self) -> str:
        return self.catalog.version


@lru_cache(maxsize=1)
def get_preset_manager() -> PresetManager:
    return PresetManager()
