"""
This module contains tests for the preset catalog and its text listing.

To run the tests in this file individually, use the following command:
    pytest tests/test_presets.py
"""

import json
import logging

import pytest

from app.models.exceptions import ConfigError, MultiplierError
from app.utils.presets import PresetFamily, PresetManager, get_preset_manager

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


def test_listing_names_every_family():
    text = get_preset_manager().render()
    for name in ("bochner_riesz", "indicator_region", "plateau", "imaginary_power"):
        assert name in text
    assert text.index("[fields]") < text.index("[cutoffs]") < text.index("[multipliers]")


def test_listing_is_deterministic():
    assert PresetManager().render() == PresetManager().render()


def test_resolve_fills_defaults():
    manager = get_preset_manager()
    assert manager.resolve(PresetFamily.MULTIPLIERS, "schrodinger", {"t": 2.0}) == {
        "alpha": 1.0,
        "t": 2.0,
    }
    assert manager.resolve("fields", "identity", None) == {"scale": 1.0}


def test_resolve_errors_use_the_requested_exception():
    manager = get_preset_manager()
    with pytest.raises(ConfigError):
        manager.resolve(PresetFamily.CUTOFFS, "nope", {})
    with pytest.raises(MultiplierError) as excinfo:
        manager.resolve(PresetFamily.MULTIPLIERS, "bochner_riesz", {}, error=MultiplierError)
    assert "requires parameter: R" in excinfo.value.reason
    with pytest.raises(ConfigError) as excinfo:
        manager.resolve(PresetFamily.FIELDS, "identity", {"scal": 1.0})
    assert "scal" in excinfo.value.reason


def test_broken_catalog_is_a_config_error(tmp_path):
    missing = tmp_path / "missing.json"
    with pytest.raises(ConfigError):
        PresetManager(str(missing))

    malformed = tmp_path / "presets.json"
    malformed.write_text(json.dumps({"version": "1"}))
    with pytest.raises(ConfigError):
        PresetManager(str(malformed))
