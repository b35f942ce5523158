from __future__ import annotations

import json
from pathlib import Path

import pytest

from entropic_bsde.config import load_config

jsonschema = pytest.importorskip("jsonschema")

ROOT = Path(__file__).resolve().parents[1]
SCHEMA = json.loads((ROOT / "docs" / "config_schema.json").read_text())
CONFIGS = sorted((ROOT / "configs").glob("*.json"))


def test_schema_is_valid():
    jsonschema.Draft202012Validator.check_schema(SCHEMA)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_match_schema_and_load(path):
    jsonschema.validate(json.loads(path.read_text()), SCHEMA)
    cfg = load_config(path)
    assert cfg.output_dir.is_relative_to(path.parent)


def test_schema_rejects_unknown_model_keys():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"model": {"Q": 1}}, SCHEMA)
