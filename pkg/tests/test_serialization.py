"""Canonical JSON serialization: byte stability, round-trips, error mapping."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from anvil.errors import ParseError, SchemaValidationError
from anvil.model import Analogy, ConceptDefinition, Mapping, Screenplay
from anvil.serialization import (
    SCHEMA_VERSION,
    canonical_json,
    deserialize,
    export_schemas,
    json_schema_for,
    parse_json,
    registered_types,
    serialize,
)

from .builders import BUILDERS, build_analogy, build_any


class TestCanonicalJson:
    def test_sorted_keys_two_space_indent_trailing_newline(self):
        text = canonical_json({"b": 1, "a": {"d": 2, "c": 3}})
        assert text == '{\n  "a": {\n    "c": 3,\n    "d": 2\n  },\n  "b": 1\n}\n'

    def test_unicode_not_escaped(self):
        assert canonical_json({"k": "café"}) == '{\n  "k": "café"\n}\n'

    def test_no_crlf(self):
        text = canonical_json({"a": ["x", "y"]})
        assert "\r" not in text
        assert text.endswith("\n") and not text.endswith("\n\n")

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_equal_payloads_identical_bytes(self):
        a = canonical_json({"x": 1, "y": [1, 2]})
        b = canonical_json({"y": [1, 2], "x": 1})
        assert a == b


class TestEnvelope:
    def test_envelope_shape(self):
        analogy = build_analogy(random.Random(1))
        payload = json.loads(serialize(analogy))
        assert payload["schema_version"] == SCHEMA_VERSION
        assert payload["kind"] == "Analogy"
        assert set(payload) == {"schema_version", "kind", "data"}

    def test_unregistered_type_rejected(self):
        from pydantic import BaseModel

        class NotRegistered(BaseModel):
            x: int = 1

        with pytest.raises(SchemaValidationError, match="not registered"):
            serialize(NotRegistered())

    def test_core_types_registered(self):
        names = set(registered_types())
        assert {
            "ConceptDefinition",
            "Analogy",
            "ElementSpec",
            "Screenplay",
            "ScriptArtifact",
            "RepairTrace",
            "VideoMeta",
            "PipelineRun",
            "ValidationReport",
        } <= names


class TestRoundTrip:
    @pytest.mark.parametrize("builder", BUILDERS, ids=lambda b: b.__name__)
    def test_each_type_round_trips(self, builder):
        rng = random.Random(hash(builder.__name__) % 100_000)
        for _ in range(5):
            value = builder(rng)
            text = serialize(value)
            again = deserialize(text)
            assert again == value
            assert serialize(again) == text

    @given(st.integers(min_value=0, max_value=100_000))
    def test_any_type_round_trips(self, seed):
        value = build_any(random.Random(seed))
        text = serialize(value)
        again = deserialize(text)
        assert again == value
        assert serialize(again) == text

    def test_unknown_fields_survive_round_trip(self, caplog):
        analogy = Analogy(
            source_domain="restaurant",
            narrative="n",
            mappings=(
                Mapping(target_property="p", source_counterpart="s", rationale="r"),
            ),
            future_field="kept",
        )
        text = serialize(analogy)
        with caplog.at_level("WARNING"):
            again = deserialize(text)
        assert again.future_field == "kept"
        assert serialize(again) == text
        assert any("unknown fields" in r.message for r in caplog.records)

    def test_expected_type_enforced(self):
        text = serialize(build_analogy(random.Random(2)))
        assert isinstance(deserialize(text, Analogy), Analogy)
        with pytest.raises(SchemaValidationError, match="expected Screenplay"):
            deserialize(text, Screenplay)


class TestErrorMapping:
    def test_malformed_json_gives_position(self):
        with pytest.raises(ParseError) as err:
            parse_json('{\n  "a": 1,\n}')
        assert err.value.line == 3
        assert err.value.column is not None

    def test_truncated_artifact(self):
        text = serialize(build_analogy(random.Random(3)))
        with pytest.raises(ParseError):
            deserialize(text[: len(text) // 2])

    def test_schema_violation_lists_field_paths(self):
        envelope = {
            "schema_version": 1,
            "kind": "Screenplay",
            "data": {"scenes": [{"index": 2, "elements_present": []}]},
        }
        with pytest.raises(SchemaValidationError) as err:
            deserialize(canonical_json(envelope))
        assert any("scenes" in path for path in err.value.field_paths)

    def test_unknown_kind(self):
        envelope = {"schema_version": 1, "kind": "Mystery", "data": {}}
        with pytest.raises(SchemaValidationError, match="unknown artifact kind"):
            deserialize(canonical_json(envelope))

    def test_envelope_must_be_object(self):
        with pytest.raises(SchemaValidationError, match="object"):
            deserialize("[1, 2]\n")

    def test_envelope_missing_keys(self):
        with pytest.raises(SchemaValidationError, match="incomplete"):
            deserialize('{"schema_version": 1}\n')

    def test_wrong_payload_type_inside_data(self):
        envelope = {
            "schema_version": 1,
            "kind": "ConceptDefinition",
            "data": {"concept_name": "Stack", "definition": "d", "properties": "LIFO"},
        }
        with pytest.raises(SchemaValidationError) as err:
            deserialize(canonical_json(envelope))
        assert any(p.startswith("properties") for p in err.value.field_paths)


class TestSchemas:
    def test_schema_stamped_with_version(self):
        schema = json_schema_for(ConceptDefinition)
        assert schema["schema_version"] == SCHEMA_VERSION
        assert "properties" in schema

    def test_export_writes_one_file_per_type(self, tmp_path):
        written = export_schemas(tmp_path)
        assert len(written) == len(registered_types())
        sample = tmp_path / "Screenplay.json"
        assert sample.exists()
        payload = json.loads(sample.read_text(encoding="utf-8"))
        assert payload["schema_version"] == SCHEMA_VERSION
