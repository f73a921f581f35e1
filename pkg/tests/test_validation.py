"""Envelope validation: typed rejections with field paths, and nothing else."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2aguard.errors import (
    BodyTooLarge,
    InvalidEnvelope,
    MalformedJson,
    SchemaViolation,
    UnknownMethod,
    ValidationFailure,
)
from a2aguard.model import ValidationLimits
from a2aguard.validation import measure_depth, validate_envelope


def make_doc(**overrides):
    doc = {
        "jsonrpc": "2.0",
        "id": "req-1",
        "method": "tasks/send",
        "params": {
            "task_id": "t-1",
            "skill_id": "echo",
            "history": [
                {"role": "user", "parts": [{"type": "text", "text": "hello"}]}
            ],
        },
        "security": {"nonce": "n" * 16, "issued_at": 1000.0},
    }
    doc.update(overrides)
    return doc


def encode(doc) -> bytes:
    return json.dumps(doc).encode()


def test_valid_envelope_round_trip():
    checked = validate_envelope(encode(make_doc()))
    assert checked.envelope.method == "tasks/send"
    assert checked.envelope.request_id == "req-1"
    assert checked.params.task_id == "t-1"
    assert checked.envelope.params["skill_id"] == "echo"
    assert checked.dropped_fields == ()


def test_dot_alias_method_is_canonicalized():
    checked = validate_envelope(encode(make_doc(method="tasks.send")))
    assert checked.envelope.method == "tasks/send"


def test_body_too_large():
    limits = ValidationLimits(max_body_bytes=50)
    with pytest.raises(BodyTooLarge) as err:
        validate_envelope(encode(make_doc()), limits)
    assert err.value.path == "$"
    assert err.value.data["limit"] == 50


@pytest.mark.parametrize(
    "raw",
    [b"", b"{", b"\xff\xfe{}", b'{"a": 1,}', b'{"a": 1, "a": 2}'],
    ids=["empty", "truncated", "bad-utf8", "trailing-comma", "duplicate-key"],
)
def test_malformed_json(raw):
    with pytest.raises(MalformedJson) as err:
        validate_envelope(raw)
    assert err.value.path == "$"


def test_hostile_nesting_is_a_controlled_rejection():
    bomb = b"[" * 100_000 + b"]" * 100_000
    with pytest.raises(MalformedJson):
        validate_envelope(bomb)


def test_depth_over_cap_rejected_before_model_validation():
    nested = {"k": 1}
    for _ in range(80):
        nested = {"k": nested}
    with pytest.raises(InvalidEnvelope) as err:
        validate_envelope(encode(make_doc(params=nested)))
    assert "depth" in err.value.message


def test_measure_depth_is_iterative_and_exact():
    assert measure_depth(1) == 1
    assert measure_depth({"a": [1]}) == 3
    deep = 1
    for _ in range(5000):
        deep = [deep]
    assert measure_depth(deep) == 5001


def test_non_object_body():
    with pytest.raises(InvalidEnvelope):
        validate_envelope(b"[1,2,3]")
    with pytest.raises(InvalidEnvelope):
        validate_envelope(b'"hi"')


def test_unknown_top_level_field_strict_vs_lenient():
    raw = encode(make_doc(extra="x"))
    with pytest.raises(InvalidEnvelope) as err:
        validate_envelope(raw)
    assert err.value.path == "$.extra"

    lenient = ValidationLimits(lenient_envelope=True)
    checked = validate_envelope(raw, lenient)
    assert checked.dropped_fields == ("extra",)
    assert checked.envelope.method == "tasks/send"


def test_missing_required_fields():
    doc = make_doc()
    del doc["security"]
    with pytest.raises(InvalidEnvelope) as err:
        validate_envelope(encode(doc))
    assert err.value.path == "$.security"


def test_unknown_method():
    with pytest.raises(UnknownMethod) as err:
        validate_envelope(encode(make_doc(method="tasks/steal")))
    assert err.value.path == "$.method"
    with pytest.raises(UnknownMethod):
        validate_envelope(encode(make_doc(method=7)))


def test_wrong_rpc_version():
    with pytest.raises(InvalidEnvelope) as err:
        validate_envelope(encode(make_doc(jsonrpc="1.0")))
    assert err.value.path == "$.jsonrpc"


def test_short_nonce_rejected_at_envelope_level():
    doc = make_doc(security={"nonce": "abc", "issued_at": 1000.0})
    with pytest.raises(InvalidEnvelope) as err:
        validate_envelope(encode(doc))
    assert err.value.path == "$.security.nonce"


def test_forged_role_is_a_schema_violation_with_path():
    doc = make_doc()
    doc["params"]["history"][0]["role"] = "admin"
    with pytest.raises(SchemaViolation) as err:
        validate_envelope(encode(doc))
    assert err.value.path.endswith("history[0].role")
    assert err.value.path.startswith("params")


def test_unknown_part_field_rejected_with_path():
    doc = make_doc()
    doc["params"]["history"][0]["parts"][0]["surprise"] = 1
    with pytest.raises(SchemaViolation) as err:
        validate_envelope(encode(doc))
    assert "parts[0]" in err.value.path


def test_oversize_text_part_schema_violation():
    limits = ValidationLimits(max_text_field_chars=10)
    doc = make_doc()
    doc["params"]["history"][0]["parts"][0]["text"] = "x" * 11
    with pytest.raises(SchemaViolation) as err:
        validate_envelope(encode(doc), limits)
    assert "parts[0].text" in err.value.path


def test_params_wrong_shape_for_method():
    doc = make_doc(method="tasks/get", params={"task_id": "t-1", "skill_id": "echo"})
    with pytest.raises(SchemaViolation) as err:
        validate_envelope(encode(doc))
    assert "skill_id" in err.value.path


def test_rejections_always_carry_paths():
    cases = [
        encode(make_doc(method="nope")),
        encode(make_doc(jsonrpc="3.0")),
        b"not json",
        encode([1]),
    ]
    for raw in cases:
        with pytest.raises(ValidationFailure) as err:
            validate_envelope(raw)
        assert isinstance(err.value.path, str) and err.value.path


@given(st.binary(max_size=2048))
@settings(max_examples=300)
def test_arbitrary_bytes_never_escape_the_taxonomy(raw):
    try:
        checked = validate_envelope(raw)
        assert checked.envelope.rpc_version == "2.0"
    except ValidationFailure as exc:
        assert exc.path


@given(
    st.dictionaries(
        st.sampled_from(["jsonrpc", "id", "method", "params", "security", "x"]),
        st.none() | st.booleans() | st.integers() | st.text(max_size=20)
        | st.lists(st.integers(), max_size=3)
        | st.dictionaries(st.text(max_size=8), st.integers(), max_size=3),
        max_size=6,
    )
)
@settings(max_examples=300)
def test_structured_junk_never_escapes_the_taxonomy(doc):
    try:
        validate_envelope(json.dumps(doc).encode())
    except ValidationFailure as exc:
        assert exc.path
