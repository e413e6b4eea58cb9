import lowlight_structure.errors as errors


def test_exit_codes_follow_error_kind():
    assert errors.UsageError().exit_code == errors.EXIT_USAGE
    assert errors.ConfigurationError().exit_code == errors.EXIT_USAGE
    assert errors.IdMismatchError(["a"]).exit_code == errors.EXIT_USAGE
    assert errors.DataLoadError("a", "/x.png").exit_code == errors.EXIT_RUNTIME
    assert errors.TrainingDivergenceError("structure", 3).exit_code == errors.EXIT_RUNTIME
    assert errors.CheckpointVersionError("/c.pt", 2, 1).exit_code == errors.EXIT_RUNTIME


def test_descriptions_are_formatted_from_fields():
    error = errors.ShapeMismatchError("sgc", (1, 2), (1, 3))
    assert error.description == "sgc expects matching shapes, got (1, 2) and (1, 3)"
    missing = errors.ObjectDoesntExistError("Checkpoint", "path", "/nope.pt")
    assert missing.description == "Checkpoint for path(/nope.pt) doesn't exist"


def test_to_dict_carries_fields():
    error = errors.TrainingDivergenceError("adversarial", 7, {"structure": 0.5})
    payload = error.to_dict()
    assert payload["title"] == "TrainingDiverged"
    assert payload["exit_code"] == 2
    assert payload["fields"]["term"] == "adversarial"
    assert payload["fields"]["diagnostics"] == {"structure": 0.5}


def test_schema_error_keeps_field_messages():
    error = errors.SchemaValidationError({"steps": ["Must be greater than or equal to 1."]})
    assert isinstance(error, errors.ConfigurationError)
    assert error.fields == {"steps": ["Must be greater than or equal to 1."]}
