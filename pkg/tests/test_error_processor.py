import pytest

from core.error_processor import (
    ConfigurationError,
    ConvergenceError,
    ErrorProcessor,
    GateEnergeticsError,
    InputFileError,
    PostselectionError,
    PropagationError,
    TruncationError,
    ValidationError,
    get_error_processor,
)


@pytest.fixture
def processor():
    return ErrorProcessor()


class TestRecords:
    def test_package_error(self, processor):
        record = processor.process_error(ValidationError("bad theta", theta=-1.0), context={"theta": -1.0})
        assert record["type"] == "ValidationError"
        assert record["category"] == "validation"
        assert record["severity"] == "medium"
        assert record["message"] == "bad theta"
        assert record["details"] == {"theta": -1.0}
        assert record["context"] == {"theta": -1.0}
        assert record["suggested_actions"] == ["check_input_ranges"]

    def test_foreign_error(self, processor):
        record = processor.process_error(RuntimeError("boom"))
        assert record["category"] == "runtime"
        assert record["message"] == "boom"
        assert record["context"] == {}

    def test_unique_ids(self, processor):
        ids = {processor.process_error(ValueError("x"))["id"] for _ in range(20)}
        assert len(ids) == 20

    def test_propagation_error_carries_step(self, processor):
        record = processor.process_error(PropagationError("lost positivity", step=17, dt=1e-10))
        assert record["category"] == "numerical"
        assert record["details"]["step"] == 17

    @pytest.mark.parametrize("error,category", [
        (PostselectionError("x"), "postselection"),
        (ConvergenceError("x"), "convergence"),
        (TruncationError("x"), "numerical"),
        (ConfigurationError("x"), "configuration"),
        (InputFileError("x", path="a.csv"), "io"),
    ])
    def test_categories(self, processor, error, category):
        assert processor.process_error(error)["category"] == category
        assert isinstance(error, GateEnergeticsError)


class TestExitCodes:
    def test_input_file_error(self, processor):
        assert processor.exit_code(InputFileError("missing", path="x.csv")) == 2

    @pytest.mark.parametrize("error", [ValidationError("x"), ConfigurationError("x"), KeyError("x")])
    def test_other_errors(self, processor, error):
        assert processor.exit_code(error) == 1

    def test_validation_error_is_value_error(self):
        with pytest.raises(ValueError):
            raise ValidationError("x")

    def test_singleton(self):
        assert get_error_processor() is get_error_processor()
