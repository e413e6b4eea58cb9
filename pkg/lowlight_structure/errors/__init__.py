import typing
import structlog

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ApplicationError(Exception):
    exit_code = EXIT_RUNTIME

    def __init__(self, title: str = None, description: str = None, **fields):
        self.title = (
            title
            or getattr(self.__class__, "name", None)
            or self.__class__.__name__.replace("Error", "")
        )
        self.description = (
            description
            or getattr(self.__class__, "description", None)
            or "Some error occured"
        )
        self.fields = fields
        super(ApplicationError, self).__init__(f"{self.title}: {self.description}")

    def to_dict(self, obj_type=dict):
        result = obj_type()
        result["title"] = self.title
        result["description"] = self.description
        result["exit_code"] = self.exit_code
        if self.fields:
            result["fields"] = self.fields
        return result


class UsageError(ApplicationError):
    exit_code = EXIT_USAGE
    name = "Usage"
    description = "Invalid arguments"


class ShapeMismatchError(UsageError):
    name = "ShapeMismatch"
    description = "{operation} expects matching shapes, got {left} and {right}"

    def __init__(self, operation: str, left, right):
        super(ShapeMismatchError, self).__init__(
            description=ShapeMismatchError.description.format(
                operation=operation, left=tuple(left), right=tuple(right)
            ),
            operation=operation,
        )


class ConfigurationError(ApplicationError):
    exit_code = EXIT_USAGE
    name = "ConfigurationInvalid"
    description = "Configuration is inconsistent"


class SchemaValidationError(ConfigurationError):
    name = "SchemaValidationFailed"
    description = "One or more fields don't follow schema"

    def __init__(
        self,
        fields: typing.Dict[str, typing.Any],
        description: typing.Optional[str] = None,
    ):
        super(SchemaValidationError, self).__init__(
            title="SchemaValidationFailed", description=description
        )
        self.fields = fields


class CorruptStateError(ApplicationError):
    name = "NonFiniteTensor"
    description = "{tensor} contains non-finite values"

    def __init__(self, tensor: str):
        super(CorruptStateError, self).__init__(
            description=CorruptStateError.description.format(tensor=tensor),
            tensor=tensor,
        )


class TrainingDivergenceError(ApplicationError):
    name = "TrainingDiverged"
    description = "{term} became non-finite at step {step}"

    def __init__(self, term: str, step: int, diagnostics: typing.Optional[dict] = None):
        super(TrainingDivergenceError, self).__init__(
            description=TrainingDivergenceError.description.format(term=term, step=step),
            term=term,
            step=step,
            diagnostics=diagnostics or {},
        )
        self.term = term
        self.step = step
        self.diagnostics = diagnostics or {}


class CheckpointError(ApplicationError):
    name = "CheckpointUnreadable"
    description = "{path} is not a valid checkpoint: {reason}"

    def __init__(self, path: str, reason: str):
        super(CheckpointError, self).__init__(
            description=CheckpointError.description.format(path=path, reason=reason),
            path=str(path),
        )


class CheckpointVersionError(CheckpointError):
    name = "CheckpointVersionMismatch"

    def __init__(self, path: str, found, expected):
        super(CheckpointVersionError, self).__init__(
            path, f"format version {found}, expected {expected}"
        )
        self.found = found
        self.expected = expected


class DataLoadError(ApplicationError):
    name = "DataLoadFailed"
    description = "{path} for sample ({sample_id}) could not be read"

    def __init__(self, sample_id: str, path: str):
        super(DataLoadError, self).__init__(
            description=DataLoadError.description.format(path=path, sample_id=sample_id),
            sample_id=sample_id,
            path=str(path),
        )


class EmptyDatasetError(UsageError):
    name = "EmptyDataset"
    description = "No readable images found in {directory}"

    def __init__(self, directory: str):
        super(EmptyDatasetError, self).__init__(
            description=EmptyDatasetError.description.format(directory=directory)
        )


class ObjectDoesntExistError(UsageError):
    name = "ObjectDoesntExist"
    description = "{object} for {parameter_type}({parameter_value}) doesn't exist"

    def __init__(
        self, object: str, parameter_type: str, parameter_value: str, *args, **kwargs
    ):
        super(ObjectDoesntExistError, self).__init__(
            title=ObjectDoesntExistError.name,
            description=ObjectDoesntExistError.description.format(
                object=object,
                parameter_type=parameter_type,
                parameter_value=parameter_value,
            ),
            *args,
            **kwargs
        )


class IdMismatchError(UsageError):
    name = "IdMismatch"
    description = "Prediction and ground truth ids differ: missing {missing}"

    def __init__(self, missing: typing.List[str]):
        super(IdMismatchError, self).__init__(
            description=IdMismatchError.description.format(missing=", ".join(missing)),
            missing=list(missing),
        )
        self.missing = list(missing)
