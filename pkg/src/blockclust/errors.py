"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for usage problems,
3 for bad input data, 4 for internal failures.
"""


class BlockClustError(Exception):
    exit_code = 4

    @property
    def kind(self) -> str:
        return type(self).__name__


class DataError(BlockClustError):
    exit_code = 3


class UsageError(BlockClustError):
    exit_code = 2


# trace structure
class TraceError(DataError):
    pass


class CycleOrForest(TraceError):
    pass


class NonContiguousIndices(TraceError):
    pass


class MultipleRoots(TraceError):
    pass


# parsing
class LineError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(LineError):
    pass


class InvalidTree(LineError):
    pass


class DuplicateAddress(DataError):
    pass


class UnknownClass(DataError):
    pass


class BadSelector(DataError):
    pass


class BadAddress(DataError):
    pass


class MalformedSignature(DataError):
    pass


# pipeline stages
class NotARoot(DataError):
    pass


class EmptyRegistry(DataError):
    pass


class UnlabeledRoot(DataError):
    pass


class EmptyVocabulary(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class EmptyEvaluationSet(DataError):
    pass


class SchemeMismatch(DataError):
    pass


class TooFewPoints(DataError):
    pass


class InvalidSpec(UsageError):
    pass


class InvalidDelta(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


class ManifestMismatch(DataError):
    pass
