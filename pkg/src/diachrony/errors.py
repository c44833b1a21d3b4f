"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line: 2 for
configuration problems, 3 for bad input data, 4 for numerical failures.
"""


class DiachronyError(Exception):
    exit_code = 3

    def to_json(self):
        payload = {"error": type(self).__name__, "message": str(self)}
        payload.update({k: v for k, v in vars(self).items() if not k.startswith("_")})
        return payload


class ConfigError(DiachronyError):
    exit_code = 2

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class StageFailure(DiachronyError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = str(cause)
        if isinstance(cause, DiachronyError):
            self.exit_code = cause.exit_code


class DataError(DiachronyError):
    exit_code = 3


class NumericError(DiachronyError):
    exit_code = 4


# corpus / ingest
class InvalidTree(DataError):
    pass


class UnbalancedBrackets(DataError):
    def __init__(self, position):
        super().__init__(f"unbalanced brackets at offset {position}")
        self.position = position


class EmptyLabel(DataError):
    def __init__(self, position):
        super().__init__(f"missing node label at offset {position}")
        self.position = position


class MalformedXml(DataError):
    pass


class DanglingEdgeRef(DataError):
    def __init__(self, ref):
        super().__init__(f"edge refers to undeclared id {ref!r}")
        self.ref = ref


class MalformedLine(DataError):
    def __init__(self, line, reason=""):
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")
        self.line = line


# tagger
class EmptyCorpus(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoDefaultForUnmappedTag(DataError):
    def __init__(self, tag):
        super().__init__(f"tag {tag!r} is not in the mapping and no default is set")
        self.tag = tag


# queries
class QuerySyntaxError(DataError):
    def __init__(self, position, expected):
        super().__init__(f"query syntax error at {position}: expected {expected}")
        self.position = position
        self.expected = expected


class MissingLayer(DataError):
    def __init__(self, attr):
        super().__init__(f"sentence has no {attr!r} layer")
        self.attr = attr


# coding
class NoInfinitive(DataError):
    pass


class NoObject(DataError):
    pass


class DuplicateSidecarKey(DataError):
    def __init__(self, key):
        super().__init__(f"contradictory sidecar rows for key {key!r}")
        self.key = list(key)


# statistics
class UnknownColumn(DataError):
    def __init__(self, column):
        super().__init__(f"unknown column {column!r}")
        self.column = column


class UnknownReferenceLevel(DataError):
    def __init__(self, column, level):
        super().__init__(f"reference level {level!r} not found in column {column!r}")
        self.column = column
        self.level = level


class MissingTerm(DataError):
    pass


class DegenerateContext(DataError):
    def __init__(self, level):
        super().__init__(f"context level {level!r} has a constant response")
        self.level = str(level)


class ZeroMargin(DataError):
    pass


class DomainError(NumericError):
    pass


class Separation(NumericError):
    pass


class RankDeficient(NumericError):
    pass


class DegenerateRank(NumericError):
    pass


class NonFiniteLikelihood(NumericError):
    def __init__(self, row):
        super().__init__(f"non-finite likelihood at row {row}")
        self.row = row


# reporting
class KindMismatch(DataError):
    pass


class IncompleteRun(DataError):
    pass
