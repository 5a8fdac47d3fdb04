"""Exception hierarchy shared by every module."""


class MatchCountError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(MatchCountError, ValueError):
    """A token or dimension lies outside its declared domain."""


class InvalidRangeError(MatchCountError, ValueError):
    """A query item has lo > hi after clamping."""


class ConstructionError(MatchCountError, ValueError):
    """An object, query or schema could not be built from its inputs."""


class BuildError(MatchCountError, ValueError):
    """The inverted index could not be built or loaded."""


class ContractViolation(MatchCountError, RuntimeError):
    """An internal contract was broken (counter overflow, full hash table)."""


class TableFullError(ContractViolation):
    """The c-PQ hash table ran out of slots."""


class CounterOverflowError(ContractViolation):
    """An object received more updates than the declared max count."""


class ConfigurationError(MatchCountError, ValueError):
    """Inconsistent engine or partition configuration."""


class EngineError(MatchCountError, RuntimeError):
    """A per-query failure inside the batch engine."""

    def __init__(self, query_id, cause):
        super().__init__(f"query {query_id}: {cause}")
        self.query_id = query_id
        self.cause = cause


class NoCandidateError(MatchCountError, ValueError):
    """Sequence verification was given an empty candidate list."""


class DataFormatError(MatchCountError, ValueError):
    """An input file is malformed; the message names the file and line."""
