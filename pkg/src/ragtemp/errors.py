"""Exception hierarchy shared by every stage of the harness."""


class RagTempError(Exception):
    """Base class for all harness errors."""


# dataset
class DatasetError(RagTempError):
    pass


class ParseError(DatasetError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class SchemaError(DatasetError):
    def __init__(self, message, record_id=None):
        self.record_id = record_id
        if record_id is not None:
            message = f"record {record_id!r}: {message}"
        super().__init__(message)


class InsufficientCell(DatasetError):
    def __init__(self, cell, population, requested):
        self.cell = cell
        self.population = population
        self.requested = requested
        super().__init__(
            f"cell fact_count={cell[0]}, type={cell[1]} has {population} candidates, "
            f"{requested} requested"
        )


# perturb
class PerturbError(RagTempError):
    pass


class InvalidFactCount(PerturbError, ValueError):
    pass


class NoIrrelevantSentence(PerturbError):
    pass


class MissingLexicon(PerturbError):
    pass


class MissingPrefix(PerturbError):
    pass


class EmptyLexiconHit(UserWarning):
    """Issued (not raised) when a lexicon-driven perturbation finds nothing to substitute."""


# llm
class EmptyLogits(ValueError, RagTempError):
    pass


class NonFiniteLogit(ValueError, RagTempError):
    pass


class ConfigError(RagTempError):
    pass


class BackendError(RagTempError):
    def __init__(self, message, status=None, attempts=0):
        self.status = status
        self.attempts = attempts
        super().__init__(message)


class CacheCorruption(RagTempError):
    pass


# refproc
class EmptyField(ValueError, RagTempError):
    pass


class EmptyGeneration(ValueError, RagTempError):
    pass


# metrics
class EmptyEmbeddings(ValueError, RagTempError):
    pass


class DimensionMismatch(ValueError, RagTempError):
    pass


class EmptyText(ValueError, RagTempError):
    pass


# stats
class StatsError(RagTempError):
    pass


class TooFewRuns(StatsError):
    pass


class ZeroMean(StatsError):
    pass


class EmptyGroup(StatsError):
    pass


class MixedKeys(StatsError):
    pass


class NonBaselineEntry(StatsError):
    pass


class NoComparablePairs(StatsError):
    pass


# report
class MissingSeries(RagTempError):
    pass


# orchestration
class InvalidConfig(ConfigError):
    pass


class ManifestMismatch(RagTempError):
    pass
