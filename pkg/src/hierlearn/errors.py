"""Exception types raised across the toolkit.

Every named failure mode gets its own class so callers (and the CLI)
can report machine-parseable error categories.
"""


class HierLearnError(Exception):
    """Base class for all hierlearn errors."""


# -- hierarchy ---------------------------------------------------------------

class DuplicateId(HierLearnError):
    pass


class MultipleRoots(HierLearnError):
    pass


class CycleDetected(HierLearnError):
    pass


class OrphanNode(HierLearnError):
    pass


class UnknownClass(HierLearnError):
    pass


class NegativeDistance(HierLearnError):
    pass


class OutOfRange(HierLearnError):
    pass


# -- numerics / optimisation -------------------------------------------------

class ShapeMismatch(HierLearnError):
    pass


class NonFiniteInput(HierLearnError):
    pass


class NonFiniteGradient(HierLearnError):
    pass


class NonFiniteValue(HierLearnError):
    pass


class NoConvergence(HierLearnError):
    pass


class DomainError(HierLearnError):
    pass


class EmptyBatch(HierLearnError):
    pass


# -- heads / embeddings ------------------------------------------------------

class NotNormalized(HierLearnError):
    pass


class AmbiguousLimit(HierLearnError):
    pass


class ZeroEmbedding(HierLearnError):
    pass


class StaleCache(HierLearnError):
    pass


# -- proxies / prototypes ----------------------------------------------------

class ZeroVector(HierLearnError):
    pass


class ZeroMean(HierLearnError):
    pass


class AbsentClass(HierLearnError):
    pass


class DegenerateMatrix(HierLearnError):
    pass


# -- data --------------------------------------------------------------------

class SchemaError(HierLearnError):
    pass


class NonFiniteFeature(HierLearnError):
    pass


class EmptyDataset(HierLearnError):
    pass


class TooManyClasses(HierLearnError):
    pass


# -- trainer / metrics / cli -------------------------------------------------

class ConfigConflict(HierLearnError):
    pass


class KTooLarge(HierLearnError):
    pass


class ConstantRow(HierLearnError):
    pass


class MissingK(HierLearnError):
    pass


class MixedConfigs(HierLearnError):
    pass
