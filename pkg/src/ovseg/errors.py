"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError subclasses exit with 2,
DataError subclasses with 3, DivergedLoss with 4.
"""


class OvsegError(Exception):
    pass


class ConfigError(OvsegError):
    pass


class DataError(OvsegError):
    pass


# tensor / autodiff
class ShapeMismatch(ConfigError):
    pass


class NonFinite(OvsegError):
    pass


class AxisOutOfRange(ConfigError):
    pass


class NotScalar(ConfigError):
    pass


class GraphConsumed(OvsegError):
    pass


# tensor containers / manifests
class CorruptTensorFile(DataError):
    pass


class ManifestMissing(DataError):
    pass


class UnknownKey(DataError):
    pass


class DimensionMismatch(ConfigError):
    pass


# positional encoding
class OutOfGrid(ConfigError):
    pass


class ConfigMismatch(ConfigError):
    pass


# encoders
class IndivisibleResolution(ConfigError):
    pass


class EmptyCategory(DataError):
    pass


class DuplicateCategory(DataError):
    pass


# folds / metrics / synthetic data
class BadFoldIndex(ConfigError):
    pass


class BadUniverse(DataError):
    pass


class UnknownLabel(DataError):
    pass


class EmptyEvaluation(DataError):
    pass


class BadConfig(ConfigError):
    pass


# decoder / prediction head
class StageMismatch(ConfigError):
    pass


class NonPositiveTau(ConfigError):
    pass


# training / evaluation protocol
class EmptyDataset(DataError):
    pass


class LeakedTestCategory(DataError):
    pass


class DivergedLoss(OvsegError):
    pass


class CategoryMismatch(DataError):
    pass
