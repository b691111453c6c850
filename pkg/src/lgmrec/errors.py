"""Exception hierarchy shared across the package."""


class LgmrecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LgmrecError, ValueError):
    """Invalid hyperparameter, option, or configuration document."""


class DimensionError(LgmrecError, ValueError):
    """Operands or files disagree on shapes."""


class ParseError(LgmrecError, ValueError):
    """Malformed text input; message carries the offending line number."""


class EmptyDatasetError(LgmrecError, ValueError):
    """No records survive loading or filtering."""


class ContrastivePoolError(LgmrecError, ValueError):
    """Contrastive loss requested with fewer than two pool entities."""


class RankingCutoffError(LgmrecError, ValueError):
    """Top-n cutoff exceeds the number of rankable candidates."""


class CheckpointError(LgmrecError, ValueError):
    """Checkpoint manifest missing, malformed, or inconsistent with the data."""


class FeatureFileError(LgmrecError, ValueError):
    """Base class for feature-matrix file problems."""


class FeatureMagicError(FeatureFileError):
    """File does not start with the expected magic bytes."""


class FeatureVersionError(FeatureFileError):
    """Unsupported feature-file format version."""


class FeatureShapeError(FeatureFileError):
    """Declared or expected shape disagrees with the caller's contract."""


class FeatureTruncatedError(FeatureFileError):
    """Payload ends before rows*cols values."""
