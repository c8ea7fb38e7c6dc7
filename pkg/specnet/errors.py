"""
SpecNet - Errors
Exception hierarchy shared by the library and the controller
"""


class SpecNetError(Exception):
    """Base class for all SpecNet failures"""


class DimensionError(SpecNetError, ValueError):
    """Map dimensions incompatible with the requested operation"""


class StructuralError(SpecNetError, ValueError):
    """Sparse map or cache structure is inconsistent"""


class ShapeError(SpecNetError, ValueError):
    """Operand shapes or a model layer chain do not agree"""


class NumericIntegrityError(SpecNetError, ArithmeticError):
    """A numerical guarantee (e.g. Hermitian symmetry) was violated"""


class UsageError(SpecNetError):
    """Invalid configuration, flag or API usage"""


class CheckpointError(SpecNetError):
    """Checkpoint container is malformed"""


class DatasetError(SpecNetError):
    """Dataset could not be loaded"""


class FormatError(DatasetError, ValueError):
    """Bad magic number or record layout"""


class PayloadLengthError(DatasetError, ValueError):
    """File payload shorter or longer than its header promises"""


class ConsistencyError(DatasetError, ValueError):
    """Image and label files disagree"""


class LabelValueError(DatasetError, ValueError):
    """Label outside the valid class range"""


class DatasetMissingError(DatasetError, FileNotFoundError):
    """Dataset files not found under the data directory"""
