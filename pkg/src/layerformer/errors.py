"""Exception hierarchy shared by every layerformer module."""


class LayerformerError(Exception):
    """Base class for all package errors."""


class ConfigError(LayerformerError, ValueError):
    pass


# materials
class MissingCoverage(LayerformerError, ValueError):
    pass


class MalformedRow(LayerformerError, ValueError):
    pass


class DuplicateName(LayerformerError, ValueError):
    pass


class OutOfRange(LayerformerError, ValueError):
    pass


class BadMaterialId(LayerformerError, IndexError):
    pass


# tmm
class InvalidStructure(LayerformerError, ValueError):
    pass


class NonFiniteResult(LayerformerError, ArithmeticError):
    pass


# serialization
class TooManyLayers(LayerformerError, ValueError):
    pass


class MaterialOutOfVocab(LayerformerError, ValueError):
    pass


class MalformedSequence(LayerformerError, ValueError):
    pass


class BadId(LayerformerError, IndexError):
    pass


# surrogate / checkpoints
class SeqTooLong(LayerformerError, ValueError):
    pass


class BadTokenId(LayerformerError, ValueError):
    pass


class ShapeMismatch(LayerformerError, ValueError):
    pass


class ManifestMismatch(LayerformerError):
    pass


class CorruptCheckpoint(LayerformerError):
    pass


# trainer / analysis
class NonFiniteLoss(LayerformerError, ArithmeticError):
    pass


class BadIndex(LayerformerError, IndexError):
    pass


class DataIntegrityError(LayerformerError):
    pass
