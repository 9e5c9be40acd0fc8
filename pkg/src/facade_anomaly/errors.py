"""Exception hierarchy.

Each error knows the module it belongs to; the CLI prints
``<module>:<ClassName>: <message>`` as a single line before exiting.
"""


class FacadeAnomalyError(Exception):
    module = "core"

    def describe(self) -> str:
        return f"{self.module}:{type(self).__name__}: {self}"


# geometry
class GeometryError(FacadeAnomalyError):
    module = "geometry"


class NonMonotonicModel(GeometryError):
    pass


class DimensionMismatch(FacadeAnomalyError):
    """Two arrays that must share a shape do not.

    Shared by geometry, anomaly and evaluation; ``module`` is set per raise
    site through :func:`dimension_mismatch`.
    """


class DegenerateCorrespondences(GeometryError):
    pass


class FovNotContained(GeometryError):
    pass


class EmptyFrame(GeometryError):
    pass


# thermal_codec
class CodecError(FacadeAnomalyError):
    module = "thermal_codec"


class InvalidParams(CodecError):
    pass


class CodeOutOfRange(CodecError):
    pass


class IoError(CodecError):
    pass


class MissingSidecar(CodecError):
    pass


# dataset
class DatasetError(FacadeAnomalyError):
    module = "dataset"


class EmptyDirectory(DatasetError):
    pass


class ValidationFailure(DatasetError):
    pass


class EmptySplit(DatasetError):
    pass


# c2t_model
class ModelError(FacadeAnomalyError):
    module = "c2t_model"


class ShapeMismatch(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


class ResolutionMismatch(ModelError):
    pass


# anomaly
class AnomalyError(FacadeAnomalyError):
    module = "anomaly"


class EncodingMismatch(AnomalyError):
    pass


# evaluation
class EvaluationError(FacadeAnomalyError):
    module = "evaluation"


class NoValidPixels(EvaluationError):
    pass


class EmptySet(EvaluationError):
    pass


# synthgen
class SynthError(FacadeAnomalyError):
    module = "synthgen"


class RegionOutOfBounds(SynthError):
    pass


# cli
class ConfigError(FacadeAnomalyError):
    module = "cli"


def dimension_mismatch(module: str, message: str) -> DimensionMismatch:
    err = DimensionMismatch(message)
    err.module = module
    return err
