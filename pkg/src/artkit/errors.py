"""Exception hierarchy shared by all artkit modules."""


class ArtkitError(Exception):
    """Base class for every error raised by artkit."""


# -- kinematics --------------------------------------------------------------

class GraphError(ArtkitError):
    """The link/joint structure is not a single kinematic tree."""

    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = tuple(ids)


class DanglingReference(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class MultipleRoots(GraphError):
    pass


class MultipleParents(GraphError):
    pass


class UnknownJoint(ArtkitError):
    pass


class NotAdjacent(ArtkitError):
    pass


class InvalidJoint(ArtkitError):
    pass


class DegenerateExtent(ArtkitError):
    pass


# -- urdf / mesh io ------------------------------------------------------------

class UrdfError(ArtkitError):
    pass


class XmlMalformed(UrdfError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class UnresolvedLinkName(UrdfError):
    pass


class UnsupportedJointType(UrdfError):
    pass


class MeshFormatError(ArtkitError):
    pass


class IoFailure(ArtkitError):
    pass


# -- codec -------------------------------------------------------------------

class CodecError(ArtkitError):
    pass


class TooManyParts(CodecError):
    pass


class NonUnitVector(CodecError):
    pass


class UnencodableJoint(CodecError):
    pass


class ScriptError(CodecError):
    """Base for failures while reading an articulation script."""


class ScriptSyntaxError(ScriptError):
    """Malformed script text."""

    def __init__(self, message, line, column, expected=None):
        where = f"line {line}, column {column}"
        if expected:
            message = f"{message} at {where}; expected {expected}"
        else:
            message = f"{message} at {where}"
        super().__init__(message)
        self.line = line
        self.column = column
        self.expected = expected


class ScriptSemanticError(ScriptError):
    """Well-formed text describing an invalid articulation."""


class IndexOutOfRange(ScriptSemanticError):
    pass


class BinOutOfRange(ScriptSemanticError):
    pass


class GraphInvalid(ScriptSemanticError):
    pass


# -- geometry / refinement -----------------------------------------------------

class DegenerateMesh(ArtkitError):
    pass


class NoLimit(ArtkitError):
    pass


class MissingGeometry(ArtkitError):
    pass


# -- evaluation ----------------------------------------------------------------

class CategoryMismatch(ArtkitError):
    pass


class OpenMeshWarning(UserWarning):
    """Mesh is not closed; inside/outside parity cannot be trusted."""
