"""Toolkit for articulated 3D objects: kinematics, URDF I/O, a tokenized
articulation codec, geometry utilities, joint-limit refinement, evaluation
metrics and training-corpus curation."""

__version__ = "0.1.0"

from .errors import ArtkitError
from .kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link

__all__ = ["ArtkitError", "Aabb", "ArticulatedObject", "Joint", "JointKind", "Link", "__version__"]
