"""Identification of diffusively coupled linear networks from node signals."""
from .arx import ArxEstimate, InsufficientExcitationError
from .netmodel import ContinuousNetwork, DiscreteModel, StructureError, discretize, undiscretize
from .pipeline import IdentifyOptions, IdentResult, ModelSetSpec, identify, topology
from .polymat import PolyMatrix
from .simulate import Dataset, NoiseSpec, generate
from .structured import Constraint, IdentifiabilityError, ParamLayout

__version__ = "0.1.0"
