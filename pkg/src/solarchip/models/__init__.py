from .config import BackboneConfig
from .core import Embeddings, ModalityModel, SolarCHIP, build_model, tagged_buffers, tagged_parameters

__all__ = ["BackboneConfig", "Embeddings", "ModalityModel", "SolarCHIP", "build_model", "tagged_buffers", "tagged_parameters"]
