"""HTTP adapter exposing scripted or user-supplied models behind the oracle
wire protocol (/infer, /embed, /health)."""

from .backends import BackendError, build_backend, embed_text
from .server import AdapterConfig, AdapterServer, config_from_dict, main, serve

__version__ = "0.1.0"
