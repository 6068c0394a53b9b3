"""Model-hosting sidecar: embeddings and VLM ops behind a versioned wire protocol."""

from .mock_backend import MockBackend
from .protocol import OPS, PROTOCOL_VERSION
from .server import make_server, serve, start_background

__version__ = "0.1.0"

__all__ = ["MockBackend", "OPS", "PROTOCOL_VERSION", "make_server", "serve",
           "start_background", "__version__"]
