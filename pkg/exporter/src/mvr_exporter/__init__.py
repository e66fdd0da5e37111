"""Bridge between frozen encoders and the retrieval engine.

Runs a text/image encoder to emit MVRE embedding stores plus token bundles,
and serves the /embed HTTP contract for live embedding of reformulations.
The engine is consumed purely through those interfaces; no engine code is
imported here.
"""

from .encoders import HashEncoder, select_encoder
from .export import ExportManifest, export_image_embeddings, export_text_embeddings
from .mvre import write_mvre

__version__ = "0.1.0"
