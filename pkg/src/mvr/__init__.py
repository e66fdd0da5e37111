"""Training-free multi-view reformulation engine for cross-modal retrieval.

The pipeline: extract visually key words from captions, generate LLM
reformulations under key-consistent and diversity-aware prompt strategies,
compensate frozen text/image embeddings with the mean of the reformulation
embeddings, then run exact cosine retrieval and CMC/mAP evaluation.
"""

from .errors import (
    CacheMissError,
    ConfigError,
    DataError,
    DimMismatchError,
    EmptyKeywordSetError,
    EmptyViewSetError,
    FormatError,
    MvrError,
    ParseError,
    ProviderError,
    RangeError,
    ServiceError,
    ZeroVectorError,
)
from .vectors import EmbeddingVector, cosine_similarity, l2_normalize, mean_pool
from .records import (
    CaptionRecord,
    CompensationConfig,
    ReformulationSet,
    TokenizedCaption,
    DIVERSE,
    KEY_CONSISTENT,
)
from .store import EmbeddingStore, TokenBundle, read_store, write_store
from .keywords import KeywordResult, extract_keywords
from .reformulate import (
    ChatClient,
    LlmProviderConfig,
    PromptTemplate,
    ReformulationCache,
    parse_reformulations,
    reformulate_batch,
    render_prompt,
    validate_key_consistency,
)
from .compensate import (
    CompensatedFeature,
    compensate_image,
    compensate_text,
    gather_view_texts,
    truncate_views,
)
from .retrieve import GalleryIndex, RankedResult, build_index, search, similarity_matrix
from .evaluate import (
    AblationFlags,
    MetricsReport,
    PipelineInputs,
    compute_metrics,
    mean_ap,
    rank_k,
    run_ablation,
    sweep_grid,
    sweep_scale,
)

__version__ = "0.1.0"
