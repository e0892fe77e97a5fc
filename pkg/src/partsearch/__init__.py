"""Text-based person search with part-aware attention embeddings.

A desk-scale, fully testable library: dual toy transformer encoders over a
small reverse-mode autodiff core, a shared K-head attention module that
pools unit features into part embeddings, projection matching/classification
and diversity objectives, and cosine-sum retrieval with CMC Rank-k metrics.
"""

from .tensor import (
    Parameter,
    Rng,
    Tensor,
    backward,
    cosine,
    l2_normalize,
    l2_normalize_rows,
    matmul,
    no_grad,
    set_default_dtype,
    softmax_rows,
    using_dtype,
    zero_grads,
)
from .optim import adam_step, finite_diff_check, finite_diff_report
from .encoders import (
    EncoderConfig,
    EncoderOutput,
    ImageEncoder,
    ImageSample,
    TextEncoder,
    TextSample,
    Vocabulary,
    patchify,
    tokenize,
)
from .aggregation import PartAttention, attention_weights
from .losses import (
    BatchEmbeddings,
    IdentityClassifier,
    LossConfig,
    cmpc,
    cmpm,
    diversity_loss,
    part_alignment_loss,
    total_loss,
)
from .retrieval import (
    RankMetrics,
    SampleEmbedding,
    cmc_ranks,
    pair_similarity,
    similarity_matrix,
)
from .data import (
    Batch,
    PairedDataset,
    SynthSpec,
    batch_iterator,
    generate_synthetic,
    load_dataset,
)
from .model import ModelConfig, PersonSearchModel
from .fileio import read_rtf, write_rtf

__version__ = "0.1.0"
