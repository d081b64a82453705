"""Chemical-gene relation extraction with constituent-grouped encoders."""

from .corpus import Corpus, Document, Entity, LabelCatalog, RelationAnnotation, build_label_catalog, load_corpus
from .encoder import EncoderConfig, backward, forward, init_params
from .ensemble import majority_vote, select_members
from .evaluate import least_squares_fit, micro_prf, per_label_prf, render_report
from .preprocess import CandidateInstance, insert_markers, prepare_corpus, segment_sentences
from .syntax import ChunkSpan, ConstTree, extract_chunks, parse_bracketed
from .training import TrainConfig, train_one

__version__ = "0.1.0"

__all__ = [
    "CandidateInstance", "ChunkSpan", "ConstTree", "Corpus", "Document", "EncoderConfig", "Entity",
    "LabelCatalog", "RelationAnnotation", "TrainConfig", "backward", "build_label_catalog",
    "extract_chunks", "forward", "init_params", "insert_markers", "least_squares_fit", "load_corpus",
    "majority_vote", "micro_prf", "parse_bracketed", "per_label_prf", "prepare_corpus", "render_report",
    "segment_sentences", "select_members", "train_one",
]
