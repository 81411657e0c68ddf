"""Retriever evaluation against a pooled, judged pseudo ground truth."""

from .corpus import Chunk, Document, Query, SegmentationSpec, load_corpus, load_queries, segment_document
from .index import BM25Index, DenseIndex, RankedList
from .judge import LLMJudge, OracleExtractor, OracleJudge
from .metrics import PRCurve, compare, confusion_at_k, f_beta, pr_auc, pr_curve
from .oracle import SyntheticSpec, generate_synthetic_corpus, verify_pooling
from .pipeline import FilterSpec, RerankerSpec, RetrieverSpec, Workspace, run_retriever
from .pseudogt import PseudoGT, build_pseudo_gt, build_subset, canonicalize_facts

__version__ = "0.1.0"
