"""knord: classify known relations and discover novel relation clusters.

Pipeline: corpus split -> meta-type resolution -> prompt training -> combined
token representations -> mixture clustering with majority-vote bifurcation ->
weakly supervised classification -> Hungarian-mapped micro-F1 evaluation.
"""

__version__ = "0.1.0"

from .classifier import (LabelSpace, encode_with_markers, predict,
                         relation_representation, train_classifier)
from .clustering import (ClusterState, GaussianMixture, WeakLabelSet,
                         adjust_by_metatype, bifurcate_majority_vote, fit_gmm,
                         select_weak_labels)
from .corpus import (RelationInstance, SplitManifest, augment_hard_negatives,
                     build_grd_split, load_corpus)
from .evaluation import (EvaluationReport, confidence_bifurcate,
                         hungarian_assign, map_and_score, map_freeform_labels)
from .metatype import (MetaTypePair, MetaTypeResolver, OntologyGraph,
                       meta_type_of_pair)
from .pipeline import PipelineConfig, parse_config, run_all, run_stage
from .prompting import (MlmBackend, StubMlmBackend, TinyMlmBackend,
                        TokenRanking, build_prompt_text, make_training_batch,
                        rank_tokens_constrained, rank_tokens_unconstrained)
from .representation import (HashEmbedder, RelationRepresentation,
                             build_representation, embed_matrix)

__all__ = [
    "ClusterState", "EvaluationReport", "GaussianMixture", "HashEmbedder",
    "LabelSpace", "MetaTypePair", "MetaTypeResolver", "MlmBackend",
    "OntologyGraph", "PipelineConfig", "RelationInstance",
    "RelationRepresentation", "SplitManifest", "StubMlmBackend",
    "TinyMlmBackend", "TokenRanking", "WeakLabelSet",
    "adjust_by_metatype", "augment_hard_negatives", "bifurcate_majority_vote",
    "build_grd_split", "build_prompt_text", "build_representation",
    "confidence_bifurcate", "embed_matrix", "encode_with_markers", "fit_gmm",
    "hungarian_assign", "load_corpus", "make_training_batch", "map_and_score",
    "map_freeform_labels", "meta_type_of_pair", "parse_config", "predict",
    "rank_tokens_constrained", "rank_tokens_unconstrained",
    "relation_representation", "run_all", "run_stage", "select_weak_labels",
    "train_classifier",
]
