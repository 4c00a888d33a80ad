"""protokg: knowledge-graph embeddings with relational prototype nodes.

Two model families over one graph store: rotation-based link prediction
(baseline and prototype-augmented) and GCN entity alignment (baseline and
prototype-augmented), plus filtered-ranking evaluation, clustering and
long-tail reports, and a numerical certifier for the prototype geometry.
"""

__version__ = "0.1.0"

from .kg import (AlignmentSeedSet, AugmentedGraph, CompletionDataset,
                 KnowledgeGraph, TripleFormat, augment_with_prototypes,
                 degree_of, export_triples, ingest_alignment_dataset,
                 ingest_completion_dataset, ingest_triples)
from .optim import (Adagrad, Adam, EmbeddingTable, apply_gradients,
                    finite_difference_check, init_table, load_table_binary,
                    load_table_text, save_table_binary, save_table_text)
from .rotate import (CompletionConfig, CompletionModel, TripleBatch,
                     aggregate_with_prototype, rotate_score, rpe_rotate_score,
                     sample_negatives, self_adversarial_loss, train_completion)
from .gcn import (GcnConfig, alignment_loss, final_embeddings, gcn_forward,
                  mine_negatives, train_alignment)
from .evaluation import (CategoryAssignment, RankingReport, alignment_report,
                         completion_report, davies_bouldin,
                         export_embeddings_with_categories, filtered_rank,
                         long_tail_report)
from .geometry import (PrototypeArea, TheoryReport, area_distance, build_areas,
                       check_lemma1, check_theorem_alignment,
                       check_theorem_completion)
from .synthetic import make_alignment_fixture, make_completion_fixture
