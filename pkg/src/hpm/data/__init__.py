"""Data model, ingestion, relations, splits and synthetic data."""
from .ingest import (Event, IngestionError, ItemMeta, build_sequences, five_core_filter,
                     leaf_category, parse_metadata, parse_reviews)
from .records import (PAD, SECONDS_PER_DAY, UNKNOWN_CATEGORY, Catalog, DataIntegrityError,
                      InteractionSequence, SplitExample)
from .relations import (COMPLEMENT, FAMILY, RELATIONS, SUBSTITUTE, RelationGraph,
                        build_relation_graph)
from .splits import (MAX_LEN, EvaluationError, ExampleBatch, build_splits, sample_eval_negatives,
                     sample_train_negative, sample_train_negatives)
from .store import SCHEMA, Dataset, SchemaError, load_dataset, save_dataset
from .build import dataset_from_events, ingest_files, to_amazon_lines, write_lines
from .synth import SynthConfig, SynthConfigError, SynthData, synth_generate

__all__ = [n for n in dir() if not n.startswith("_")]
