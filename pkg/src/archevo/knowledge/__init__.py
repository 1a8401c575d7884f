from .tree import (
    AttributeTree,
    GRANULARITIES,
    GRANULARITY_LABELS,
    TARGETS,
    TreeFormatError,
    load_attribute_tree,
    load_default_tree,
    default_tree_path,
    normalize_granularity,
    normalize_name,
    save_attribute_tree,
    serialize_attribute_tree,
)
from .ideas import (
    DesignIdea,
    KnowledgeDB,
    MAX_IDEA_WORDS,
    MutationDirective,
    TagError,
    fair_sample,
    make_directive,
    make_idea,
)
from .build import (
    AttributeParseError,
    ClassificationParseError,
    CorpusFormatError,
    ExtractStats,
    PaperDoc,
    build_attribute_tree,
    classify_abstract,
    extract_ideas,
    ingest_corpus,
    merge_attribute_response,
    parse_attribute_response,
    parse_corpus_file,
    parse_idea_bullets,
)

__all__ = [
    "AttributeTree",
    "AttributeParseError",
    "ClassificationParseError",
    "CorpusFormatError",
    "DesignIdea",
    "ExtractStats",
    "GRANULARITIES",
    "GRANULARITY_LABELS",
    "KnowledgeDB",
    "MAX_IDEA_WORDS",
    "MutationDirective",
    "PaperDoc",
    "TARGETS",
    "TagError",
    "TreeFormatError",
    "build_attribute_tree",
    "classify_abstract",
    "default_tree_path",
    "extract_ideas",
    "fair_sample",
    "ingest_corpus",
    "load_attribute_tree",
    "load_default_tree",
    "make_directive",
    "make_idea",
    "merge_attribute_response",
    "normalize_granularity",
    "normalize_name",
    "parse_attribute_response",
    "parse_corpus_file",
    "parse_idea_bullets",
    "save_attribute_tree",
    "serialize_attribute_tree",
]
