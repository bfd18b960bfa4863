from ._core import (
    Gallery,
    Lexicon,
    MgalignError,
    Model,
    TrainConfig,
    Trainer,
    character_split,
    error_code,
    load_gallery,
    load_lexicon,
    load_model,
    parse_lexicon,
    psi,
    radical_split,
    render,
    toy_lexicon,
)

__all__ = [
    "Gallery",
    "Lexicon",
    "MgalignError",
    "Model",
    "TrainConfig",
    "Trainer",
    "character_split",
    "error_code",
    "load_gallery",
    "load_lexicon",
    "load_model",
    "parse_lexicon",
    "psi",
    "radical_split",
    "render",
    "toy_lexicon",
]
