"""Skeleton action recognition: attention graph convolutions trained with angular-radial losses."""

from ._core import (
    Checkpoint,
    ConfigError,
    Dataset,
    DegenerateInputError,
    Error,
    FormatError,
    NumericError,
    Sample,
    ShapeError,
    Split,
    default_config,
    generate,
    gradcheck,
    inject_noise,
    load_checkpoint,
    load_dataset,
    rdl_grads,
    rdl_terms,
    train,
)

__version__ = "0.1.0"
