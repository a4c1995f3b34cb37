"""layertrim: truncation-initialized distillation workbench for
decoder-only language models, with a KD baseline, zero-shot evaluation,
and analytic training-compute accounting."""

__version__ = "0.1.0"
