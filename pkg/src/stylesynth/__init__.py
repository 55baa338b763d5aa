"""Two-stage source-free style synthesis: pseudo-style words trained against a
fixed simplex-ETF classifier with coarse-semantic consistency, then an
ArcFace linear head on the synthesised style-content features."""

from .classifier import ClassifierConfig, LinearHead, synth_training_set, train_linear
from .encoders import EncoderSpec, MockEncoder, PseudoStyleSet, assemble_prompt, make_encoder
from .errors import (ConfigError, DegenerateInputError, DivergenceError, LLMError,
                     MissingInputError, StyleSynthError)
from .etf import build_etf, verify_etf
from .metrics import evaluate, metric_sc, metric_sd, predict
from .semantics import CategorySet, CoarseSemanticSet, CsgConfig, build_css
from .style_trainer import BaselineLossConfig, StyleTrainConfig, train_styles

__version__ = "0.1.0"
