"""Zero/few-shot multi-view shape recognition on precomputed features."""

from .aggregate import (AggregationResult, aggregate_average, aggregate_peva,
                        aggregation_weights, discriminative_scores, predict,
                        similarity_matrix, zero_shot_logits,
                        DEFAULT_LOGIT_SCALE)
from .encoder import EncoderConfig, EncoderParams, attention, encode
from .kernels import BACKEND
from .store import (FeatureSet, Manifest, ParamBundle, PromptBank,
                    ShapeRecord, l2_normalize_rows, load_dataset,
                    load_feature_set, load_manifest, load_prompt_bank,
                    read_container, write_container, write_manifest)
from .synth import SynthConfig, generate, write_dataset
from .tensor import GradCheckReport, Tensor, grad_check
from .trainer import (AdamState, EvalReport, TrainConfig, adam_step,
                    classification_loss, distillation_loss, evaluate,
                    few_shot_logits, gradcheck_suite, sample_k_shot,
                    total_loss, train)

__version__ = "0.1.0"
