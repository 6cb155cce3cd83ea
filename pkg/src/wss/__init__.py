"""Weakly supervised semantic segmentation pipeline."""

from .config import ConfigError, CrfSettings, PipelineConfig, load_config, save_config
from .core import (IGNORE, PASCAL_CLASSES, ClassTaxonomy, DatasetManifest,
                   ImageRecord, LabelVector, ManifestEntry, ManifestError, Mask,
                   ScoreMap, label_vector_from_mask, load_manifest, read_image,
                   read_mask, resize_max_dim, write_image, write_manifest,
                   write_mask)
from .coseg import (ConsensusBaseline, GroupMaskResult, OracleSource,
                    binary_to_class_mask, filter_by_foreground,
                    foreground_fraction)
from .crf import crf_refine
from .evaluate import (ConfusionMatrix, accumulate, evaluate_model, mean_iou,
                       per_class_iou, write_iou_report)
from .infer import (constrained_argmax, generate_target_masks, multiscale_probs,
                    predict_mask, softmax_probs)
from .ingest import (ClassGroup, DirectoryFetcher, FetchRequest, UrlListFetcher,
                     build_retrieved_corpus, fetch_class_images,
                     prepare_target_images)
from .losses import (LossReport, combined_loss, multilabel_bce_loss, sgd_step,
                     softmax_nll_loss)
from .model import (NetworkParams, build_backbone, forward_multilabel,
                    forward_segmentation, load_checkpoint, parameter_count,
                    save_checkpoint)
from .synthbench import (SynthSpec, generate_retrieved_groups,
                         generate_target_set, synth_taxonomy)
from .train import train_stage

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
