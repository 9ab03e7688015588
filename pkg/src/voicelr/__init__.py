"""Forensic voice-comparison evaluation: cosine scoring, logistic
likelihood-ratio calibration, and Cllr/EER reporting."""

from .audio import (AudioSignal, Chunk, VadParams, augment_add_noise,
                    augment_time_scale, load_wav, plan_durations,
                    remove_silence, save_wav, split_chunks)
from .calibration import (CalibrationModel, LikelihoodRatio, cosine_score,
                          fit_calibration, log10_lrs, posterior, score_trials,
                          to_lr)
from .core import (EmbeddingRecord, Manifest, RecordingMeta, ScoredTrial,
                   Trial, label_trial, read_manifest, read_scores,
                   read_trials, validate_manifest, write_manifest,
                   write_scores, write_trials)
from .embeddings import (EmbeddingSet, EnrollmentVector, baseline_embed,
                         enroll, enroll_all, ingest)
from .evaluation import (BreakdownMatrix, EvaluationReport, ScenarioConfig,
                         breakdown, generate_trials, run_pipeline)
from .metrics import (LabeledLogLRs, TippetCurve, cllr, cllr_min, eer, pav,
                      tippet)

__version__ = "0.1.0"
