"""chronoalign: cross-modal temporal alignment toolkit."""

from .audio import MfccConfig, PcmAudio, compute_mfcc, load_wav, normalize_dbfs, \
    stack_audio_frames, write_wav
from .features import FeatureSequence, read_features, write_features_binary, \
    write_features_text
from .infer import AlignmentPath, SmoothingConfig, VoteTable, adaptive_smooth, \
    align_audio_to_video, candidate_sets, estimate_global_shift, full_alignment, \
    longest_monotone_match, render_video_warp, resume_after_break, windowed_predict
from .metrics import MetricReport, dtw, edit_statistics, mcd, mcd_dtw, \
    modified_dta, pearson, shift_error_metrics
from .model import AlignerConfig, ModelParams, TrainSettings, forward_full, \
    init_params, train_phase1, train_phase2
from .synth import DatasetConfig, EditScript, LabelMap, SyntheticDataset, \
    SyntheticPair, apply_edit, build_label_map, gen_synthetic_pair, \
    make_training_example, sample_edit_script

__version__ = "0.1.0"
