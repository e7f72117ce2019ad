from .classifier import (ClassifierConfig, ClassifierError, MotionClassifier, extract_features,
                         load_classifier, motion_features_input, recognition_accuracy,
                         save_classifier, train_classifier)
from .metrics import (GaussianStats, MetricError, class_matched_fid, diversity, feature_fid, fid,
                      gaussian_stats, multimodality)
from .report import EvalConfig, confidence_interval, evaluate_model, record
