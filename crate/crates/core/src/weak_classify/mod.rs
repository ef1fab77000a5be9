//! Prototype clustering and labelling, and the teacher/student pair trained
//! from weak presence labels.

mod classifier;
mod kmeans;
mod matching;
mod prototypes;

pub use classifier::{
    classify, train_classifier, train_teacher, BatchNorm, ClassifierConfig, ClassifierLog,
    ClassifierMLP, BN_EPS, BN_MOMENTUM, CLASSIFIER_FORMAT, CLASSIFIER_VERSION,
};
pub use kmeans::{kmeans_pp, nearest, sq_dist, ClusterModel, DEFAULT_MAX_ITER};
pub use matching::{
    assignment_cost, count_label_sets, enumerate_label_sets, match_frames, match_probs,
    match_weak_labels, train_student, MatchedLabels, WeakFrame, WeakMode, COST_CLAMP,
    ENUMERATION_CAP,
};
pub use prototypes::{
    auto_label, auto_label_prototypes, propagate_labels, select_prototypes, Prototype, PrototypeSet,
};
