//! Fake-news detection for under-resourced-language text.
//!
//! The pipeline combines hybrid social-context and content features with six
//! classical learners, a GRU sequence classifier, an out-of-fold stacking
//! ensemble with a gradient-boosted meta-learner, and a LIME explainer.

pub mod classifiers;
pub mod corpus;
pub mod features;
pub mod ensemble;
pub mod eval;
pub mod explain;
pub mod model;
pub mod sequence_model;
