//! Cluster-wise predictive risk modelling: PCA + K-Means subgrouping and
//! L1-regularized logistic regression with cross-validated penalty selection,
//! evaluated by ROC/AUC on held-out data.

pub mod config;
pub mod kmeans;
pub mod lasso;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod schema;
pub mod seeding;
pub mod synth;
