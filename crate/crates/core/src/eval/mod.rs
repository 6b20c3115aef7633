//! Held-out scoring, embedding export and kernel-PCA projection.

mod export;
mod kpca;
mod loglik;

pub use export::{export_embeddings, read_embedding_csv};
pub use kpca::{kpca_project, project_modes, write_projection_csv, KpcaKernel, ProjectionRow};
pub use loglik::{
    homogeneous_loglik, test_loglik, write_report_csv, EvalReport, SequenceScore,
    HOMOGENEOUS_BASELINE,
};
