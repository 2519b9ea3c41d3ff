pub mod distance;
pub mod emb1;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod mining;
pub mod rerank;
pub mod synth;
pub mod tracklet;

pub use distance::{distance_matrix, top_k_neighbors, DistanceMatrix, Metric};
pub use embedding::{load_embeddings, EmbeddingSet, ImageMeta, Split};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, RankedResult, Relevance};
pub use mining::{identity_mine, kmeans_baseline, MiningParams, PseudoLabelSet};
pub use rerank::{rerank, RerankParams};
pub use synth::{generate, SynthScenario};
pub use tracklet::{trr_pipeline, Aggregation, TrackletIndex, TrrConfig};
