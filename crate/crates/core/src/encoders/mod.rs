//! Branch encoders: a small convolutional network over spectral stacks and a
//! perceptron over backbone embeddings, plus the embedding providers that
//! stand in for the pretrained backbone.

mod params;
mod provider;
mod semantic;
mod spectral;

pub use params::{count_params, init_tensor, Init, Linear, ParamStore};
pub use provider::{
    provide_embedding, read_embedding_archive, write_embedding_archive, EmbeddingArchive, EmbeddingProvider,
    FileEmbeddings, ProviderConfig, ProviderKind, PseudoEmbedder, EMBEDDING_MAGIC, EMBEDDING_VERSION, LABEL_BLOCK_MAGIC,
};
pub use semantic::{semantic_encode, SemanticArch, SemanticEncoder};
pub use spectral::{spectral_encode, SpectralArch, SpectralEncoder};
