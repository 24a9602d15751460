//! Generative visual search: embedding retrieval over a local image corpus,
//! LLM query concretization and keyword suggestion, mask-based image
//! modification through pluggable backends, and session pattern analytics.

pub mod concretize;
pub mod corpus;
pub mod keywords;
pub mod limiter;
pub mod llm;
pub mod modify;
pub mod pixels;
pub mod remote;
pub mod retrieval;
pub mod session;
