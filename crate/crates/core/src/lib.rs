mod category;
pub mod evalkit;
pub mod ingest;
pub mod strnet;
pub mod summarizer;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use category::Category;
