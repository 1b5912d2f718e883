//! Text modalities: surrogate describer/reasoner, prompts, tokenizer and
//! the pluggable text-source contract.

pub mod prompt;
pub mod source;
pub mod surrogate;
pub mod tokenizer;

pub use prompt::{PromptTemplate, DEFAULT_LLM_PROMPT, DEFAULT_VLM_PROMPT};
pub use source::{
    generate_all, remote_generate, FallbackSource, RemoteSource, SurrogateSource, TextRequest, TextRole, TextSource,
};
pub use surrogate::{surrogate_llm_text, surrogate_vlm_text};
pub use tokenizer::{TokenizedText, Vocabulary, MAX_LEN, PAD, UNK};
