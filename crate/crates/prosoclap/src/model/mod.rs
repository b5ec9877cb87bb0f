//! Text and prosody encoders over the shared parameter store.

pub mod prosody_encoder;
pub mod text_encoder;

pub use prosody_encoder::{ProsodyEncoderConfig, ProsodyEncoderModel};
pub use text_encoder::{word2ph_expand, word_count, word_pool, TextEncoderConfig, TextEncoderModel};
