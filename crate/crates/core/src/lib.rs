pub mod bindiff;
pub mod deletion;
pub mod framestream;
pub mod gpt;
pub mod image;
mod le;
pub mod metadata;
pub mod synth;
