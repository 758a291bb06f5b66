//! Byte-level file-fragment classification toolkit: datasets of fixed-size
//! sectors, a bit-shift image representation of raw bytes, data augmentation,
//! a small reverse-mode autodiff engine, dual-branch classifiers, and the
//! training/evaluation machinery around them.

pub mod augment;
pub mod byte2image;
pub mod corpus;
pub mod evaluator;
pub mod model;
pub mod tensor;
pub mod trainer;
