//! Compiles the book's chapters as doc-tests so the listings stay in sync
//! with the library. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/text.md")]
pub mod text {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/shapley.md")]
pub mod shapley {}
#[doc = include_str!("../../../book/src/deeplift.md")]
pub mod deeplift {}
#[doc = include_str!("../../../book/src/visualization.md")]
pub mod visualization {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
