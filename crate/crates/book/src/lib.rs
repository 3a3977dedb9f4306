//! The guide in `book/src`, compiled as doc modules so that every Rust
//! snippet runs under `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/inversion.md")]
pub mod inversion {}
#[doc = include_str!("../../../book/src/outside-shares.md")]
pub mod outside_shares {}
#[doc = include_str!("../../../book/src/identified-sets.md")]
pub mod identified_sets {}
#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}
#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
