//! The guide in `book/` compiled as documentation, so `cargo test` runs every
//! listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/transmission.md")]
pub mod transmission {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}
#[doc = include_str!("../../../book/src/filter.md")]
pub mod filter {}
#[doc = include_str!("../../../book/src/rate-fits.md")]
pub mod rate_fits {}
#[doc = include_str!("../../../book/src/hmm.md")]
pub mod hmm {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
