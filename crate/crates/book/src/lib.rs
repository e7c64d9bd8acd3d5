//! The chapters of the guide in `book/src`, one module each, so that
//! `cargo test --doc` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/radiomics.md")]
pub mod radiomics {}
#[doc = include_str!("../../../book/src/cohorts.md")]
pub mod cohorts {}
#[doc = include_str!("../../../book/src/set-encoder.md")]
pub mod set_encoder {}
#[doc = include_str!("../../../book/src/probe-reward.md")]
pub mod probe_reward {}
#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
