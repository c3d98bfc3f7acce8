//! Text metrics and the Mann-Whitney U test.

mod mwu;
mod rouge;

pub use mwu::{mann_whitney_u, UMode, UMethod, UTestResult};
pub use rouge::{copy_rate, lcs_length, rouge_l, rouge_n, RougeScore};
