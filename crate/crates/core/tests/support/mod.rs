//! Shared test machinery: randomized scheduler workloads and an independent
//! brute-force admission oracle, plus rate and sweep reference checks.
#![allow(dead_code)]

pub mod oracle;
pub mod rates;
pub mod sweep;
