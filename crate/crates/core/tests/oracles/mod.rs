//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod bm25;
pub mod formula;
pub mod sequences;
