#![allow(dead_code)]

pub mod gradcheck;
pub mod metric_cases;
pub mod oracles;
pub mod quant_cases;
