//! Inputs shared by the stage benchmarks.

use qpoisson_core::experiment::{build_mrp, instance};
use qpoisson_core::{ChainStructure, Mrp};

/// A suite instance at the given scale, with its known structure.
pub fn suite_chain(name: &str, scale: usize) -> (Mrp, ChainStructure) {
    let spec = instance(name).unwrap_or_else(|| panic!("unknown instance {name}"));
    build_mrp(&spec.scaled(scale)).expect("suite instances build")
}
