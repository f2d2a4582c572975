//! Coverage probes and the per-test dynamic call tree.
//!
//! Probes report `(module, function)` entry and exit at runtime. Folding
//! those events gives the call tree of one test, and the tree gives each
//! reached function its mutation distance: the depth of its shallowest
//! occurrence below the test entry.

mod call_tree;
mod probes;

pub use call_tree::{
    build_call_tree, coverage, reachable_functions, CallNode, CallTreeBuilder, CoverageMap,
    DynamicCallTree, ProbeEvent, ProbeKind,
};
pub use probes::{
    instrument, instrument_bytes, FunctionProbes, InstrumentedModule, PROBE_ENTER, PROBE_EXIT,
    PROBE_MODULE,
};
