use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::module_store::FuncRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeEvent {
    pub kind: ProbeKind,
    pub func: FuncRef,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallNode {
    pub func: FuncRef,
    pub children: Vec<usize>,
}

/// Calls observed during one test run, rooted at the test entry.
///
/// Repeated calls from the same parent share a node, so a loop calling `f`
/// a million times adds one child. Recursion still produces a chain of
/// nodes, one per depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicCallTree {
    nodes: Vec<CallNode>,
}

impl DynamicCallTree {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> &CallNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, idx: usize) -> &CallNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Function refs of a node's children, in first-call order.
    pub fn child_funcs(&self, idx: usize) -> Vec<FuncRef> {
        self.nodes[idx]
            .children
            .iter()
            .map(|&c| self.nodes[c].func)
            .collect()
    }
}

/// Incrementally folds probe events into a [`DynamicCallTree`].
///
/// Events before the first `Enter` of the entry function are skipped, as
/// are events after the entry returns.
#[derive(Debug, Clone)]
pub struct CallTreeBuilder {
    entry: FuncRef,
    nodes: Vec<CallNode>,
    stack: Vec<usize>,
    closed: bool,
    last_sequence: Option<u64>,
}

impl CallTreeBuilder {
    pub fn new(entry: FuncRef) -> Self {
        CallTreeBuilder {
            entry,
            nodes: Vec::new(),
            stack: Vec::new(),
            closed: false,
            last_sequence: None,
        }
    }

    pub fn push(&mut self, event: ProbeEvent) -> Result<()> {
        if let Some(last) = self.last_sequence {
            if event.sequence <= last {
                return Err(Error::MalformedEventStream(format!(
                    "sequence {} after {}",
                    event.sequence, last
                )));
            }
        }
        self.last_sequence = Some(event.sequence);
        if self.closed {
            return Ok(());
        }
        if self.nodes.is_empty() {
            if event.kind == ProbeKind::Enter && event.func == self.entry {
                self.nodes.push(CallNode {
                    func: event.func,
                    children: Vec::new(),
                });
                self.stack.push(DynamicCallTree::ROOT);
            }
            return Ok(());
        }
        match event.kind {
            ProbeKind::Enter => {
                let parent = *self.stack.last().expect("open tree has a frame");
                let existing = self.nodes[parent]
                    .children
                    .iter()
                    .copied()
                    .find(|&c| self.nodes[c].func == event.func);
                let child = match existing {
                    Some(c) => c,
                    None => {
                        self.nodes.push(CallNode {
                            func: event.func,
                            children: Vec::new(),
                        });
                        let c = self.nodes.len() - 1;
                        self.nodes[parent].children.push(c);
                        c
                    }
                };
                self.stack.push(child);
            }
            ProbeKind::Exit => {
                let top = self.stack.pop().ok_or_else(|| {
                    Error::MalformedEventStream(format!("exit of {} without enter", event.func))
                })?;
                if self.nodes[top].func != event.func {
                    return Err(Error::MalformedEventStream(format!(
                        "exit of {} while {} is active",
                        event.func, self.nodes[top].func
                    )));
                }
                if self.stack.is_empty() {
                    self.closed = true;
                }
            }
        }
        Ok(())
    }

    /// Finishes the tree. Frames still open (trap or timeout) stay as
    /// leaves. A run that never entered the test yields a root-only tree.
    pub fn finish(self) -> DynamicCallTree {
        let mut nodes = self.nodes;
        if nodes.is_empty() {
            nodes.push(CallNode {
                func: self.entry,
                children: Vec::new(),
            });
        }
        DynamicCallTree { nodes }
    }
}

pub fn build_call_tree(events: &[ProbeEvent], test_entry: FuncRef) -> Result<DynamicCallTree> {
    let mut builder = CallTreeBuilder::new(test_entry);
    for event in events {
        builder.push(*event)?;
    }
    Ok(builder.finish())
}

/// Minimal call depth of every function seen under a test entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub entries: BTreeMap<FuncRef, u32>,
}

impl CoverageMap {
    pub fn distance(&self, func: FuncRef) -> Option<u32> {
        self.entries.get(&func).copied()
    }
}

pub fn coverage(tree: &DynamicCallTree) -> CoverageMap {
    let mut entries: BTreeMap<FuncRef, u32> = BTreeMap::new();
    let mut stack = vec![(DynamicCallTree::ROOT, 0u32)];
    while let Some((idx, depth)) = stack.pop() {
        let node = tree.node(idx);
        let slot = entries.entry(node.func).or_insert(depth);
        if depth < *slot {
            *slot = depth;
        }
        stack.extend(node.children.iter().map(|&c| (c, depth + 1)));
    }
    CoverageMap { entries }
}

/// Functions at distance `1..=max_distance`; the test entry itself is never
/// a target.
pub fn reachable_functions(cov: &CoverageMap, max_distance: u32) -> BTreeSet<FuncRef> {
    cov.entries
        .iter()
        .filter(|(_, &d)| d >= 1 && d <= max_distance)
        .map(|(f, _)| *f)
        .collect()
}
