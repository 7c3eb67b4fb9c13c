//! Event trace of the nine-step matmul protocol.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{NodeId, SliceId};

/// Protocol steps in the order a product goes through them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Preload = 1,
    Shift = 2,
    Multiply = 3,
    AdderTree = 4,
    Packetize = 5,
    Route = 6,
    Aggregate = 7,
    Finalize = 8,
    WriteBack = 9,
}

impl Step {
    pub const ALL: [Step; 9] = [
        Step::Preload,
        Step::Shift,
        Step::Multiply,
        Step::AdderTree,
        Step::Packetize,
        Step::Route,
        Step::Aggregate,
        Step::Finalize,
        Step::WriteBack,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Step::Preload => "preload",
            Step::Shift => "shift",
            Step::Multiply => "multiply",
            Step::AdderTree => "adder-tree",
            Step::Packetize => "packetize",
            Step::Route => "route",
            Step::Aggregate => "aggregate",
            Step::Finalize => "finalize",
            Step::WriteBack => "write-back",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub slice: SliceId,
    pub step: Step,
    pub task: NodeId,
}

/// Earliest occurrence of every step per (task, slice).
#[derive(Debug, Clone, Default)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
    seen: HashMap<(NodeId, SliceId, Step), usize>,
}

impl EventTrace {
    pub fn record(&mut self, cycle: u64, slice: SliceId, step: Step, task: NodeId) {
        match self.seen.get(&(task, slice, step)) {
            Some(&i) => {
                let r = &mut self.records[i];
                r.cycle = r.cycle.min(cycle);
            }
            None => {
                self.seen.insert((task, slice, step), self.records.len());
                self.records.push(TraceRecord {
                    cycle,
                    slice,
                    step,
                    task,
                });
            }
        }
    }

    /// Records sorted by cycle, then task, slice and step.
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut r = self.records.clone();
        r.sort_by_key(|x| (x.cycle, x.task, x.slice, x.step));
        r
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `cycle,slice,step,task` lines, with the step as `number:name`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("cycle,slice,step,task\n");
        for r in self.records() {
            let _ = writeln!(
                s,
                "{},{},{}:{},{}",
                r.cycle,
                r.slice,
                r.step.number(),
                r.step.name(),
                r.task
            );
        }
        s
    }

    /// Earliest cycle of each step per task.
    pub fn first_cycles(&self) -> BTreeMap<NodeId, BTreeMap<Step, u64>> {
        let mut out: BTreeMap<NodeId, BTreeMap<Step, u64>> = BTreeMap::new();
        for r in &self.records {
            let e = out.entry(r.task).or_default().entry(r.step).or_insert(r.cycle);
            *e = (*e).min(r.cycle);
        }
        out
    }

    /// Check that `task` shows every step in `expected`, each no earlier
    /// than the one before.
    pub fn check_protocol(&self, task: NodeId, expected: &[Step]) -> Result<()> {
        let firsts = self.first_cycles();
        let Some(steps) = firsts.get(&task) else {
            return Err(Error::Sequencer(format!("{task}: no trace records")));
        };
        let mut prev: Option<(Step, u64)> = None;
        for &step in expected {
            let Some(&cycle) = steps.get(&step) else {
                return Err(Error::Sequencer(format!("{task}: step {} missing", step.name())));
            };
            if let Some((p, pc)) = prev {
                if cycle < pc {
                    return Err(Error::Sequencer(format!(
                        "{task}: {} at {cycle} precedes {} at {pc}",
                        step.name(),
                        p.name()
                    )));
                }
            }
            prev = Some((step, cycle));
        }
        Ok(())
    }
}
