//! JSONL trace records. One header line per run, one world record per
//! frame, one message record per (frame, agent), and one score record per
//! (frame, collaborator). Serialization is append-order deterministic so a
//! re-run with the same config and seed is byte-identical.

use serde::{Deserialize, Serialize};

use crate::geom::DetectionSet;
use crate::scene::ObjectTrack;

pub const TRACE_SCHEMA: &str = "cpsim.trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TraceRecord {
    Header {
        schema: String,
        seed: u64,
        frames: usize,
        variant: String,
    },
    World {
        frame: u64,
        objects: Vec<ObjectTrack>,
    },
    Message {
        frame: u64,
        agent: u32,
        detections: DetectionSet,
        attacker_active: bool,
    },
    Score {
        frame: u64,
        agent: u32,
        l_csc: f64,
        l_csc_uniform: f64,
        l_ta: Option<f64>,
        l_st: Option<f64>,
        p_value: Option<f64>,
        rejected: bool,
        attacker_active: bool,
    },
    Plan {
        frame: u64,
        agent: u32,
        plan: crate::attack::PerturbationPlan,
    },
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Off,
    Full,
}

#[derive(Debug, Default)]
pub struct TraceBuffer {
    lines: Vec<String>,
    enabled: bool,
}

impl TraceBuffer {
    pub fn new(mode: TraceMode) -> Self {
        Self { lines: Vec::new(), enabled: mode == TraceMode::Full }
    }

    pub fn push(&mut self, record: &TraceRecord) {
        if self.enabled {
            self.lines.push(record.to_line());
        }
    }

    pub fn into_lines(self) -> Vec<String> {
        self.lines
    }
}
