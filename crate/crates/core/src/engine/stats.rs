//! Campaign counters and the `stats.json` document.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const STATS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorStats {
    pub applied: u64,
    pub failed: u64,
    pub admitted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub schema: u32,
    pub seed: u64,
    pub backend: String,
    pub workers: usize,
    pub executions: u64,
    pub minimize_executions: u64,
    pub corpus_size: usize,
    pub edges: usize,
    pub bails: u64,
    pub bail_rate: f64,
    pub hangs: u64,
    pub crashes: u64,
    pub unique_crashes: usize,
    pub operators: BTreeMap<String, OperatorStats>,
    /// Left out of deterministic runs so their stats are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execs_per_sec: Option<f64>,
}

impl CampaignStats {
    pub fn new(seed: u64, backend: &str, workers: usize) -> Self {
        CampaignStats {
            schema: STATS_SCHEMA,
            seed,
            backend: backend.to_string(),
            workers,
            executions: 0,
            minimize_executions: 0,
            corpus_size: 0,
            edges: 0,
            bails: 0,
            bail_rate: 0.0,
            hangs: 0,
            crashes: 0,
            unique_crashes: 0,
            operators: BTreeMap::new(),
            wall_time_secs: None,
            execs_per_sec: None,
        }
    }

    pub fn operator(&mut self, name: &str) -> &mut OperatorStats {
        self.operators.entry(name.to_string()).or_default()
    }

    pub fn set_timing(&mut self, secs: f64) {
        self.wall_time_secs = Some(secs);
        self.execs_per_sec = Some(if secs > 0.0 {
            self.executions as f64 / secs
        } else {
            0.0
        });
    }

    pub fn refresh_rates(&mut self) {
        self.bail_rate = if self.executions == 0 {
            0.0
        } else {
            self.bails as f64 / self.executions as f64
        };
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Multi-line human rendering for the `stats` command.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k:<20} {v}\n"));
        line("backend", self.backend.clone());
        line("seed", self.seed.to_string());
        line("workers", self.workers.to_string());
        line("executions", self.executions.to_string());
        if let Some(r) = self.execs_per_sec {
            line("execs/sec", format!("{r:.1}"));
        }
        if let Some(t) = self.wall_time_secs {
            line("wall time", format!("{t:.1}s"));
        }
        line("corpus size", self.corpus_size.to_string());
        line("edges", self.edges.to_string());
        line("bail rate", format!("{:.3}", self.bail_rate));
        line("hangs", self.hangs.to_string());
        line("crashes", self.crashes.to_string());
        line("unique crashes", self.unique_crashes.to_string());
        line("minimize execs", self.minimize_executions.to_string());
        for (name, o) in &self.operators {
            line(
                &format!("op {name}"),
                format!("applied {} failed {} admitted {}", o.applied, o.failed, o.admitted),
            );
        }
        out
    }
}
