//! Analytic parameter and multiply-accumulate accounting.
//!
//! Counts follow the instrumentation in `hima_tensor::macs`: convolutions,
//! matrix products, linear layers and the selective scan contribute MACs;
//! elementwise arithmetic, normalization, pooling, softmax and DFTs do not.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Per-op cost listing for one input size. MACs are multiply-accumulates,
/// reported for batch 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub input: Vec<usize>,
    pub entries: Vec<CostEntry>,
}

impl CostReport {
    pub fn new(input: &[usize]) -> Self {
        Self {
            input: input.to_vec(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, params: u64, macs: u64) {
        self.entries.push(CostEntry {
            name: name.into(),
            params,
            macs,
        });
    }

    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    /// Sum over entries whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .fold((0, 0), |(p, m), e| (p + e.params, m + e.macs))
    }

    /// Totals grouped by the first `depth` dot-separated name components.
    pub fn grouped(&self, depth: usize) -> Vec<CostEntry> {
        let mut out: Vec<CostEntry> = Vec::new();
        for e in &self.entries {
            let key: Vec<&str> = e.name.split('.').take(depth).collect();
            let key = key.join(".");
            match out.iter_mut().find(|g| g.name == key) {
                Some(g) => {
                    g.params += e.params;
                    g.macs += e.macs;
                }
                None => out.push(CostEntry {
                    name: key,
                    params: e.params,
                    macs: e.macs,
                }),
            }
        }
        out
    }
}
