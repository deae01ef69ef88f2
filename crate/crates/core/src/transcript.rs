//! Per-run records and their JSONL encoding.
//!
//! A JSONL transcript is a header line, one line per round, and a closing
//! line with the node table and bias table:
//!
//! ```text
//! {"header": {...}}
//! {"t":1,"x":{"id":0},"partition":[[0,0]],"forecast":[[0,0,1.0]],"p":[0,0],"y":1.0,"mu":0.37,"phi":-1.0}
//! ...
//! {"footer": {"nodes": [...], "bias": [...]}}
//! ```
//!
//! `partition` appears only on rounds where the active partition differs from
//! the previous round. Forecasts are `[depth, k, π]` triples.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bins::{BinLabel, Refinement};
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::experts::Schedule;
use crate::groups::{Context, GroupFamily};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordLevel {
    /// Only aggregate bias sums per (bin, group).
    #[default]
    Summary,
    /// Every round including the forecast.
    Full,
}

impl std::str::FromStr for RecordLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summary" => Ok(RecordLevel::Summary),
            "full" | "full_ledger" => Ok(RecordLevel::Full),
            _ => Err(Error::invalid(format!("unknown record level {s:?} (expected summary|full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub horizon: u64,
    pub log_term: f64,
    pub max_depth: u32,
    pub family: GroupFamily,
    pub schedule: Schedule,
    pub refinement: Refinement,
    pub environment: EnvironmentSpec,
    pub learner_seed: u64,
    pub record_level: RecordLevel,
}

/// A forecast entry `(bin, π)`; dyadic bins encode as `[depth, k, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TripleRepr", into = "TripleRepr")]
pub struct Play {
    pub bin: BinLabel,
    pub prob: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TripleRepr {
    Dyadic(u32, u64, f64),
    Uniform { n: u64, k: u64, p: f64 },
}

impl From<TripleRepr> for Play {
    fn from(r: TripleRepr) -> Self {
        match r {
            TripleRepr::Dyadic(d, k, prob) => Play { bin: BinLabel::Dyadic(d, k), prob },
            TripleRepr::Uniform { n, k, p } => Play { bin: BinLabel::Uniform { n, k }, prob: p },
        }
    }
}

impl From<Play> for TripleRepr {
    fn from(p: Play) -> Self {
        match p.bin {
            BinLabel::Dyadic(d, k) => TripleRepr::Dyadic(d, k, p.prob),
            BinLabel::Uniform { n, k } => TripleRepr::Uniform { n, k, p: p.prob },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    #[serde(rename = "x")]
    pub context: Context,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<BinLabel>>,
    pub forecast: Vec<Play>,
    #[serde(rename = "p")]
    pub prediction: BinLabel,
    #[serde(rename = "y")]
    pub outcome: f64,
    #[serde(rename = "mu", default)]
    pub mean: Option<f64>,
    /// Wrapper's one-step bias `φ̂_t`.
    #[serde(rename = "phi")]
    pub phi_hat: f64,
}

impl RoundRecord {
    /// Realized prediction value `p_t`.
    pub fn prediction_value(&self) -> f64 {
        self.prediction.interval().midpoint
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub bin: BinLabel,
    pub activated: u64,
    /// Last active round; the horizon for bins never split.
    pub deactivated: u64,
    pub total_play: f64,
    pub split: bool,
}

/// Running sums `Σ_{t: p_t = v} g(x_t)(y_t − v)` per realized bin and group of `Ḡ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    entries: BTreeMap<BinLabel, BinBias>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinBias {
    pub count: u64,
    /// One sum per group of `Ḡ`.
    pub sums: Vec<f64>,
}

impl BiasTable {
    pub fn record(&mut self, bin: BinLabel, indicators: &[f64], outcome: f64) {
        let v = bin.interval().midpoint;
        let entry = self.entries.entry(bin).or_insert_with(|| BinBias { count: 0, sums: vec![0.0; indicators.len()] });
        entry.count += 1;
        for (s, g) in entry.sums.iter_mut().zip(indicators) {
            *s += g * (outcome - v);
        }
    }

    /// Entries ordered by prediction value.
    pub fn by_value(&self) -> Vec<(BinLabel, &BinBias)> {
        let mut v: Vec<_> = self.entries.iter().map(|(b, e)| (*b, e)).collect();
        v.sort_by(|a, b| a.0.interval().midpoint.total_cmp(&b.0.interval().midpoint));
        v
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rounds(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Footer {
    nodes: Vec<NodeRecord>,
    bias: Vec<(BinLabel, BinBias)>,
    experts_spawned: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Marker {
    Header(TranscriptHeader),
    Footer(Footer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    /// Empty at [`RecordLevel::Summary`].
    pub rounds: Vec<RoundRecord>,
    /// Every ever-active bin, in creation order.
    pub nodes: Vec<NodeRecord>,
    pub bias: BiasTable,
    pub experts_spawned: usize,
}

impl Transcript {
    pub fn has_ledger(&self) -> bool {
        self.header.record_level == RecordLevel::Full && self.rounds.len() as u64 == self.header.horizon
    }

    pub fn ever_active(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_depth_reached(&self) -> u32 {
        self.nodes.iter().filter_map(|n| n.bin.depth()).max().unwrap_or(0)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &Marker::Header(self.header.clone()))?;
        out.write_all(b"\n")?;
        for r in &self.rounds {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        let footer = Footer {
            nodes: self.nodes.clone(),
            bias: self.bias.entries.iter().map(|(b, e)| (*b, e.clone())).collect(),
            experts_spawned: self.experts_spawned,
        };
        serde_json::to_writer(&mut out, &Marker::Footer(footer))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a transcript; when rounds are present the bias table is rebuilt from them.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut footer = None;
        let mut rounds = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |e: serde_json::Error| Error::Transcript { line: i + 1, message: e.to_string() };
            if i == 0 {
                match serde_json::from_str::<Marker>(&line).map_err(malformed)? {
                    Marker::Header(h) => header = Some(h),
                    Marker::Footer(_) => {
                        return Err(Error::Transcript { line: 1, message: "expected header".into() })
                    }
                }
            } else if line.starts_with("{\"footer\"") {
                match serde_json::from_str::<Marker>(&line).map_err(malformed)? {
                    Marker::Footer(f) => footer = Some(f),
                    Marker::Header(_) => unreachable!(),
                }
            } else {
                rounds.push(serde_json::from_str::<RoundRecord>(&line).map_err(malformed)?);
            }
        }
        let header = header.ok_or(Error::Transcript { line: 1, message: "missing header".into() })?;
        let footer = footer.ok_or(Error::Transcript { line: 0, message: "missing footer".into() })?;
        let bias = if rounds.is_empty() {
            BiasTable { entries: footer.bias.into_iter().collect() }
        } else {
            let mut table = BiasTable::default();
            for r in &rounds {
                table.record(r.prediction, &header.family.indicators(&r.context), r.outcome);
            }
            table
        };
        Ok(Transcript { header, rounds, nodes: footer.nodes, bias, experts_spawned: footer.experts_spawned })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn play_encodes_as_triple() {
        let p = Play { bin: BinLabel::Dyadic(2, 3), prob: 0.25 };
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,3,0.25]");
        let back: Play = serde_json::from_str("[2,3,0.25]").unwrap();
        assert_eq!(back, p);
        let u = Play { bin: BinLabel::Uniform { n: 26, k: 4 }, prob: 1.0 };
        let back: Play = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn bias_table_orders_by_value() {
        let mut table = BiasTable::default();
        table.record(BinLabel::Dyadic(1, 1), &[1.0], 1.0);
        table.record(BinLabel::Dyadic(2, 0), &[1.0], 0.0);
        table.record(BinLabel::Dyadic(0, 0), &[1.0], 1.0);
        let order: Vec<BinLabel> = table.by_value().into_iter().map(|(b, _)| b).collect();
        assert_eq!(order, vec![BinLabel::Dyadic(2, 0), BinLabel::Dyadic(0, 0), BinLabel::Dyadic(1, 1)]);
        assert_eq!(table.rounds(), 3);
    }
}
