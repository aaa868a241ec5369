//! Fixed-capacity replay store of observed images and their interactions.
//!
//! New entries carry priority 0.5 until they first take part in a forward
//! pass; afterwards the priority is `(score - 0.5)^2 + 0.02`, which is
//! smallest for images whose predicted masks overlap their noisy targets by
//! about one half. Sampling draws without replacement, proportionally to
//! priority, by sequential weighted draws with removal.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::headgrads::{distances_to, mask_mean, InteractionRecord};
use crate::imaging::io::{dequantize_depth, quantize_depth, quantize_unit};
use crate::imaging::{BinaryMask, DepthMap, Grid, Image3};

pub const DEFAULT_CAPACITY: usize = 20_000;
pub const FRESH_PRIORITY: f64 = 0.5;
pub const PRIORITY_FLOOR: f64 = 0.02;

pub fn priority(score: f64) -> f64 {
    (score - 0.5).powi(2) + PRIORITY_FLOOR
}

/// A frame kept at 8-bit colour and 16-bit depth.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredFrame {
    pub height: usize,
    pub width: usize,
    rgb: Vec<u8>,
    depth: Vec<u16>,
}

impl StoredFrame {
    pub fn new(rgb: &Image3, depth: &DepthMap) -> Self {
        Self {
            height: rgb.height,
            width: rgb.width,
            rgb: rgb.data.iter().map(|&v| quantize_unit(v)).collect(),
            depth: depth.data.iter().map(|&d| quantize_depth(d)).collect(),
        }
    }

    pub fn rgb(&self) -> Image3 {
        Image3 {
            height: self.height,
            width: self.width,
            data: self.rgb.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn depth(&self) -> DepthMap {
        DepthMap {
            height: self.height,
            width: self.width,
            data: self.depth.iter().map(|&q| dequantize_depth(q)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub frame: StoredFrame,
    pub records: Vec<InteractionRecord>,
    pub priority: f64,
    pub fresh: bool,
    pub id: u64,
}

impl BankEntry {
    pub fn masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.records.iter().filter(|r| r.feedback.is_success()).filter_map(|r| r.mask.as_ref())
    }
}

/// Minimum over the entry's masks of IoU between the mask and the cells
/// whose embedding lies within distance 1 of the mask mean; 0.5 without masks.
pub fn score(masks: &[&BinaryMask], e: &[Grid]) -> f64 {
    let mut best: Option<f64> = None;
    for m in masks {
        let Some(mean) = mask_mean(e, m) else { continue };
        let d = distances_to(e, &mean);
        let pred: Vec<bool> = d.data.iter().map(|&v| v < 1.0).collect();
        let inter = pred.iter().zip(&m.data).filter(|(a, b)| **a && **b).count();
        let uni = pred.iter().zip(&m.data).filter(|(a, b)| **a || **b).count();
        let iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
        best = Some(best.map_or(iou, |b: f64| b.min(iou)));
    }
    best.unwrap_or(0.5)
}

#[derive(Clone, Debug)]
pub struct Bank {
    capacity: usize,
    entries: VecDeque<BankEntry>,
    next_id: u64,
}

impl Bank {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "bank capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of entries ever inserted.
    pub fn inserted(&self) -> u64 {
        self.next_id
    }

    /// Store a new fresh entry; returns the evicted id when full.
    pub fn insert(&mut self, frame: StoredFrame, records: Vec<InteractionRecord>) -> Option<u64> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front().map(|e| e.id)
        } else {
            None
        };
        self.entries.push_back(BankEntry {
            frame,
            records,
            priority: FRESH_PRIORITY,
            fresh: true,
            id: self.next_id,
        });
        self.next_id += 1;
        evicted
    }

    fn slot(&self, id: u64) -> Option<usize> {
        let front = self.entries.front()?.id;
        let k = id.checked_sub(front)? as usize;
        (k < self.entries.len()).then_some(k)
    }

    pub fn get(&self, id: u64) -> Option<&BankEntry> {
        self.slot(id).map(|k| &self.entries[k])
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }

    pub fn update_priority(&mut self, id: u64, score: f64) -> Result<()> {
        let k = self
            .slot(id)
            .ok_or_else(|| Error::InvalidArgument(format!("bank entry {id} is not present")))?;
        let e = &mut self.entries[k];
        e.priority = priority(score.clamp(0.0, 1.0));
        e.fresh = false;
        Ok(())
    }

    /// `n` distinct ids. With `prioritized` unset every entry weighs the same.
    pub fn sample<R: Rng>(&self, n: usize, prioritized: bool, rng: &mut R) -> Result<Vec<u64>> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!("cannot draw {n} entries from a bank of {}", self.len())));
        }
        let mut weights: Vec<f64> = if prioritized {
            self.entries.iter().map(|e| e.priority).collect()
        } else {
            vec![1.0; self.len()]
        };
        let mut total: f64 = weights.iter().sum();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (k, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                pick = Some(k);
                if u < w {
                    break;
                }
                u -= w;
            }
            // rounding can run past the end; `pick` then holds the last live slot
            let k = pick.expect("a live entry remains");
            out.push(self.entries[k].id);
            total -= weights[k];
            weights[k] = 0.0;
            if total <= 0.0 {
                total = weights.iter().sum();
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> BankStats {
        BankStats {
            capacity: self.capacity,
            inserted: self.next_id,
            entries: self.entries.iter().map(|e| (e.id, e.priority, e.fresh)).collect(),
        }
    }
}

/// Priorities and ages of the bank contents, written next to checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct BankStats {
    pub capacity: usize,
    pub inserted: u64,
    pub entries: Vec<(u64, f64, bool)>,
}

impl BankStats {
    pub fn to_text(&self) -> String {
        let mut s = format!("bank v1 capacity={} inserted={}\n", self.capacity, self.inserted);
        for (id, p, fresh) in &self.entries {
            let _ = writeln!(s, "entry id={id} priority={p:e} fresh={}", *fresh as u8);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::malformed(path, format!("line {line}: {why}"));
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = head.split_whitespace();
        if fields.next() != Some("bank") || fields.next() != Some("v1") {
            return Err(bad(1, "expected header `bank v1`"));
        }
        let kv = |tok: Option<&str>, key: &str, line: usize| -> Result<String> {
            tok.and_then(|t| t.strip_prefix(key)).and_then(|t| t.strip_prefix('=')).map(str::to_string).ok_or_else(|| bad(line, &format!("missing {key}=")))
        };
        let capacity = kv(fields.next(), "capacity", 1)?.parse().map_err(|_| bad(1, "bad capacity"))?;
        let inserted = kv(fields.next(), "inserted", 1)?.parse().map_err(|_| bad(1, "bad inserted"))?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            if f.next() != Some("entry") {
                return Err(bad(i + 1, "expected `entry`"));
            }
            let id = kv(f.next(), "id", i + 1)?.parse().map_err(|_| bad(i + 1, "bad id"))?;
            let p = kv(f.next(), "priority", i + 1)?.parse().map_err(|_| bad(i + 1, "bad priority"))?;
            let fresh = match kv(f.next(), "fresh", i + 1)?.as_str() {
                "0" => false,
                "1" => true,
                _ => return Err(bad(i + 1, "fresh must be 0 or 1")),
            };
            entries.push((id, p, fresh));
        }
        Ok(Self {
            capacity,
            inserted,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn mean_priority(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.1).sum::<f64>() / self.entries.len() as f64
    }

    /// Human-readable size, priority histogram and age distribution.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "size {} / {} (inserted {})\nmean priority {:.4}\n",
            self.entries.len(),
            self.capacity,
            self.inserted,
            self.mean_priority()
        );
        let fresh = self.entries.iter().filter(|e| e.2).count();
        let _ = writeln!(s, "fresh (0.5) {fresh}");
        let edges = [0.02, 0.05, 0.10, 0.15, 0.20, 0.27 + 1e-12];
        s.push_str("priority histogram of updated entries\n");
        for w in edges.windows(2) {
            let c = self.entries.iter().filter(|e| !e.2 && e.1 >= w[0] && e.1 < w[1]).count();
            let _ = writeln!(s, "  [{:.2}, {:.2}) {c}", w[0], w[1].min(0.27));
        }
        s.push_str("age (insertions since entry)\n");
        let ages: Vec<u64> = self.entries.iter().map(|e| self.inserted - 1 - e.0).collect();
        let mut bound = 100u64;
        let mut lo = 0u64;
        while lo <= ages.iter().copied().max().unwrap_or(0) {
            let c = ages.iter().filter(|&&a| a >= lo && a < bound).count();
            let _ = writeln!(s, "  [{lo}, {bound}) {c}");
            lo = bound;
            bound *= 2;
        }
        s
    }
}
