//! Seeded synthetic traces with page-level reuse.
//!
//! The generator walks a pool of 4KB pages visit by visit. Each page owns a
//! fixed set of hot lines; a visit touches a random subset of them. With
//! probability `revisit_prob` the next visit returns to a page seen earlier
//! in the current phase, skipping the `tlb_pressure` most recently visited
//! pages so that the L1 TLB has forgotten the page by the time it returns.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Op, TraceRecord};

/// Virtual base of generated pages.
pub const SYNTH_BASE: u64 = 0x10_0000_0000;
const PAGE: u64 = 4096;
const LINE: u64 = 64;
const LINES_PER_PAGE: u64 = PAGE / LINE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Pages in the pool; the footprint is `page_pool * 4KB`.
    pub page_pool: u64,
    /// The pool is split into this many consecutive working sets.
    pub phases: u64,
    pub hot_lines_min: u64,
    pub hot_lines_max: u64,
    pub lines_per_visit_min: u64,
    pub lines_per_visit_max: u64,
    pub revisit_prob: f64,
    /// Distinct pages that must separate two visits to the same page.
    pub tlb_pressure: u64,
    pub read_fraction: f64,
    pub accesses: u64,
    /// Instruction gaps are uniform in `[0, 2 * mean_gap]`.
    pub mean_gap: u64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            page_pool: 2048,
            phases: 1,
            hot_lines_min: 24,
            hot_lines_max: 48,
            lines_per_visit_min: 8,
            lines_per_visit_max: 24,
            revisit_prob: 0.9,
            tlb_pressure: 128,
            read_fraction: 0.8,
            accesses: 100_000,
            mean_gap: 4,
            seed: 1,
        }
    }
}

impl SynthParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: SynthParams = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(0.0..=1.0).contains(&self.revisit_prob) || !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.phases == 0 || self.page_pool < self.phases {
            return bad("need at least one page per phase");
        }
        if self.hot_lines_min == 0 || self.hot_lines_min > self.hot_lines_max || self.hot_lines_max > LINES_PER_PAGE {
            return bad("hot lines must satisfy 1 <= min <= max <= 64");
        }
        if self.lines_per_visit_min == 0 || self.lines_per_visit_min > self.lines_per_visit_max {
            return bad("lines per visit must satisfy 1 <= min <= max");
        }
        let last_page = self.page_pool.saturating_add(self.accesses);
        if SYNTH_BASE + last_page.saturating_mul(PAGE) >= 1 << 48 {
            return bad("generated addresses would exceed 48 bits");
        }
        Ok(())
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.page_pool * PAGE
    }
}

fn page_vaddr(page: u64) -> u64 {
    SYNTH_BASE + page * PAGE
}

/// The hot lines of `page`, fixed per (seed, page).
fn hot_lines(p: &SynthParams, page: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ page.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let count = rng.gen_range(p.hot_lines_min..=p.hot_lines_max) as usize;
    let mut lines: Vec<u64> = (0..LINES_PER_PAGE).collect();
    lines.shuffle(&mut rng);
    lines.truncate(count);
    lines
}

struct Phase {
    next_new: u64,
    end: u64,
    visited: Vec<u64>,
    recent: VecDeque<u64>,
    recent_set: HashSet<u64>,
}

impl Phase {
    fn new(p: &SynthParams, k: u64) -> Self {
        Phase {
            next_new: k * p.page_pool / p.phases,
            end: (k + 1) * p.page_pool / p.phases,
            visited: Vec::new(),
            recent: VecDeque::new(),
            recent_set: HashSet::new(),
        }
    }

    fn pick_revisit(&self, rng: &mut ChaCha8Rng) -> Option<u64> {
        if self.visited.len() <= self.recent_set.len() {
            return None;
        }
        (0..64).map(|_| self.visited[rng.gen_range(0..self.visited.len())]).find(|pg| !self.recent_set.contains(pg))
    }

    fn note_visit(&mut self, page: u64, pressure: u64) {
        if self.recent_set.insert(page) {
            self.recent.push_back(page);
        } else if let Some(i) = self.recent.iter().position(|&x| x == page) {
            self.recent.remove(i);
            self.recent.push_back(page);
        }
        while self.recent.len() as u64 > pressure {
            let old = self.recent.pop_front().unwrap();
            self.recent_set.remove(&old);
        }
    }
}

pub fn generate(p: &SynthParams) -> Result<Vec<TraceRecord>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = Vec::with_capacity(p.accesses as usize);
    let phase_len = p.accesses.div_ceil(p.phases).max(1);
    let mut phase_no = 0;
    let mut phase = Phase::new(p, 0);
    let mut overflow = p.page_pool;

    while (out.len() as u64) < p.accesses {
        let k = (out.len() as u64 / phase_len).min(p.phases - 1);
        if k != phase_no {
            phase_no = k;
            phase = Phase::new(p, k);
        }
        let wants_revisit = p.revisit_prob > 0.0 && rng.gen::<f64>() < p.revisit_prob;
        let revisit = if wants_revisit { phase.pick_revisit(&mut rng) } else { None };
        let page = match revisit {
            Some(pg) => pg,
            None if phase.next_new < phase.end => {
                let pg = phase.next_new;
                phase.next_new += 1;
                phase.visited.push(pg);
                pg
            }
            None if p.revisit_prob > 0.0 && !phase.visited.is_empty() => {
                phase.visited[rng.gen_range(0..phase.visited.len())]
            }
            None => {
                overflow += 1;
                overflow - 1
            }
        };
        phase.note_visit(page, p.tlb_pressure);

        let hot = hot_lines(p, page);
        let want = rng.gen_range(p.lines_per_visit_min..=p.lines_per_visit_max) as usize;
        for &line in hot.choose_multiple(&mut rng, want.min(hot.len())) {
            if out.len() as u64 >= p.accesses {
                break;
            }
            let gap = rng.gen_range(0..=2 * p.mean_gap);
            let op = if rng.gen::<f64>() < p.read_fraction { Op::Read } else { Op::Write };
            out.push(TraceRecord { gap, op, vaddr: page_vaddr(page) + line * LINE });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams { page_pool: 256, accesses: 5000, ..SynthParams::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthParams { seed: 2, ..small() }).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 5000);
    }

    #[test]
    fn no_revisits_touch_each_page_once() {
        let p = SynthParams { revisit_prob: 0.0, ..small() };
        let t = generate(&p).unwrap();
        // Pages appear in one contiguous run each.
        let mut seen = HashSet::new();
        let mut last = None;
        for r in &t {
            let page = r.vaddr / PAGE;
            if last != Some(page) {
                assert!(seen.insert(page), "page {page:#x} revisited");
                last = Some(page);
            }
        }
    }

    #[test]
    fn footprint_stays_in_pool_when_revisiting() {
        let p = SynthParams { accesses: 20_000, ..small() };
        let t = generate(&p).unwrap();
        let pages: HashSet<u64> = t.iter().map(|r| r.vaddr / PAGE).collect();
        assert!(pages.len() as u64 <= p.page_pool);
        assert!(t.iter().all(|r| r.vaddr >= SYNTH_BASE && r.vaddr < SYNTH_BASE + p.footprint_bytes()));
    }

    #[test]
    fn revisits_respect_tlb_pressure() {
        let p = SynthParams { accesses: 20_000, tlb_pressure: 64, ..small() };
        let t = generate(&p).unwrap();
        let mut visits: Vec<u64> = Vec::new();
        for r in &t {
            let page = r.vaddr / PAGE;
            if visits.last() != Some(&page) {
                visits.push(page);
            }
        }
        for (i, &pg) in visits.iter().enumerate() {
            let window = &visits[i.saturating_sub(64)..i];
            if let Some(j) = window.iter().rposition(|&x| x == pg) {
                let between: HashSet<_> = window[j + 1..].iter().collect();
                // Forced revisits only happen once the pool is exhausted.
                assert!(between.len() >= 64 || visits[..i].iter().collect::<HashSet<_>>().len() as u64 >= p.page_pool);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SynthParams { revisit_prob: 1.5, ..small() }.validate().is_err());
        assert!(SynthParams { hot_lines_max: 65, ..small() }.validate().is_err());
        assert!(SynthParams { phases: 0, ..small() }.validate().is_err());
        assert!(SynthParams::from_toml_str("bogus = 1").is_err());
        let p = SynthParams::from_toml_str("page_pool = 64\naccesses = 10\n").unwrap();
        assert_eq!(p.page_pool, 64);
    }
}
