//! SRAM page buffers and their tag array.
//!
//! A page buffer holds up to `lines_per_region` lines of one page. A 4KB
//! physical row is split into `regions_per_page` regions of PB size that are
//! multiplexed onto the same slots: the line at row position `p` may only
//! occupy slot `p % lines_per_region`, and the slot's region bits record
//! which region `p / lines_per_region` it came from.
//!
//! Page buffers carry no valid bits of their own. The LLC tags gate every
//! read, and the residency counter tracks how many slot occupants are still
//! valid in the LLC.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::config::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PbSlot {
    pub occupied: bool,
    /// The occupant is currently valid in the LLC tags.
    pub live: bool,
    pub region: u32,
    pub data: u64,
    /// Promoted and not yet read from the buffer.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageBuffer {
    pub ppn: Option<u64>,
    pub slots: Vec<PbSlot>,
    pub residency: u32,
    counter: u32,
    last_touch: u64,
    /// Cycle from which the buffer can serve reads; `None` while the row
    /// read that fills it is still queued.
    pub ready_at: Option<u64>,
    /// Bumped on every promotion so stale fill completions can be ignored.
    pub generation: u64,
}

/// Snapshot of a page buffer's tag entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbTagEntry {
    pub ppn: u64,
    pub replacement_counter: u32,
    pub residency_counter: u32,
    /// Region of each slot's occupant, `None` for empty slots.
    pub regions: Vec<Option<u32>>,
}

/// One line read out of a physical row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotLine {
    pub position: u64,
    pub data: u64,
}

/// Outcome of the parallel PPN / region check on an LLC read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PbLookup {
    pub pb: Option<usize>,
    pub pb_hit: bool,
    /// PPN and LLC tags both hit, so the region check lengthens the path.
    pub extra_cycle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteEffect {
    NotResident,
    Updated,
    Installed,
    Unchanged,
}

#[derive(Debug, Clone)]
pub struct PageBufferSet {
    bufs: Vec<PageBuffer>,
    by_ppn: HashMap<u64, usize>,
    lines_per_region: u64,
    threshold: u32,
    period: u32,
    counter_max: u32,
}

impl PageBufferSet {
    pub fn new(cfg: &SimConfig) -> Self {
        let lines_per_region = cfg.pb.size / cfg.core.line_size;
        let counter_max = if cfg.pb.replacement_counter_bits >= 32 {
            u32::MAX
        } else {
            (1u32 << cfg.pb.replacement_counter_bits) - 1
        };
        let empty = PageBuffer {
            ppn: None,
            slots: vec![PbSlot::default(); lines_per_region as usize],
            residency: 0,
            counter: 0,
            last_touch: 0,
            ready_at: None,
            generation: 0,
        };
        PageBufferSet {
            bufs: vec![empty; cfg.pb.count],
            by_ppn: HashMap::new(),
            lines_per_region,
            threshold: cfg.pb.threshold,
            period: cfg.pb.activation_period,
            counter_max,
        }
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn buffer(&self, pb: usize) -> &PageBuffer {
        &self.bufs[pb]
    }

    pub fn buffers(&self) -> &[PageBuffer] {
        &self.bufs
    }

    pub fn lines_per_region(&self) -> u64 {
        self.lines_per_region
    }

    #[inline]
    pub fn slot_of(&self, position: u64) -> (usize, u32) {
        ((position % self.lines_per_region) as usize, (position / self.lines_per_region) as u32)
    }

    pub fn position_of(&self, slot: usize, region: u32) -> u64 {
        u64::from(region) * self.lines_per_region + slot as u64
    }

    pub fn find_pb(&self, ppn: u64) -> Option<usize> {
        self.by_ppn.get(&ppn).copied()
    }

    pub fn gate_promotion(&self, population: u32) -> bool {
        population >= self.threshold
    }

    fn recompute(&self, residency: u32) -> u32 {
        residency.saturating_mul(self.period).min(self.counter_max)
    }

    /// Replacement counter after lazy per-cycle decay up to `now`.
    pub fn effective_counter(&self, pb: usize, now: u64) -> u32 {
        let b = &self.bufs[pb];
        let idle = now.saturating_sub(b.last_touch);
        u64::from(b.counter).saturating_sub(idle) as u32
    }

    /// A PB access: reload the counter from the residency.
    pub fn touch(&mut self, pb: usize, now: u64) {
        let counter = self.recompute(self.bufs[pb].residency);
        let b = &mut self.bufs[pb];
        b.counter = counter;
        b.last_touch = now;
    }

    /// Lowest-numbered never-used buffer, else the lowest-numbered buffer
    /// whose counter has decayed to zero.
    pub fn select_victim_pb(&self, now: u64) -> Option<usize> {
        self.bufs
            .iter()
            .position(|b| b.ppn.is_none())
            .or_else(|| (0..self.bufs.len()).find(|&i| self.effective_counter(i, now) == 0))
    }

    /// Loads `lines` (ascending row positions of page `ppn`) into buffer
    /// `pb`. On a slot conflict the line from `trigger_region` wins;
    /// otherwise the first line placed stays.
    pub fn promote(
        &mut self,
        pb: usize,
        ppn: u64,
        lines: &[SnapshotLine],
        trigger_region: u32,
        now: u64,
    ) -> PbTagEntry {
        if let Some(old) = self.bufs[pb].ppn.take() {
            self.by_ppn.remove(&old);
        }
        debug_assert!(!self.by_ppn.contains_key(&ppn), "page already buffered");
        let lpr = self.lines_per_region;
        let b = &mut self.bufs[pb];
        b.slots.iter_mut().for_each(|s| *s = PbSlot::default());
        for line in lines {
            let slot = (line.position % lpr) as usize;
            let region = (line.position / lpr) as u32;
            let s = &mut b.slots[slot];
            if !s.occupied || (region == trigger_region && s.region != trigger_region) {
                *s = PbSlot { occupied: true, live: true, region, data: line.data, fresh: true };
            }
        }
        b.residency = b.slots.iter().filter(|s| s.live).count() as u32;
        b.ppn = Some(ppn);
        b.ready_at = None;
        b.generation += 1;
        self.by_ppn.insert(ppn, pb);
        self.touch(pb, now);
        self.tag_entry(pb, now)
    }

    /// Sets when buffer `pb` can serve reads, unless it has been reloaded
    /// since `generation`.
    pub fn mark_ready(&mut self, pb: usize, generation: u64, at: u64) -> bool {
        let b = &mut self.bufs[pb];
        let current = b.generation == generation && b.ppn.is_some();
        if current {
            b.ready_at = Some(at);
        }
        current
    }

    /// Drops a buffer's page without loading a new one.
    pub fn evict(&mut self, pb: usize) {
        if let Some(old) = self.bufs[pb].ppn.take() {
            self.by_ppn.remove(&old);
        }
        let b = &mut self.bufs[pb];
        b.slots.iter_mut().for_each(|s| *s = PbSlot::default());
        b.residency = 0;
        b.counter = 0;
        b.ready_at = None;
        b.generation += 1;
    }

    /// Region check for a read of row `position` of page `ppn`, run after
    /// the LLC tag lookup. `now` is the cycle the region bit is read.
    pub fn pb_lookup(&self, ppn: u64, llc_hit: bool, position: u64, now: u64) -> PbLookup {
        let pb = self.find_pb(ppn);
        let Some(id) = pb else {
            return PbLookup::default();
        };
        if !llc_hit {
            return PbLookup { pb, pb_hit: false, extra_cycle: false };
        }
        let (slot, region) = self.slot_of(position);
        let b = &self.bufs[id];
        let s = &b.slots[slot];
        let ready = b.ready_at.is_some_and(|r| r <= now);
        PbLookup { pb, pb_hit: ready && s.occupied && s.live && s.region == region, extra_cycle: true }
    }

    /// Whether the region bits claim `position` even though its occupant is
    /// not live. Used by the inclusion audit.
    pub fn claims_dead_line(&self, pb: usize, position: u64) -> bool {
        let (slot, region) = self.slot_of(position);
        let s = &self.bufs[pb].slots[slot];
        s.occupied && !s.live && s.region == region
    }

    /// A line was read out of the buffer and moved to the private caches.
    /// Returns the slot data and whether this was the first read of a
    /// promoted line.
    pub fn on_pb_read_hit(&mut self, pb: usize, position: u64, now: u64) -> (u64, bool) {
        let (slot, _) = self.slot_of(position);
        let b = &mut self.bufs[pb];
        let s = &mut b.slots[slot];
        debug_assert!(s.live);
        let first = std::mem::take(&mut s.fresh);
        if s.live {
            s.live = false;
            b.residency = b.residency.saturating_sub(1);
        }
        let data = s.data;
        self.touch(pb, now);
        (data, first)
    }

    /// Mirrors an LLC write of row `position` of page `ppn`.
    pub fn on_llc_write(&mut self, ppn: u64, position: u64, data: u64, now: u64) -> WriteEffect {
        let Some(pb) = self.find_pb(ppn) else {
            return WriteEffect::NotResident;
        };
        let (slot, region) = self.slot_of(position);
        let b = &mut self.bufs[pb];
        let s = &mut b.slots[slot];
        let effect = if s.occupied && s.live && s.region == region {
            s.data = data;
            WriteEffect::Updated
        } else if !s.occupied || !s.live {
            *s = PbSlot { occupied: true, live: true, region, data, fresh: false };
            b.residency += 1;
            WriteEffect::Installed
        } else {
            WriteEffect::Unchanged
        };
        if effect != WriteEffect::Unchanged {
            self.touch(pb, now);
        }
        effect
    }

    /// The LLC copy of row `position` of page `ppn` was invalidated or
    /// evicted. Returns true if a live slot occupant was lost.
    pub fn on_llc_invalidate(&mut self, ppn: u64, position: u64) -> bool {
        let Some(pb) = self.find_pb(ppn) else {
            return false;
        };
        let (slot, region) = self.slot_of(position);
        let b = &mut self.bufs[pb];
        let s = &mut b.slots[slot];
        if s.occupied && s.live && s.region == region {
            s.live = false;
            s.fresh = false;
            b.residency = b.residency.saturating_sub(1);
            true
        } else {
            false
        }
    }

    pub fn tag_entry(&self, pb: usize, now: u64) -> PbTagEntry {
        let b = &self.bufs[pb];
        PbTagEntry {
            ppn: b.ppn.unwrap_or(0),
            replacement_counter: self.effective_counter(pb, now),
            residency_counter: b.residency,
            regions: b.slots.iter().map(|s| s.occupied.then_some(s.region)).collect(),
        }
    }

    /// Text dump of the PB tags, one line per loaded buffer:
    /// `pb <id> ppn=<hex> repl=<n> res=<n> regions=<digit per slot, '.' empty>`.
    pub fn dump(&self, now: u64) -> String {
        let mut out = String::new();
        for (i, b) in self.bufs.iter().enumerate() {
            let Some(ppn) = b.ppn else { continue };
            let regions: String = b
                .slots
                .iter()
                .map(|s| if s.occupied { char::from_digit(s.region, 36).unwrap_or('?') } else { '.' })
                .collect();
            let _ = writeln!(
                out,
                "pb {i} ppn={ppn:#x} repl={} res={} regions={regions}",
                self.effective_counter(i, now),
                b.residency
            );
        }
        out
    }
}
