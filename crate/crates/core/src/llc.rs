//! The LLC slice: SRAM tags, the data array's functional contents and the
//! busy-interval tracker for its (possibly non-pipelined) data array.
//!
//! The cache is a victim of L2: lines arrive as L2 victims and leave on a
//! read hit. Under the page-row layout every line of a 4KB frame maps to
//! the same physical row, and a line's position in the row is
//! `set * ways + way`.

use std::fmt::Write as _;

use crate::config::{Indexing, SimConfig};
use crate::error::Result;
use crate::geometry::{
    decompose_clr, decompose_conventional, derive_conventional, derive_geometry, ConventionalGeometry,
    LayoutGeometry,
};
use crate::page_buffer::SnapshotLine;

#[derive(Debug, Clone)]
pub enum LlcLayout {
    PageRow(LayoutGeometry),
    Conventional(ConventionalGeometry),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LlcTagEntry {
    pub valid: bool,
    pub dirty: bool,
    /// Line address (`pa >> line bits`); tag-high and tag-low are slices of it.
    pub line: u64,
    pub stamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClrLookup {
    pub hit: bool,
    pub way: Option<usize>,
    /// Slot within the physical row (the way for conventional indexing).
    pub position: u64,
    pub region: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PtrScan {
    pub population: u32,
    /// Row positions holding a valid line of the requested page.
    pub valid_positions: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlcLine {
    pub paddr: u64,
    pub data: u64,
    pub dirty: bool,
    pub position: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteOutcome {
    /// The line was not present and took a way.
    pub installed: bool,
    pub position: u64,
    pub evicted: Option<LlcLine>,
}

/// Busy intervals of one data array. Accesses never overlap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DataArray {
    pub busy_until: u64,
    pub busy_total: u64,
}

impl DataArray {
    pub fn is_free(&self, now: u64) -> bool {
        self.busy_until <= now
    }

    /// Occupies the array for `duration` cycles from the first free cycle at
    /// or after `earliest`; returns the start cycle.
    pub fn reserve(&mut self, earliest: u64, duration: u64) -> u64 {
        let start = earliest.max(self.busy_until);
        self.busy_until = start + duration;
        self.busy_total += duration;
        start
    }
}

#[derive(Debug, Clone)]
pub struct Llc {
    layout: LlcLayout,
    ways: usize,
    sets_per_slice: u64,
    line_bits: u32,
    lines_per_region: u64,
    tags: Vec<LlcTagEntry>,
    data: Vec<u64>,
    clock: u64,
}

impl Llc {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let (layout, sets_per_slice) = match cfg.llc.indexing {
            Indexing::PageRow => {
                let g = derive_geometry(cfg)?;
                let sets = g.rows_per_slice * g.sets_per_row;
                (LlcLayout::PageRow(g), sets)
            }
            Indexing::Conventional => {
                let g = derive_conventional(cfg)?;
                let sets = g.sets;
                (LlcLayout::Conventional(g), sets)
            }
        };
        let ways = cfg.llc.ways;
        let slots = (sets_per_slice * cfg.llc.slices) as usize * ways;
        Ok(Llc {
            layout,
            ways,
            sets_per_slice,
            line_bits: cfg.core.line_size.trailing_zeros(),
            lines_per_region: (cfg.pb.size / cfg.core.line_size).max(1),
            tags: vec![LlcTagEntry::default(); slots],
            data: vec![0; slots],
            clock: 0,
        })
    }

    pub fn layout(&self) -> &LlcLayout {
        &self.layout
    }

    pub fn page_row(&self) -> Option<&LayoutGeometry> {
        match &self.layout {
            LlcLayout::PageRow(g) => Some(g),
            LlcLayout::Conventional(_) => None,
        }
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn capacity_lines(&self) -> usize {
        self.tags.len()
    }

    pub fn slice_of(&self, pa: u64) -> usize {
        match &self.layout {
            LlcLayout::PageRow(g) => g.slice.extract(pa) as usize,
            LlcLayout::Conventional(g) => g.slice.extract(pa) as usize,
        }
    }

    /// Global set number of `pa` and the row-position of way 0 in that set.
    #[inline]
    fn locate(&self, pa: u64) -> (u64, u64) {
        match &self.layout {
            LlcLayout::PageRow(g) => {
                let idx = decompose_clr(pa, g);
                let set = (idx.slice * g.rows_per_slice + idx.row) * g.sets_per_row + idx.set;
                (set, idx.set * g.ways)
            }
            LlcLayout::Conventional(g) => {
                let idx = decompose_conventional(pa, g);
                (idx.slice * self.sets_per_slice + idx.set, 0)
            }
        }
    }

    #[inline]
    fn line_of(&self, pa: u64) -> u64 {
        pa >> self.line_bits
    }

    fn find(&self, pa: u64) -> (usize, Option<usize>, u64) {
        let (set, base_pos) = self.locate(pa);
        let first = set as usize * self.ways;
        let line = self.line_of(pa);
        let way = (0..self.ways).find(|&w| {
            let t = &self.tags[first + w];
            t.valid && t.line == line
        });
        (first, way, base_pos)
    }

    fn lookup(&self, pa: u64) -> ClrLookup {
        let (_, way, base) = self.find(pa);
        let position = base + way.unwrap_or(0) as u64;
        ClrLookup {
            hit: way.is_some(),
            way,
            position,
            region: self.region_of(pa),
        }
    }

    /// Row region the set of `pa` falls in (0 for conventional indexing).
    pub fn region_of(&self, pa: u64) -> u64 {
        let (_, base) = self.locate(pa);
        base / self.lines_per_region
    }

    /// CLR lookup; a hit becomes most recently used.
    pub fn lookup_clr(&mut self, pa: u64) -> ClrLookup {
        let r = self.lookup(pa);
        if let Some(way) = r.way {
            let (first, _, _) = self.find(pa);
            self.clock += 1;
            self.tags[first + way].stamp = self.clock;
        }
        r
    }

    /// CLR lookup without touching LRU state.
    pub fn probe(&self, pa: u64) -> ClrLookup {
        self.lookup(pa)
    }

    pub fn contains(&self, pa: u64) -> bool {
        self.find(pa).1.is_some()
    }

    pub fn read_line(&self, pa: u64) -> Option<u64> {
        let (first, way, _) = self.find(pa);
        way.map(|w| self.data[first + w])
    }

    /// Page-wide tag-high match over the row of `frame_base`. Touches
    /// neither the data array nor LRU state.
    pub fn lookup_ptr(&self, frame_base: u64) -> PtrScan {
        let mut scan = PtrScan::default();
        match &self.layout {
            LlcLayout::PageRow(g) => {
                let (set0, _) = self.locate(frame_base & !0xFFF);
                let first = set0 as usize * self.ways;
                let th = g.tag_high.extract(frame_base);
                for (pos, t) in self.tags[first..first + g.lines_per_page as usize].iter().enumerate() {
                    if t.valid && g.tag_high.extract(t.line << self.line_bits) == th {
                        scan.population += 1;
                        scan.valid_positions.push(pos as u64);
                    }
                }
            }
            LlcLayout::Conventional(_) => {
                // No row to scan: probe each line of the 4KB frame.
                let frame = frame_base & !0xFFF;
                for i in 0..(4096u64 >> self.line_bits) {
                    if self.contains(frame + (i << self.line_bits)) {
                        scan.population += 1;
                        scan.valid_positions.push(i);
                    }
                }
            }
        }
        scan
    }

    /// Data of the given row positions of `frame_base`'s row, in ascending
    /// position order. Page-row layout only.
    pub fn read_row(&self, frame_base: u64, positions: &[u64]) -> Vec<SnapshotLine> {
        let g = self.page_row().expect("row reads need the page-row layout");
        let (set, _) = self.locate(frame_base & !0xFFF);
        let first = set as usize * self.ways;
        let mut lines: Vec<SnapshotLine> = positions
            .iter()
            .map(|&p| SnapshotLine { position: p, data: self.data[first + p as usize] })
            .collect();
        debug_assert!(positions.iter().all(|&p| p < g.lines_per_page));
        lines.sort_by_key(|l| l.position);
        lines
    }

    /// Physical address of the valid line at row `position` of `frame_base`'s row.
    pub fn line_at(&self, frame_base: u64, position: u64) -> Option<u64> {
        self.page_row()?;
        let (set, _) = self.locate(frame_base & !0xFFF);
        let t = &self.tags[set as usize * self.ways + position as usize];
        t.valid.then_some(t.line << self.line_bits)
    }

    /// Places an absent line in a free way, else the LRU way.
    pub fn install_victim(&mut self, pa: u64, data: u64, dirty: bool) -> WriteOutcome {
        let (first, way, base) = self.find(pa);
        debug_assert!(way.is_none(), "install of a resident line {pa:#x}");
        let victim = (0..self.ways)
            .find(|&w| !self.tags[first + w].valid)
            .unwrap_or_else(|| (0..self.ways).min_by_key(|&w| self.tags[first + w].stamp).unwrap());
        let slot = first + victim;
        let old = self.tags[slot];
        let evicted = old.valid.then(|| LlcLine {
            paddr: old.line << self.line_bits,
            data: self.data[slot],
            dirty: old.dirty,
            position: base + victim as u64,
        });
        self.clock += 1;
        self.tags[slot] = LlcTagEntry { valid: true, dirty, line: self.line_of(pa), stamp: self.clock };
        self.data[slot] = data;
        WriteOutcome { installed: true, position: base + victim as u64, evicted }
    }

    /// Write of an L2 victim or write-back: updates a resident line in
    /// place, otherwise installs it.
    pub fn write_line(&mut self, pa: u64, data: u64, dirty: bool) -> WriteOutcome {
        let (first, way, base) = self.find(pa);
        match way {
            Some(w) => {
                self.clock += 1;
                let t = &mut self.tags[first + w];
                t.dirty |= dirty;
                t.stamp = self.clock;
                self.data[first + w] = data;
                WriteOutcome { installed: false, position: base + w as u64, evicted: None }
            }
            None => self.install_victim(pa, data, dirty),
        }
    }

    /// Resets the valid bit of `pa`, returning what it held. Idempotent.
    pub fn invalidate(&mut self, pa: u64) -> Option<LlcLine> {
        let (first, way, base) = self.find(pa);
        let w = way?;
        let t = &mut self.tags[first + w];
        t.valid = false;
        Some(LlcLine { paddr: pa & !((1 << self.line_bits) - 1), data: self.data[first + w], dirty: t.dirty, position: base + w as u64 })
    }

    pub fn valid_lines(&self) -> impl Iterator<Item = LlcLine> + '_ {
        let ways = self.ways as u64;
        let per_row = self.page_row().map(|g| g.sets_per_row);
        self.tags.iter().enumerate().filter(|(_, t)| t.valid).map(move |(i, t)| {
            let set = i as u64 / ways;
            let way = i as u64 % ways;
            LlcLine {
                paddr: t.line << self.line_bits,
                data: self.data[i],
                dirty: t.dirty,
                position: per_row.map_or(way, |n| (set % n) * ways + way),
            }
        })
    }

    pub fn valid_count(&self) -> usize {
        self.tags.iter().filter(|t| t.valid).count()
    }

    /// Text dump of the valid tag entries, one per line:
    /// page-row `row <r> set <s> way <w> pos <p> th=<hex> tl=<hex> <C|D> data=<hex>`,
    /// conventional `set <s> way <w> tag=<hex> <C|D> data=<hex>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tags.iter().enumerate().filter(|(_, t)| t.valid) {
            let set = (i / self.ways) as u64;
            let way = i % self.ways;
            let pa = t.line << self.line_bits;
            let d = if t.dirty { 'D' } else { 'C' };
            let data = self.data[i];
            match &self.layout {
                LlcLayout::PageRow(g) => {
                    let idx = decompose_clr(pa, g);
                    let _ = writeln!(
                        out,
                        "row {} set {} way {way} pos {} th={:#x} tl={:#x} {d} data={data:#x}",
                        set / g.sets_per_row,
                        idx.set,
                        idx.set * g.ways + way as u64,
                        idx.tag_high,
                        idx.tag_low
                    );
                }
                LlcLayout::Conventional(g) => {
                    let idx = decompose_conventional(pa, g);
                    let _ = writeln!(out, "set {set} way {way} tag={:#x} {d} data={data:#x}", idx.tag);
                }
            }
        }
        out
    }
}
