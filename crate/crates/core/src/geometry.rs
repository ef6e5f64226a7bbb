//! Address arithmetic for the LLC layouts.
//!
//! The page-row layout slices a 48-bit physical address as
//!
//! ```text
//!  47        tag-high       | slice | row index | tag-low | set | offset 0
//! ```
//!
//! Row index, slice and tag-high are drawn from the physical page number
//! only, so every line of a 4KB page lands in the same physical row and a
//! page-wide probe only has to compare tag-high.

use num_traits::Float;

use crate::config::{Indexing, SimConfig, PHYS_ADDR_BITS};
use crate::error::{Error, Result};

/// A contiguous bit range `[lo, lo + width)` of an address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BitField {
    pub lo: u32,
    pub width: u32,
}

impl BitField {
    pub const fn new(lo: u32, width: u32) -> Self {
        BitField { lo, width }
    }

    /// Inclusive high bit, `None` for an empty field.
    pub fn hi(&self) -> Option<u32> {
        (self.width > 0).then(|| self.lo + self.width - 1)
    }

    pub fn mask(&self) -> u64 {
        if self.width >= 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    #[inline]
    pub fn extract(&self, addr: u64) -> u64 {
        if self.width == 0 {
            0
        } else {
            (addr >> self.lo) & self.mask()
        }
    }

    #[inline]
    pub fn insert(&self, addr: u64, value: u64) -> u64 {
        if self.width == 0 {
            return addr;
        }
        (addr & !(self.mask() << self.lo)) | ((value & self.mask()) << self.lo)
    }
}

/// Field layout and row organisation of a page-row LLC slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutGeometry {
    pub rows_per_slice: u64,
    pub sets_per_row: u64,
    pub ways: u64,
    pub slices: u64,
    pub offset: BitField,
    pub set: BitField,
    pub tag_low: BitField,
    pub row: BitField,
    pub slice: BitField,
    pub tag_high: BitField,
    pub lines_per_page: u64,
    pub regions_per_page: u64,
    pub lines_per_region: u64,
}

/// Where a single line lives under the page-row layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClrIndex {
    pub slice: u64,
    pub row: u64,
    pub set: u64,
    pub tag_high: u64,
    pub tag_low: u64,
    pub offset: u64,
}

/// Row lookup for a page transfer request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PtrIndex {
    pub slice: u64,
    pub row: u64,
    pub tag_high: u64,
}

/// Plain set-associative split used by the non-page-row schemes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConventionalGeometry {
    pub sets: u64,
    pub ways: u64,
    pub slices: u64,
    pub offset: BitField,
    pub set: BitField,
    pub slice: BitField,
    pub tag: BitField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConventionalIndex {
    pub slice: u64,
    pub set: u64,
    pub tag: u64,
    pub offset: u64,
}

fn log2(v: u64) -> u32 {
    debug_assert!(v.is_power_of_two());
    v.trailing_zeros()
}

fn check_pow2(name: &str, v: u64) -> Result<()> {
    if v.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {v} is not a power of two")))
    }
}

/// Derives the page-row layout for `config`'s LLC slice.
pub fn derive_geometry(config: &SimConfig) -> Result<LayoutGeometry> {
    let line = config.core.line_size;
    let page = config.core.page_size;
    let slice_size = config.llc.slice_size;
    let ways = config.llc.ways as u64;
    check_pow2("line size", line)?;
    check_pow2("page size", page)?;
    check_pow2("slice size", slice_size)?;
    check_pow2("slice count", config.llc.slices)?;
    check_pow2("pb size", config.pb.size)?;
    if page < line || slice_size < page {
        return Err(Error::config("need line size <= page size <= slice size"));
    }
    let lines_per_page = page / line;
    if config.llc.indexing == Indexing::PageRow {
        if ways > lines_per_page {
            return Err(Error::config(format!(
                "{ways} ways exceed the {lines_per_page} lines of a page"
            )));
        }
        check_pow2("llc ways", ways)?;
    }
    let pb = config.pb.size.clamp(line, page);
    let rows_per_slice = slice_size / page;
    let sets_per_row = (lines_per_page / ways).max(1);

    let offset = BitField::new(0, log2(line));
    let set = BitField::new(offset.lo + offset.width, log2(sets_per_row));
    let page_bits = log2(page);
    let tag_low = BitField::new(set.lo + set.width, page_bits - set.lo - set.width);
    let row = BitField::new(page_bits, log2(rows_per_slice));
    let slice = BitField::new(row.lo + row.width, log2(config.llc.slices));
    let th_lo = slice.lo + slice.width;
    if th_lo > PHYS_ADDR_BITS {
        return Err(Error::config("layout needs more than 48 physical address bits"));
    }
    let tag_high = BitField::new(th_lo, PHYS_ADDR_BITS - th_lo);

    Ok(LayoutGeometry {
        rows_per_slice,
        sets_per_row,
        ways,
        slices: config.llc.slices,
        offset,
        set,
        tag_low,
        row,
        slice,
        tag_high,
        lines_per_page,
        regions_per_page: page / pb,
        lines_per_region: pb / line,
    })
}

impl LayoutGeometry {
    /// Physical row position (0..lines_per_page) of `way` in set `set`.
    #[inline]
    pub fn position(&self, set: u64, way: u64) -> u64 {
        set * self.ways + way
    }

    #[inline]
    pub fn region_of_position(&self, position: u64) -> u64 {
        position / self.lines_per_region
    }

    /// The row region a set's ways fall into.
    #[inline]
    pub fn region_of_set(&self, set: u64) -> u64 {
        self.region_of_position(self.position(set, 0))
    }
}

/// Splits `pa` into row, set, tags and offset.
#[inline]
pub fn decompose_clr(pa: u64, geom: &LayoutGeometry) -> ClrIndex {
    ClrIndex {
        slice: geom.slice.extract(pa),
        row: geom.row.extract(pa),
        set: geom.set.extract(pa),
        tag_high: geom.tag_high.extract(pa),
        tag_low: geom.tag_low.extract(pa),
        offset: geom.offset.extract(pa),
    }
}

/// Inverse of [`decompose_clr`].
pub fn recompose_clr(idx: &ClrIndex, geom: &LayoutGeometry) -> u64 {
    let mut pa = 0;
    pa = geom.offset.insert(pa, idx.offset);
    pa = geom.set.insert(pa, idx.set);
    pa = geom.tag_low.insert(pa, idx.tag_low);
    pa = geom.row.insert(pa, idx.row);
    pa = geom.slice.insert(pa, idx.slice);
    geom.tag_high.insert(pa, idx.tag_high)
}

/// Row and tag-high of the page containing `pa`; page-offset bits are ignored.
#[inline]
pub fn decompose_ptr(pa: u64, geom: &LayoutGeometry) -> PtrIndex {
    PtrIndex {
        slice: geom.slice.extract(pa),
        row: geom.row.extract(pa),
        tag_high: geom.tag_high.extract(pa),
    }
}

pub fn derive_conventional(config: &SimConfig) -> Result<ConventionalGeometry> {
    let line = config.core.line_size;
    let ways = config.llc.ways as u64;
    check_pow2("line size", line)?;
    check_pow2("slice size", config.llc.slice_size)?;
    let lines = config.llc.slice_size / line;
    if ways == 0 || !lines.is_multiple_of(ways) {
        return Err(Error::config("slice does not divide into ways"));
    }
    let sets = lines / ways;
    check_pow2("set count", sets)?;
    let offset = BitField::new(0, log2(line));
    let set = BitField::new(offset.width, log2(sets));
    let slice = BitField::new(set.lo + set.width, log2(config.llc.slices));
    let tag_lo = slice.lo + slice.width;
    if tag_lo > PHYS_ADDR_BITS {
        return Err(Error::config("layout needs more than 48 physical address bits"));
    }
    Ok(ConventionalGeometry {
        sets,
        ways,
        slices: config.llc.slices,
        offset,
        set,
        slice,
        tag: BitField::new(tag_lo, PHYS_ADDR_BITS - tag_lo),
    })
}

#[inline]
pub fn decompose_conventional(pa: u64, geom: &ConventionalGeometry) -> ConventionalIndex {
    ConventionalIndex {
        slice: geom.slice.extract(pa),
        set: geom.set.extract(pa),
        tag: geom.tag.extract(pa),
        offset: geom.offset.extract(pa),
    }
}

/// Bits compared by one line lookup versus one page-wide probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagCompareCost {
    pub clr_bits: u64,
    pub ptr_bits: u64,
}

impl TagCompareCost {
    /// `ptr_bits / clr_bits`; `None` when a line lookup compares no bits.
    pub fn ratio<F: Float>(&self) -> Option<F> {
        if self.clr_bits == 0 {
            return None;
        }
        Some(F::from(self.ptr_bits)? / F::from(self.clr_bits)?)
    }
}

pub fn tag_compare_cost(geom: &LayoutGeometry) -> TagCompareCost {
    let th = u64::from(geom.tag_high.width);
    let tl = u64::from(geom.tag_low.width);
    TagCompareCost { clr_bits: geom.ways * (th + tl), ptr_bits: geom.lines_per_page * th }
}

/// Bit budget of one page-buffer tag entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbTagLayout {
    pub ppn_bits: u32,
    pub replacement_bits: u32,
    pub residency_bits: u32,
    pub region_bits: u32,
}

impl PbTagLayout {
    pub fn new(config: &SimConfig) -> Self {
        let page_bits = log2(config.core.page_size);
        let slots = config.pb.size / config.core.line_size;
        let regions = config.core.page_size / config.pb.size;
        PbTagLayout {
            ppn_bits: PHYS_ADDR_BITS - page_bits,
            replacement_bits: config.pb.replacement_counter_bits,
            residency_bits: log2(slots),
            region_bits: (slots * u64::from(log2(regions))) as u32,
        }
    }

    pub fn total(&self) -> u32 {
        self.ppn_bits + self.replacement_bits + self.residency_bits + self.region_bits
    }

    /// Page-buffer storage (tag + data) relative to one LLC slice's data array,
    /// with SRAM bits weighted by `sram_area_factor` relative to NVM bits.
    pub fn area_fraction<F: Float>(&self, config: &SimConfig, sram_area_factor: F) -> F {
        let pb_bits = F::from(u64::from(self.total()) + config.pb.size * 8).unwrap();
        let slice_bits = F::from(config.llc.slice_size * 8).unwrap();
        pb_bits * sram_area_factor / slice_bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.llc.slice_size = 32 << 20;
        cfg
    }

    fn range(f: BitField) -> (u32, u32) {
        (f.hi().unwrap(), f.lo)
    }

    #[test]
    fn fig4_example_layout() {
        let g = derive_geometry(&example()).unwrap();
        assert_eq!(g.rows_per_slice, 8192);
        assert_eq!(g.sets_per_row, 4);
        assert_eq!(range(g.offset), (5, 0));
        assert_eq!(range(g.set), (7, 6));
        assert_eq!(range(g.tag_low), (11, 8));
        assert_eq!(range(g.row), (24, 12));
        assert_eq!(range(g.tag_high), (47, 25));
        assert_eq!(g.slice.width, 0);
        assert_eq!(g.lines_per_region, 32);
        assert_eq!(g.regions_per_page, 2);
    }

    #[test]
    fn sixteen_mb_layout() {
        // 16MB / 4KB = 4096 rows -> 12 row bits starting at 12.
        let g = derive_geometry(&SimConfig::default()).unwrap();
        assert_eq!(g.rows_per_slice, 4096);
        assert_eq!(g.sets_per_row, 4);
        assert_eq!(range(g.row), (23, 12));
        assert_eq!(range(g.tag_high), (47, 24));
    }

    #[test]
    fn single_row_degenerate() {
        let mut cfg = SimConfig::default();
        cfg.llc.slice_size = 4096;
        cfg.llc.ways = 64;
        let g = derive_geometry(&cfg).unwrap();
        assert_eq!(g.rows_per_slice, 1);
        assert_eq!(g.sets_per_row, 1);
        assert_eq!(g.row.width, 0);
        assert_eq!(g.set.width, 0);
    }

    #[test]
    fn too_many_ways_rejected() {
        let mut cfg = SimConfig::default();
        cfg.llc.ways = 128;
        assert!(derive_geometry(&cfg).is_err());
    }

    #[test]
    fn clr_examples() {
        let g = derive_geometry(&example()).unwrap();
        let idx = decompose_clr(0x1F40, &g);
        assert_eq!((idx.row, idx.set, idx.tag_low, idx.tag_high, idx.offset), (1, 1, 0xF, 0, 0));
        let zero = decompose_clr(0, &g);
        assert_eq!((zero.row, zero.set, zero.tag_low, zero.tag_high, zero.offset), (0, 0, 0, 0, 0));
    }

    #[test]
    fn ptr_examples() {
        let g = derive_geometry(&example()).unwrap();
        let p = decompose_ptr(0x1000, &g);
        assert_eq!((p.row, p.tag_high), (1, 0));
        let p = decompose_ptr(0x200_0000, &g);
        assert_eq!((p.row, p.tag_high), (0, 1));
        let a = decompose_ptr(0x7FFF_F000, &g);
        let b = decompose_ptr(0x7FFF_F000 + 4096, &g);
        assert_eq!(b.row, (a.row + 1) % g.rows_per_slice);
    }

    #[test]
    fn conventional_examples() {
        let mut cfg = SimConfig::default();
        cfg.llc.slice_size = 4 << 20;
        let g = derive_conventional(&cfg).unwrap();
        assert_eq!(range(g.set), (17, 6));
        let z = decompose_conventional(0, &g);
        assert_eq!((z.set, z.tag), (0, 0));
        let a = decompose_conventional(0x12340, &g);
        let b = decompose_conventional(0x12340 + 64, &g);
        assert_eq!(a.tag, b.tag);
        assert_eq!(b.set, a.set + 1);
    }

    #[test]
    fn tag_compare_energy_bits() {
        let g = derive_geometry(&example()).unwrap();
        let c = tag_compare_cost(&g);
        assert_eq!(c.clr_bits, 432);
        assert_eq!(c.ptr_bits, 1472);
        let r: f64 = c.ratio().unwrap();
        assert!((r - 3.407).abs() < 0.01);

        // 16MB: tag-high is 24 bits -> 16 * 28 and 64 * 24.
        let g = derive_geometry(&SimConfig::default()).unwrap();
        let c = tag_compare_cost(&g);
        assert_eq!((c.clr_bits, c.ptr_bits), (448, 1536));
    }

    #[test]
    fn degenerate_ratio_has_no_division_by_zero() {
        let c = TagCompareCost { clr_bits: 0, ptr_bits: 0 };
        assert_eq!(c.ratio::<f32>(), None);
        let c = TagCompareCost { clr_bits: 1, ptr_bits: 0 };
        assert_eq!(c.ratio::<f32>(), Some(0.0));
    }

    #[test]
    fn pb_tag_is_83_bits() {
        let t = PbTagLayout::new(&SimConfig::default());
        assert_eq!((t.ppn_bits, t.replacement_bits, t.residency_bits, t.region_bits), (36, 10, 5, 32));
        assert_eq!(t.total(), 83);
        // 83 tag bits + 2KB of SRAM at 4x the NVM cell area, over 16MB.
        let frac: f64 = t.area_fraction(&SimConfig::default(), 4.0);
        assert!((frac * 100.0 - 0.05).abs() < 0.002, "{frac}");
    }

    #[test]
    fn bitfield_insert_extract() {
        let f = BitField::new(8, 4);
        assert_eq!(f.insert(0, 0xF), 0xF00);
        assert_eq!(f.extract(0xABCD), 0xB);
        assert_eq!(BitField::new(3, 0).extract(u64::MAX), 0);
        assert_eq!(BitField::new(3, 0).hi(), None);
    }
}
