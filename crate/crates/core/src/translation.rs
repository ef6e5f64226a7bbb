//! Data TLBs, a first-touch page table and the page-transfer trigger.
//!
//! On an L1 TLB miss the page counts as previously referenced if it is still
//! in the L2 TLB or its PTE already has Accessed or Dirty set; such refills
//! emit a [`PtrRequest`] for the 4KB frame holding the missing address. Huge
//! pages additionally remember the last 4KB chunk promoted per L1 entry and
//! emit a request whenever an access moves to a different chunk.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::SetAssoc;
use crate::config::SimConfig;
use crate::error::{Error, Result};

pub const BASE_PAGE_SHIFT: u32 = 12;
pub const BASE_PAGE_SIZE: u64 = 1 << BASE_PAGE_SHIFT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageSize {
    Base4K,
    Huge2M,
    Huge1G,
}

impl PageSize {
    pub fn from_bytes(bytes: u64) -> Option<Self> {
        match bytes {
            4096 => Some(PageSize::Base4K),
            0x20_0000 => Some(PageSize::Huge2M),
            0x4000_0000 => Some(PageSize::Huge1G),
            _ => None,
        }
    }

    pub fn shift(self) -> u32 {
        match self {
            PageSize::Base4K => 12,
            PageSize::Huge2M => 21,
            PageSize::Huge1G => 30,
        }
    }

    pub fn bytes(self) -> u64 {
        1 << self.shift()
    }

    /// Width of the per-entry chunk id: log2(page size / 4KB).
    pub fn chunk_bits(self) -> u32 {
        self.shift() - BASE_PAGE_SHIFT
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTableEntry {
    pub vpn: u64,
    pub ppn: u64,
    pub page_size: PageSize,
    pub accessed: bool,
    pub dirty: bool,
    /// The translation has been resident in the L1 TLB before.
    pub seen_in_l1: bool,
    /// The translation was evicted from the L1 TLB and refilled later.
    pub refilled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u64,
    pub ppn: u64,
    pub page_size: PageSize,
    /// Most recently promoted 4KB chunk (huge pages only).
    pub last_chunk: u32,
}

/// A page transfer request: promote the resident lines of one 4KB frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PtrRequest {
    /// Physical 4KB frame number.
    pub frame: u64,
    /// Physical address of the access that caused the request.
    pub trigger: u64,
}

impl PtrRequest {
    fn for_paddr(paddr: u64) -> Self {
        PtrRequest { frame: paddr >> BASE_PAGE_SHIFT, trigger: paddr }
    }

    pub fn base(&self) -> u64 {
        self.frame << BASE_PAGE_SHIFT
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationResult {
    pub paddr: u64,
    pub l1_tlb_hit: bool,
    pub l2_tlb_hit: bool,
    pub walk_performed: bool,
    pub latency: u64,
    pub ptr_request: Option<PtrRequest>,
    /// The page has been refilled into the L1 TLB at least once.
    pub page_refilled: bool,
}

/// Whether an L1 TLB refill should send a page transfer request.
pub fn should_send_ptr(l2_hit: bool, pte: &PageTableEntry) -> bool {
    l2_hit || pte.accessed || pte.dirty
}

/// Per-access chunk tracking for an L1 TLB entry of a huge page.
pub fn huge_page_ptr(vaddr: u64, entry: &mut TlbEntry) -> Option<PtrRequest> {
    if entry.page_size == PageSize::Base4K {
        return None;
    }
    let chunk = chunk_of(vaddr, entry.page_size);
    if chunk == entry.last_chunk {
        return None;
    }
    entry.last_chunk = chunk;
    Some(PtrRequest::for_paddr(physical(entry.ppn, entry.page_size, vaddr)))
}

fn chunk_of(vaddr: u64, size: PageSize) -> u32 {
    ((vaddr & (size.bytes() - 1)) >> BASE_PAGE_SHIFT) as u32
}

fn physical(ppn: u64, size: PageSize, vaddr: u64) -> u64 {
    (ppn << size.shift()) | (vaddr & (size.bytes() - 1))
}

/// A seeded bijection on `[0, n)`: a four-round Feistel network over the
/// smallest even-width power-of-two domain covering `n`, cycle-walked back
/// into range.
#[derive(Debug, Clone)]
pub struct Permutation {
    n: u64,
    half_bits: u32,
    keys: [u64; 4],
}

impl Permutation {
    pub fn new(n: u64, seed: u64) -> Self {
        assert!(n > 0);
        let bits = 64 - (n - 1).leading_zeros();
        let half_bits = bits.div_ceil(2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Permutation { n, half_bits, keys: [rng.gen(), rng.gen(), rng.gen(), rng.gen()] }
    }

    fn round(key: u64, v: u64) -> u64 {
        // splitmix64 finaliser
        let mut z = v.wrapping_add(key).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn encrypt(&self, v: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut l, mut r) = (v >> self.half_bits, v & mask);
        for k in self.keys {
            (l, r) = (r, l ^ (Self::round(k, r) & mask));
        }
        (l << self.half_bits) | r
    }

    pub fn apply(&self, i: u64) -> u64 {
        assert!(i < self.n);
        let mut v = self.encrypt(i);
        while v >= self.n {
            v = self.encrypt(v);
        }
        v
    }
}

/// First-touch physical frame allocation.
#[derive(Debug, Clone)]
pub struct FrameAllocator {
    perm: Permutation,
    frames: u64,
    next: u64,
    page_size: PageSize,
}

impl FrameAllocator {
    pub fn new(memory_bytes: u64, page_size: PageSize, seed: u64) -> Self {
        let frames = (memory_bytes / page_size.bytes()).max(1);
        FrameAllocator { perm: Permutation::new(frames, seed), frames, next: 0, page_size }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn allocate(&mut self) -> Result<u64> {
        if self.next >= self.frames {
            return Err(Error::OutOfMemory { frames: self.frames, page_size: self.page_size.bytes() });
        }
        let ppn = self.perm.apply(self.next);
        self.next += 1;
        Ok(ppn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TlbStats {
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    pub walks: u64,
    pub ptr_requests: u64,
    /// L1 misses that qualified for a transfer request.
    pub eligible_refills: u64,
}

/// L1/L2 data TLBs over a first-touch page table. The L2 TLB is inclusive
/// of the L1 TLB.
#[derive(Debug, Clone)]
pub struct Translator {
    l1: SetAssoc<TlbEntry>,
    l2: SetAssoc<TlbEntry>,
    page_table: HashMap<u64, PageTableEntry>,
    alloc: FrameAllocator,
    page_size: PageSize,
    l1_rt: u64,
    l2_rt: u64,
    walk: u64,
    pub stats: TlbStats,
}

impl Translator {
    pub fn new(cfg: &SimConfig) -> Self {
        let page_size = if cfg.core.huge_page_size == 0 {
            PageSize::Base4K
        } else {
            PageSize::from_bytes(cfg.core.huge_page_size).expect("validated page size")
        };
        Translator {
            l1: SetAssoc::new(cfg.l1.tlb_entries / cfg.l1.tlb_ways, cfg.l1.tlb_ways),
            l2: SetAssoc::new(cfg.l2.tlb_entries / cfg.l2.tlb_ways, cfg.l2.tlb_ways),
            page_table: HashMap::new(),
            alloc: FrameAllocator::new(cfg.mem.size, page_size, cfg.core.seed),
            page_size,
            l1_rt: cfg.l1.tlb_rt,
            l2_rt: cfg.l2.tlb_rt,
            walk: cfg.mem.rt,
            stats: TlbStats::default(),
        }
    }

    pub fn page_size(&self) -> PageSize {
        self.page_size
    }

    pub fn pte(&self, vpn: u64) -> Option<&PageTableEntry> {
        self.page_table.get(&vpn)
    }

    pub fn in_l1(&self, vpn: u64) -> bool {
        self.l1.contains(vpn)
    }

    pub fn in_l2(&self, vpn: u64) -> bool {
        self.l2.contains(vpn)
    }

    /// Maps `vpn` to a fresh frame.
    pub fn allocate_page(&mut self, vpn: u64) -> Result<u64> {
        debug_assert!(!self.page_table.contains_key(&vpn));
        let ppn = self.alloc.allocate()?;
        self.page_table.insert(
            vpn,
            PageTableEntry {
                vpn,
                ppn,
                page_size: self.page_size,
                accessed: false,
                dirty: false,
                seen_in_l1: false,
                refilled: false,
            },
        );
        Ok(ppn)
    }

    pub fn translate(&mut self, vaddr: u64, is_write: bool) -> Result<TranslationResult> {
        let size = self.page_size;
        let vpn = vaddr >> size.shift();

        if let Some(entry) = self.l1.get(vpn) {
            let ptr = huge_page_ptr(vaddr, entry);
            let paddr = physical(entry.ppn, size, vaddr);
            let pte = self.page_table.get_mut(&vpn).expect("TLB entries are backed by the page table");
            pte.accessed = true;
            pte.dirty |= is_write;
            self.stats.l1_hits += 1;
            self.stats.ptr_requests += u64::from(ptr.is_some());
            return Ok(TranslationResult {
                paddr,
                l1_tlb_hit: true,
                l2_tlb_hit: false,
                walk_performed: false,
                latency: self.l1_rt,
                ptr_request: ptr,
                page_refilled: pte.refilled,
            });
        }

        self.stats.l1_misses += 1;
        let l2_hit = self.l2.get(vpn).is_some();
        let mut latency = self.l2_rt;
        if l2_hit {
            self.stats.l2_hits += 1;
        } else {
            self.stats.walks += 1;
            latency += self.walk;
            if !self.page_table.contains_key(&vpn) {
                self.allocate_page(vpn)?;
            }
        }

        let pte = self.page_table.get_mut(&vpn).unwrap();
        let send = should_send_ptr(l2_hit, pte);
        pte.accessed = true;
        pte.dirty |= is_write;
        if pte.seen_in_l1 {
            pte.refilled = true;
        }
        pte.seen_in_l1 = true;
        let page_refilled = pte.refilled;
        let entry = TlbEntry { vpn, ppn: pte.ppn, page_size: size, last_chunk: chunk_of(vaddr, size) };
        let paddr = physical(entry.ppn, size, vaddr);

        if !l2_hit {
            if let Some((evicted, _)) = self.l2.insert(vpn, entry.clone()) {
                self.l1.remove(evicted);
            }
        }
        self.l1.insert(vpn, entry);

        if send {
            self.stats.eligible_refills += 1;
            self.stats.ptr_requests += 1;
        }
        Ok(TranslationResult {
            paddr,
            l1_tlb_hit: false,
            l2_tlb_hit: l2_hit,
            walk_performed: !l2_hit,
            latency,
            ptr_request: send.then(|| PtrRequest::for_paddr(paddr)),
            page_refilled,
        })
    }

    /// Every L1 TLB entry is also in the L2 TLB and every TLB entry matches
    /// the page table.
    pub fn check_inclusion(&self) -> bool {
        self.l1.iter().all(|(vpn, e)| {
            // The chunk tracker lives only in the L1 copy.
            self.l2.peek(vpn).is_some_and(|l2| l2.ppn == e.ppn && l2.page_size == e.page_size)
                && self.page_table.get(&vpn).map(|p| p.ppn) == Some(e.ppn)
        }) && self.l2.iter().all(|(vpn, e)| self.page_table.get(&vpn).map(|p| p.ppn) == Some(e.ppn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pte(accessed: bool, dirty: bool) -> PageTableEntry {
        PageTableEntry {
            vpn: 0,
            ppn: 0,
            page_size: PageSize::Base4K,
            accessed,
            dirty,
            seen_in_l1: false,
            refilled: false,
        }
    }

    #[test]
    fn ptr_decision_table() {
        assert!(should_send_ptr(false, &pte(true, false)));
        assert!(should_send_ptr(false, &pte(false, true)));
        assert!(!should_send_ptr(false, &pte(false, false)));
        assert!(should_send_ptr(true, &pte(false, false)));
    }

    #[test]
    fn tlb_latencies_and_first_touch() {
        let cfg = SimConfig::default();
        let mut t = Translator::new(&cfg);
        let first = t.translate(0x1234_5678, false).unwrap();
        assert!(!first.l1_tlb_hit && !first.l2_tlb_hit && first.walk_performed);
        assert_eq!(first.latency, 12 + 190);
        assert_eq!(first.ptr_request, None);
        assert_eq!(first.paddr & 0xFFF, 0x678);

        let hit = t.translate(0x1234_5000, true).unwrap();
        assert!(hit.l1_tlb_hit);
        assert_eq!(hit.latency, 2);
        assert_eq!(hit.ptr_request, None);
        assert!(t.pte(0x12345).unwrap().dirty);
    }

    #[test]
    fn refill_after_l1_eviction_sends_ptr() {
        let cfg = SimConfig::default();
        let mut t = Translator::new(&cfg);
        // L1 TLB: 16 sets x 4 ways. Five pages in the same set evict page 0.
        for i in 0..5u64 {
            t.translate(i * 16 * 4096, false).unwrap();
        }
        assert!(!t.in_l1(0) && t.in_l2(0));
        let r = t.translate(0x10, false).unwrap();
        assert!(!r.l1_tlb_hit && r.l2_tlb_hit);
        assert_eq!(r.latency, 12);
        let ptr = r.ptr_request.unwrap();
        assert_eq!(ptr.base() & 0xFFF, 0);
        assert_eq!(ptr.trigger, r.paddr);
        assert!(r.page_refilled);
        assert!(t.check_inclusion());
    }

    #[test]
    fn huge_page_chunk_tracking() {
        let mut entry = TlbEntry { vpn: 0, ppn: 3, page_size: PageSize::Huge2M, last_chunk: 0 };
        assert_eq!(huge_page_ptr(0x10, &mut entry), None);
        let p = huge_page_ptr(3 * 4096 + 8, &mut entry).unwrap();
        assert_eq!(entry.last_chunk, 3);
        assert_eq!(p.base(), (3 << 21) + 3 * 4096);
        assert!(huge_page_ptr(0x40, &mut entry).is_some());
        assert_eq!(entry.last_chunk, 0);
        assert_eq!(PageSize::Huge2M.chunk_bits(), 9);
        assert_eq!(PageSize::Huge1G.chunk_bits(), 18);
        assert_eq!(PageSize::Base4K.chunk_bits(), 0);
    }

    #[test]
    fn frames_for_64gb() {
        let a = FrameAllocator::new(64 << 30, PageSize::Base4K, 1);
        assert_eq!(a.frames(), 1 << 24);
    }

    #[test]
    fn allocation_is_deterministic_and_injective() {
        let mut a = FrameAllocator::new(1 << 20, PageSize::Base4K, 7);
        let mut b = FrameAllocator::new(1 << 20, PageSize::Base4K, 7);
        let xs: Vec<u64> = (0..256).map(|_| a.allocate().unwrap()).collect();
        let ys: Vec<u64> = (0..256).map(|_| b.allocate().unwrap()).collect();
        assert_eq!(xs, ys);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, (0..256).collect::<Vec<_>>());
        assert!(matches!(a.allocate(), Err(Error::OutOfMemory { .. })));
    }

    #[test]
    fn permutation_is_a_bijection_on_odd_domains() {
        for n in [1u64, 2, 3, 85, 1000, 4097] {
            let p = Permutation::new(n, 42);
            let mut seen = vec![false; n as usize];
            for i in 0..n {
                let v = p.apply(i) as usize;
                assert!(!seen[v]);
                seen[v] = true;
            }
        }
    }
}
