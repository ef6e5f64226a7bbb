//! Run counters and the derived statistics.

use num_traits::Float;
use serde::Serialize;

use crate::config::SimConfig;
use crate::energy::{EnergyBreakdown, EnergyModel};

/// Where a request's data came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Source {
    L1,
    L2,
    Pb,
    NvmLlc,
    SramLlc,
    Memory,
}

impl Source {
    pub const ALL: [Source; 6] =
        [Source::L1, Source::L2, Source::Pb, Source::NvmLlc, Source::SramLlc, Source::Memory];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::L1 => "l1",
            Source::L2 => "l2",
            Source::Pb => "pb",
            Source::NvmLlc => "nvm_llc",
            Source::SramLlc => "sram_llc",
            Source::Memory => "memory",
        }
    }
}

/// Raw event counts of one run. Every field is a plain sum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunMetrics {
    pub records: u64,
    pub instructions: u64,
    pub loads: u64,
    pub stores: u64,
    pub cycles: u64,

    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    /// L1 misses that found their line still waiting for a fill.
    pub l2_pending_hits: u64,
    pub l2_load_misses: u64,
    pub l2_store_misses: u64,
    pub l2_evictions: u64,

    /// Demand reads looked up in the LLC.
    pub llc_reads: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub llc_array_hits: u64,
    pub pb_hits: u64,
    /// LLC hits to pages whose translation had been refilled into the L1 TLB.
    pub llc_hits_refilled: u64,
    pub llc_ownership_requests: u64,
    pub llc_writes: u64,
    pub llc_installs: u64,
    pub llc_evictions: u64,

    pub l2_miss_response_cycles: u64,
    pub llc_read_service_cycles: u64,
    pub source_counts: [u64; 6],
    pub source_cycles: [u64; 6],

    pub tlb_l1_misses: u64,
    pub tlb_l2_hits: u64,
    pub tlb_walks: u64,
    pub tlb_eligible_refills: u64,

    /// Page transfer requests that reached the LLC.
    pub ptr_received: u64,
    pub ptr_refreshed: u64,
    pub ptr_gated_out: u64,
    pub ptr_no_victim: u64,
    pub ptr_promoted: u64,
    pub promoted_lines: u64,
    pub promoted_lines_accessed: u64,
    /// Lines a fetch-to-L2 promotion skipped because the MSHRs were nearly full.
    pub promoted_lines_dropped: u64,
    /// Resident lines of the requested page at each PTR, indexed by count.
    pub ptr_population_histogram: Vec<u64>,

    pub prefetches: u64,
    pub prefetches_useful: u64,

    pub llc_tag_lookups: u64,
    pub ptr_tag_scans: u64,
    pub llc_array_reads: u64,
    pub row_reads: u64,
    pub row_read_lines: u64,
    pub llc_array_writes: u64,
    pub pb_tag_lookups: u64,
    pub pb_reads: u64,
    pub pb_writes: u64,
    pub mem_reads: u64,
    pub mem_writes: u64,

    pub array_busy_cycles: u64,
    pub write_queue_forced: u64,
    pub write_queue_peak: u64,
    pub core_stalls: u64,

    pub audits: u64,
    pub audit_violations: u64,
}

impl RunMetrics {
    pub fn new(lines_per_page: u64) -> Self {
        RunMetrics {
            ptr_population_histogram: vec![0; lines_per_page as usize + 1],
            ..Default::default()
        }
    }

    pub fn record_service(&mut self, source: Source, cycles: u64) {
        self.source_counts[source.index()] += 1;
        self.source_cycles[source.index()] += cycles;
    }

    pub fn record_ptr_population(&mut self, population: u32) {
        let i = (population as usize).min(self.ptr_population_histogram.len().saturating_sub(1));
        if let Some(slot) = self.ptr_population_histogram.get_mut(i) {
            *slot += 1;
        }
    }

    pub fn l2_misses(&self) -> u64 {
        self.l2_load_misses + self.l2_store_misses
    }

    pub fn finalize<F: Float>(&self, cfg: &SimConfig) -> Report<F> {
        let f = |v: u64| F::from(v).unwrap();
        let ratio = |n: u64, d: u64| (d > 0).then(|| f(n) / f(d));
        let kilo = (self.instructions > 0).then(|| f(self.instructions) / f(1000));
        let mpki = |m: u64| kilo.map(|k| f(m) / k);
        let energy = EnergyModel::<F>::new(cfg).breakdown(self);
        let seconds = f(self.cycles) / F::from(cfg.core.freq_hz).unwrap();
        Report {
            ipc: ratio(self.instructions, self.cycles),
            l2_mpki: mpki(self.l2_misses()),
            llc_mpki: mpki(self.llc_misses),
            llc_hit_rate: ratio(self.llc_hits, self.llc_reads),
            pb_hit_fraction: ratio(self.pb_hits, self.llc_hits),
            promotion_utilization: ratio(self.promoted_lines_accessed, self.promoted_lines),
            avg_l2_miss_response: ratio(self.l2_miss_response_cycles, self.l2_load_misses),
            refilled_hit_fraction: ratio(self.llc_hits_refilled, self.llc_hits),
            ptr_eligibility: ratio(self.tlb_eligible_refills, self.tlb_l1_misses),
            seconds,
            ed2: energy.total * seconds * seconds,
            energy,
        }
    }
}

/// Derived statistics; `None` where the denominator is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Report<F> {
    pub ipc: Option<F>,
    pub l2_mpki: Option<F>,
    pub llc_mpki: Option<F>,
    pub llc_hit_rate: Option<F>,
    pub pb_hit_fraction: Option<F>,
    pub promotion_utilization: Option<F>,
    pub avg_l2_miss_response: Option<F>,
    pub refilled_hit_fraction: Option<F>,
    /// Share of L1 TLB misses that qualified for a page transfer request.
    pub ptr_eligibility: Option<F>,
    pub seconds: F,
    pub energy: EnergyBreakdown<F>,
    pub ed2: F,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mpki_definition() {
        let mut m = RunMetrics::new(64);
        m.instructions = 1000;
        m.llc_misses = 10;
        let r: Report<f64> = m.finalize(&SimConfig::default());
        assert_eq!(r.llc_mpki, Some(10.0));
    }

    #[test]
    fn zero_instructions_leave_rates_undefined() {
        let m = RunMetrics::new(64);
        let r: Report<f64> = m.finalize(&SimConfig::default());
        assert_eq!(r.l2_mpki, None);
        assert_eq!(r.pb_hit_fraction, None);
        assert_eq!(r.ipc, None);
        assert_eq!(r.energy.total, 0.0);
    }

    #[test]
    fn histogram_clamps_to_page() {
        let mut m = RunMetrics::new(64);
        m.record_ptr_population(64);
        m.record_ptr_population(0);
        assert_eq!(m.ptr_population_histogram[64], 1);
        assert_eq!(m.ptr_population_histogram.iter().sum::<u64>(), 2);
    }

    #[test]
    fn ed2_scales_with_square_of_delay() {
        let mut m = RunMetrics::new(64);
        m.cycles = 1000;
        m.mem_reads = 5;
        let mut cfg = SimConfig::default();
        // Take leakage out so energy stays fixed while cycles double.
        cfg.energy.nvm_leak_w = 0.0;
        cfg.energy.pb_leak_w = 0.0;
        let a: Report<f64> = m.finalize(&cfg);
        m.cycles = 2000;
        let b: Report<f64> = m.finalize(&cfg);
        assert_eq!(a.energy.total, b.energy.total);
        assert!((b.ed2 / a.ed2 - 4.0).abs() < 1e-12);
    }
}
