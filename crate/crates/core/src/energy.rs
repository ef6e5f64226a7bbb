//! Per-access energy and leakage model of the LLC, page buffers and memory.

use num_traits::Float;

use crate::config::{Indexing, SimConfig, Technology};
use crate::geometry::{derive_geometry, tag_compare_cost};
use crate::metrics::RunMetrics;

/// Energies in joules, powers in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel<F> {
    pub llc_read: F,
    pub llc_write: F,
    pub llc_tag: F,
    /// One page-wide tag-high scan.
    pub ptr_scan: F,
    pub pb_read: F,
    pub pb_write: F,
    pub pb_tag: F,
    pub mem_access: F,
    pub llc_leak: F,
    pub pb_leak: F,
    pub core_power: F,
    pub freq_hz: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown<F> {
    pub llc_data: F,
    pub llc_tags: F,
    pub pb: F,
    pub memory: F,
    pub leakage: F,
    pub core: F,
    pub total: F,
}

impl<F: Float> EnergyModel<F> {
    pub fn new(cfg: &SimConfig) -> Self {
        let v = |x: f64| F::from(x).unwrap();
        let e = &cfg.energy;
        let (read, write, tag, leak) = match cfg.llc.technology {
            Technology::Sram => (e.sram_read_nj, e.sram_write_nj, e.sram_tag_pj, e.sram_leak_w),
            Technology::Nvm => (e.nvm_read_nj, e.nvm_write_nj, e.nvm_tag_pj, e.nvm_leak_w),
        };
        let scan_ratio = match cfg.llc.indexing {
            Indexing::PageRow => derive_geometry(cfg)
                .ok()
                .and_then(|g| tag_compare_cost(&g).ratio::<F>())
                .unwrap_or_else(F::zero),
            Indexing::Conventional => F::zero(),
        };
        let nano = v(1e-9);
        let pico = v(1e-12);
        let llc_tag = v(tag) * pico;
        EnergyModel {
            llc_read: v(read) * nano,
            llc_write: v(write) * nano,
            llc_tag,
            ptr_scan: llc_tag * scan_ratio,
            pb_read: v(e.pb_read_pj) * pico,
            pb_write: v(e.pb_write_pj) * pico,
            pb_tag: v(e.pb_tag_pj) * pico,
            mem_access: v(e.mem_access_nj) * nano,
            llc_leak: v(leak),
            pb_leak: if cfg.page_buffers_active() { v(e.pb_leak_w) } else { F::zero() },
            core_power: v(e.core_power_w),
            freq_hz: v(cfg.core.freq_hz),
        }
    }

    pub fn seconds(&self, cycles: u64) -> F {
        F::from(cycles).unwrap() / self.freq_hz
    }

    pub fn breakdown(&self, m: &RunMetrics) -> EnergyBreakdown<F> {
        let n = |c: u64| F::from(c).unwrap();
        let seconds = self.seconds(m.cycles);
        let llc_data = n(m.llc_array_reads + m.row_read_lines) * self.llc_read
            + n(m.llc_array_writes) * self.llc_write;
        let llc_tags = n(m.llc_tag_lookups) * self.llc_tag + n(m.ptr_tag_scans) * self.ptr_scan;
        let pb = n(m.pb_tag_lookups) * self.pb_tag
            + n(m.pb_reads) * self.pb_read
            + n(m.pb_writes) * self.pb_write;
        let memory = n(m.mem_reads + m.mem_writes) * self.mem_access;
        let leakage = (self.llc_leak + self.pb_leak) * seconds;
        let core = self.core_power * seconds;
        EnergyBreakdown {
            llc_data,
            llc_tags,
            pb,
            memory,
            leakage,
            core,
            total: llc_data + llc_tags + pb + memory + leakage + core,
        }
    }

    /// Energy × delay².
    pub fn ed2(&self, energy: F, cycles: u64) -> F {
        let s = self.seconds(cycles);
        energy * s * s
    }
}
