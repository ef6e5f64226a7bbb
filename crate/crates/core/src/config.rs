//! Simulator configuration.
//!
//! Configs are TOML documents with the sections `[core] [l1] [l2] [llc] [pb]
//! [mem] [energy]`. Every key is optional and falls back to the shipped
//! defaults (see `config/default.toml`); unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical address width in bits. Wider configurations are rejected.
pub const PHYS_ADDR_BITS: u32 = 48;

/// The default configuration, checked in next to the crate.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreSection {
    pub freq_hz: f64,
    pub mshr_limit: usize,
    pub line_size: u64,
    pub page_size: u64,
    /// 0 disables huge pages; otherwise every mapping uses this page size.
    pub huge_page_size: u64,
    pub seed: u64,
    /// Run the coherence/inclusion audits every this many events (0 = never).
    pub audit_interval: u64,
}

impl Default for CoreSection {
    fn default() -> Self {
        CoreSection {
            freq_hz: 3.2e9,
            mshr_limit: 8,
            line_size: 64,
            page_size: 4096,
            huge_page_size: 0,
            seed: 1,
            audit_interval: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Section {
    pub size: u64,
    pub ways: usize,
    pub rt: u64,
    pub tlb_entries: usize,
    pub tlb_ways: usize,
    pub tlb_rt: u64,
}

impl Default for L1Section {
    fn default() -> Self {
        L1Section { size: 32 << 10, ways: 8, rt: 2, tlb_entries: 64, tlb_ways: 4, tlb_rt: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Section {
    pub size: u64,
    pub ways: usize,
    pub rt: u64,
    pub tlb_entries: usize,
    pub tlb_ways: usize,
    pub tlb_rt: u64,
    pub next_block_prefetch: bool,
}

impl Default for L2Section {
    fn default() -> Self {
        L2Section {
            size: 512 << 10,
            ways: 8,
            rt: 14,
            tlb_entries: 1024,
            tlb_ways: 12,
            tlb_rt: 12,
            next_block_prefetch: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technology {
    Sram,
    Nvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Indexing {
    /// All lines of a 4KB page share one physical row.
    PageRow,
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlcSection {
    pub technology: Technology,
    pub indexing: Indexing,
    pub slices: u64,
    pub slice_size: u64,
    pub ways: usize,
    pub tag_latency: u64,
    /// Core-to-LLC request wire delay; the response wire is whatever is left
    /// of the SRAM round trip.
    pub request_latency: u64,
    pub sram_read_rt: u64,
    pub sram_data_latency: u64,
    pub nvm_read_rt: u64,
    pub nvm_data_latency: u64,
    /// Non-pipelined part of an NVM read.
    pub nvm_read_occupancy: u64,
    pub nvm_write_rt: u64,
    pub write_queue_depth: usize,
}

impl Default for LlcSection {
    fn default() -> Self {
        LlcSection {
            technology: Technology::Nvm,
            indexing: Indexing::PageRow,
            slices: 1,
            slice_size: 16 << 20,
            ways: 16,
            tag_latency: 2,
            request_latency: 19,
            sram_read_rt: 53,
            sram_data_latency: 12,
            nvm_read_rt: 63,
            nvm_data_latency: 22,
            nvm_read_occupancy: 10,
            nvm_write_rt: 78,
            write_queue_depth: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromotionMode {
    /// Promote into the SRAM page buffers.
    Buffer,
    /// Push the page's resident lines into L2 instead.
    FetchToL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbSection {
    pub enabled: bool,
    pub mode: PromotionMode,
    pub count: usize,
    pub size: u64,
    pub rt: u64,
    pub ptr_latency: u64,
    pub threshold: u32,
    pub activation_period: u32,
    pub replacement_counter_bits: u32,
}

impl Default for PbSection {
    fn default() -> Self {
        PbSection {
            enabled: true,
            mode: PromotionMode::Buffer,
            count: 20,
            size: 2048,
            rt: 43,
            ptr_latency: 6,
            threshold: 6,
            activation_period: 20,
            replacement_counter_bits: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemSection {
    pub rt: u64,
    pub size: u64,
}

impl Default for MemSection {
    fn default() -> Self {
        MemSection { rt: 190, size: 64 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub sram_read_nj: f64,
    pub sram_write_nj: f64,
    pub sram_tag_pj: f64,
    pub sram_leak_w: f64,
    pub nvm_read_nj: f64,
    pub nvm_write_nj: f64,
    pub nvm_tag_pj: f64,
    pub nvm_leak_w: f64,
    pub pb_read_pj: f64,
    pub pb_write_pj: f64,
    pub pb_tag_pj: f64,
    /// Leakage of the whole page-buffer array.
    pub pb_leak_w: f64,
    /// Not a measured constant; main memory is otherwise unmodelled.
    pub mem_access_nj: f64,
    /// Optional fixed core power folded into the energy total.
    pub core_power_w: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            sram_read_nj: 0.47,
            sram_write_nj: 0.48,
            sram_tag_pj: 4.0,
            sram_leak_w: 1.4,
            nvm_read_nj: 0.95,
            nvm_write_nj: 6.3,
            nvm_tag_pj: 7.0,
            nvm_leak_w: 0.829,
            pb_read_pj: 12.0,
            pb_write_pj: 13.0,
            pb_tag_pj: 12.0,
            pb_leak_w: 0.0041,
            mem_access_nj: 20.0,
            core_power_w: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub core: CoreSection,
    pub l1: L1Section,
    pub l2: L2Section,
    pub llc: LlcSection,
    pub pb: PbSection,
    pub mem: MemSection,
    pub energy: EnergySection,
}

/// The LLC organisations compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// 4MB SRAM LLC, conventional indexing.
    Baseline,
    /// NVM data array, conventional indexing, no page buffers.
    NvmOnly,
    /// NVM data array, page-row layout, page buffers.
    PageBuffer,
    /// SRAM timing and energy at NVM capacity.
    OSram,
    /// Page-row layout, but promoted lines are pushed into L2.
    FetchToL2,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::Baseline, Scheme::NvmOnly, Scheme::PageBuffer, Scheme::OSram, Scheme::FetchToL2];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::NvmOnly => "nvm-only",
            Scheme::PageBuffer => "page-buffer",
            Scheme::OSram => "o-sram",
            Scheme::FetchToL2 => "fetch-to-l2",
        }
    }

    /// Rewrites the technology/indexing/size/PB keys of `cfg` to this scheme.
    pub fn apply(self, cfg: &mut SimConfig) {
        let (tech, indexing, size, pb) = match self {
            Scheme::Baseline => (Technology::Sram, Indexing::Conventional, 4 << 20, None),
            Scheme::NvmOnly => (Technology::Nvm, Indexing::Conventional, 16 << 20, None),
            Scheme::PageBuffer => {
                (Technology::Nvm, Indexing::PageRow, 16 << 20, Some(PromotionMode::Buffer))
            }
            Scheme::OSram => (Technology::Sram, Indexing::Conventional, 16 << 20, None),
            Scheme::FetchToL2 => {
                (Technology::Nvm, Indexing::PageRow, 16 << 20, Some(PromotionMode::FetchToL2))
            }
        };
        cfg.llc.technology = tech;
        cfg.llc.indexing = indexing;
        cfg.llc.slice_size = size;
        cfg.pb.enabled = pb.is_some();
        if let Some(mode) = pb {
            cfg.pb.mode = mode;
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scheme `{s}`")))
    }
}

/// Cycle-level latencies derived from the round-trip figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlcTiming {
    pub request: u64,
    pub response: u64,
    pub tag: u64,
    /// Data-array access for a read hit.
    pub data: u64,
    /// Cycles the data array is blocked by one read.
    pub read_occupancy: u64,
    /// Cycles the data array is blocked by one write.
    pub write_occupancy: u64,
    pub pb_data: u64,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Self::from_table(table, &[])
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Builds a config from a parsed document plus `section.key = value`
    /// overrides, then validates it.
    ///
    /// `llc.nvm_read_extra` is accepted as an override: it sets the NVM read
    /// round trip, data latency and occupancy to the SRAM figures plus the
    /// given number of non-pipelined cycles.
    pub fn from_table(mut table: toml::Table, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut read_extra = None;
        for (key, value) in overrides {
            if key == "llc.nvm_read_extra" {
                let extra = value
                    .as_integer()
                    .filter(|v| *v >= 0)
                    .ok_or_else(|| Error::config("llc.nvm_read_extra must be a non-negative integer"))?;
                read_extra = Some(extra as u64);
                continue;
            }
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::config(format!("override `{key}` is not `section.key`")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sect = entry
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("`{section}` is not a section")))?;
            sect.insert(field.to_string(), value.clone());
        }
        let mut cfg: SimConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        if let Some(extra) = read_extra {
            cfg.set_nvm_read_extra(extra);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_nvm_read_extra(&mut self, extra: u64) {
        self.llc.nvm_read_rt = self.llc.sram_read_rt + extra;
        self.llc.nvm_data_latency = self.llc.sram_data_latency + extra;
        self.llc.nvm_read_occupancy = extra;
    }

    pub fn for_scheme(scheme: Scheme) -> Self {
        let mut cfg = SimConfig::default();
        scheme.apply(&mut cfg);
        cfg
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Which of the compared schemes this configuration corresponds to, if any.
    pub fn scheme(&self) -> Option<Scheme> {
        use Indexing::*;
        use Technology::*;
        match (self.llc.technology, self.llc.indexing, self.pb.enabled, self.pb.mode) {
            (Sram, Conventional, false, _) if self.llc.slice_size <= 4 << 20 => Some(Scheme::Baseline),
            (Sram, Conventional, false, _) => Some(Scheme::OSram),
            (Nvm, Conventional, false, _) => Some(Scheme::NvmOnly),
            (Nvm, PageRow, true, PromotionMode::Buffer) => Some(Scheme::PageBuffer),
            (Nvm, PageRow, true, PromotionMode::FetchToL2) => Some(Scheme::FetchToL2),
            _ => None,
        }
    }

    pub fn page_buffers_active(&self) -> bool {
        self.pb.enabled && self.pb.mode == PromotionMode::Buffer
    }

    pub fn lines_per_page(&self) -> u64 {
        self.core.page_size / self.core.line_size
    }

    pub fn timing(&self) -> LlcTiming {
        let l = &self.llc;
        let response = l.sram_read_rt - l.request_latency - l.tag_latency - l.sram_data_latency;
        let (data, read_occupancy, write_occupancy) = match l.technology {
            Technology::Sram => (l.sram_data_latency, 1, 1),
            Technology::Nvm => (
                l.nvm_data_latency,
                l.nvm_read_occupancy,
                l.nvm_write_rt - (l.nvm_read_rt - l.nvm_read_occupancy),
            ),
        };
        LlcTiming {
            request: l.request_latency,
            response,
            tag: l.tag_latency,
            data,
            read_occupancy,
            write_occupancy,
            pb_data: self.pb.rt - l.request_latency - l.tag_latency - response,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |name: &str, v: u64| {
            if v.is_power_of_two() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} is not a power of two")))
            }
        };
        let c = &self.core;
        pow2("core.line_size", c.line_size)?;
        pow2("core.page_size", c.page_size)?;
        pow2("l1.size", self.l1.size)?;
        pow2("l2.size", self.l2.size)?;
        pow2("llc.slice_size", self.llc.slice_size)?;
        pow2("llc.slices", self.llc.slices)?;
        pow2("pb.size", self.pb.size)?;
        pow2("mem.size", self.mem.size)?;
        if c.huge_page_size != 0 && ![2 << 20, 1 << 30].contains(&c.huge_page_size) {
            return Err(Error::config("core.huge_page_size must be 0, 2MB or 1GB"));
        }
        if c.page_size != 4096 {
            return Err(Error::config("core.page_size must be 4096"));
        }
        if c.freq_hz.is_nan() || c.freq_hz <= 0.0 {
            return Err(Error::config("core.freq_hz must be positive"));
        }
        if c.mshr_limit == 0 {
            return Err(Error::config("core.mshr_limit must be at least 1"));
        }
        if self.pb.size > c.page_size || self.pb.size < c.line_size {
            return Err(Error::config("pb.size must lie between the line size and the page size"));
        }
        if self.pb.threshold < 1 || u64::from(self.pb.threshold) > self.lines_per_page() {
            return Err(Error::config("pb.threshold must be in [1, lines per page]"));
        }
        if !(1..=32).contains(&self.pb.replacement_counter_bits) {
            return Err(Error::config("pb.replacement_counter_bits must be in [1, 32]"));
        }
        for (name, size, ways) in
            [("l1", self.l1.size, self.l1.ways), ("l2", self.l2.size, self.l2.ways)]
        {
            let lines = size / c.line_size;
            if ways == 0 || lines == 0 || !lines.is_multiple_of(ways as u64) {
                return Err(Error::config(format!("{name}: size does not divide into {ways} ways")));
            }
        }
        if self.l2.size < self.l1.size {
            return Err(Error::config("l2 must be at least as large as l1 (inclusive)"));
        }
        for (name, entries, ways) in [
            ("l1.tlb", self.l1.tlb_entries, self.l1.tlb_ways),
            ("l2.tlb", self.l2.tlb_entries, self.l2.tlb_ways),
        ] {
            if ways == 0 || entries < ways {
                return Err(Error::config(format!("{name}: needs at least one set")));
            }
        }
        let l = &self.llc;
        if l.ways == 0 || !(l.slice_size / c.line_size).is_multiple_of(l.ways as u64) {
            return Err(Error::config("llc: slice does not divide into ways"));
        }
        if l.write_queue_depth == 0 {
            return Err(Error::config("llc.write_queue_depth must be at least 1"));
        }
        if self.pb.enabled && l.technology == Technology::Sram {
            return Err(Error::config("page buffers require an NVM data array"));
        }
        if self.pb.enabled && l.indexing != Indexing::PageRow {
            return Err(Error::config("page buffers require page-row indexing"));
        }
        let sram_path = l.request_latency + l.tag_latency + l.sram_data_latency;
        if sram_path > l.sram_read_rt {
            return Err(Error::config("llc.sram_read_rt shorter than request + tag + data"));
        }
        let response = l.sram_read_rt - sram_path;
        if l.request_latency + l.tag_latency + l.nvm_data_latency + response != l.nvm_read_rt {
            return Err(Error::config(
                "llc.nvm_read_rt must equal request + tag + nvm data + the SRAM response wire",
            ));
        }
        if l.nvm_read_occupancy > l.nvm_data_latency || l.nvm_read_occupancy == 0 {
            return Err(Error::config("llc.nvm_read_occupancy must be in [1, nvm_data_latency]"));
        }
        if l.nvm_write_rt <= l.nvm_read_rt - l.nvm_read_occupancy {
            return Err(Error::config("llc.nvm_write_rt must exceed the pipelined part of a read"));
        }
        if self.pb.rt < l.request_latency + l.tag_latency + response {
            return Err(Error::config("pb.rt shorter than request + tag + response"));
        }
        if self.mem.rt <= l.request_latency + l.tag_latency {
            return Err(Error::config("mem.rt must exceed the LLC miss detection time"));
        }
        let e = &self.energy;
        let energies = [
            e.sram_read_nj, e.sram_write_nj, e.sram_tag_pj, e.sram_leak_w, e.nvm_read_nj,
            e.nvm_write_nj, e.nvm_tag_pj, e.nvm_leak_w, e.pb_read_pj, e.pb_write_pj, e.pb_tag_pj,
            e.pb_leak_w, e.mem_access_nj, e.core_power_w,
        ];
        if energies.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::config("energy constants must be non-negative"));
        }
        // Layout checks (row geometry, address width) live with the geometry.
        match l.indexing {
            Indexing::PageRow => crate::geometry::derive_geometry(self).map(|_| ()),
            Indexing::Conventional => crate::geometry::derive_conventional(self).map(|_| ()),
        }
    }
}

/// Parses an override value the way it would appear on the right of `=` in
/// the config file, falling back to a bare string.
pub fn parse_override_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_builtin_defaults() {
        let cfg = SimConfig::from_toml_str(DEFAULT_CONFIG_TOML).unwrap();
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn table_two_defaults() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.pb.count, 20);
        assert_eq!(cfg.pb.size, 2048);
        assert_eq!(cfg.pb.threshold, 6);
        assert_eq!(cfg.pb.activation_period, 20);
        assert_eq!(cfg.pb.ptr_latency, 6);
        assert_eq!(cfg.mem.rt, 190);
        let t = cfg.timing();
        assert_eq!(t.request + t.tag + t.data + t.response, 63);
        assert_eq!(t.read_occupancy, 10);
        assert_eq!(t.write_occupancy, 25);
        assert_eq!(t.request + t.tag + t.pb_data + t.response, 43);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = SimConfig::from_toml_str("[pb]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = SimConfig::from_toml_str("[nope]\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn pb_with_sram_is_a_conflict() {
        let err = SimConfig::from_toml_str("[llc]\ntechnology = \"sram\"\n").unwrap_err();
        assert!(err.to_string().contains("NVM"));
    }

    #[test]
    fn overrides_and_read_extra() {
        let table = DEFAULT_CONFIG_TOML.parse::<toml::Table>().unwrap();
        let cfg = SimConfig::from_table(
            table,
            &[
                ("llc.nvm_read_extra".into(), toml::Value::Integer(20)),
                ("pb.threshold".into(), parse_override_value("8")),
            ],
        )
        .unwrap();
        assert_eq!(cfg.llc.nvm_read_rt, 73);
        assert_eq!(cfg.llc.nvm_data_latency, 32);
        assert_eq!(cfg.llc.nvm_read_occupancy, 20);
        assert_eq!(cfg.pb.threshold, 8);
    }

    #[test]
    fn schemes_round_trip_through_classification() {
        for s in Scheme::ALL {
            let cfg = SimConfig::for_scheme(s);
            cfg.validate().unwrap();
            assert_eq!(cfg.scheme(), Some(s));
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn threshold_range() {
        assert!(SimConfig::from_toml_str("[pb]\nthreshold = 0\n").is_err());
        assert!(SimConfig::from_toml_str("[pb]\nthreshold = 65\n").is_err());
        assert!(SimConfig::from_toml_str("[pb]\nthreshold = 64\n").is_ok());
    }

    #[test]
    fn override_value_parsing() {
        assert_eq!(parse_override_value("16"), toml::Value::Integer(16));
        assert_eq!(parse_override_value("\"sram\""), toml::Value::String("sram".into()));
        assert_eq!(parse_override_value("sram"), toml::Value::String("sram".into()));
        assert_eq!(parse_override_value("true"), toml::Value::Boolean(true));
    }
}
