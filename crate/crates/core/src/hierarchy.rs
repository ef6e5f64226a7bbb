//! The end-to-end request path as a discrete-event simulation.
//!
//! An in-order core issues one trace record per cycle after its instruction
//! gap. Loads are non-blocking up to the MSHR limit; stores are acknowledged
//! once buffered in the private caches. L1 holds tags only and is inclusive
//! in L2, which holds the functional data. The LLC is a victim of L2.
//!
//! All LLC-bound messages (reads, victim writes, ownership invalidations)
//! travel with the same request latency and are applied at arrival in issue
//! order, so the functional state at the LLC never sees them reordered.
//!
//! Latencies are counted from the cycle a record accesses L1 (after
//! translation): L1 hit 2, L2 hit 14, LLC array hit `request + tag + data +
//! response`, PB hit `request + tag + 1 + pb_data + response`, memory 190.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use crate::cache::SetAssoc;
use crate::config::{LlcTiming, PromotionMode, SimConfig, Technology};
use crate::error::Result;
use crate::llc::{DataArray, Llc, LlcLine};
use crate::metrics::{RunMetrics, Source};
use crate::page_buffer::{PageBufferSet, WriteEffect};
use crate::trace::{Op, TraceRecord};
use crate::translation::{PtrRequest, Translator};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep a [`MemRequest`] per trace record.
    pub record_requests: bool,
    /// Keep the value returned by every load.
    pub record_loads: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    /// Index of the trace record.
    pub id: u64,
    pub op: Op,
    pub vaddr: u64,
    pub paddr: u64,
    pub issue_cycle: u64,
    /// Cycle the record reached L1, after translation and any stall.
    pub access_cycle: u64,
    pub completion_cycle: u64,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadValue {
    pub record: u64,
    pub vaddr: u64,
    pub value: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub requests: Vec<MemRequest>,
    pub loads: Vec<LoadValue>,
}

/// Why an L2 line was brought in ahead of demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    NextBlock,
    Promoted,
}

#[derive(Debug, Clone, Copy)]
struct L2Line {
    data: Option<u64>,
    dirty: bool,
    /// An MSHR is outstanding; the way cannot be evicted.
    pending: bool,
    /// Brought in ahead of demand and not yet touched.
    origin: Option<Origin>,
}

#[derive(Debug, Clone, Copy)]
struct Waiter {
    id: u64,
    vaddr: u64,
    paddr: u64,
    issue: u64,
    access: u64,
    /// Value visible in L2 when the load registered (a store or an early
    /// promotion got there first).
    captured: Option<u64>,
    primary: bool,
}

#[derive(Debug, Default)]
struct Mshr {
    waiters: Vec<Waiter>,
}

#[derive(Debug, Clone)]
enum Job {
    Read { pa: u64, value: u64, dirty: bool, t0: u64, demand: bool },
    Row { pb: Option<(usize, u64)>, lines: u64, to_l2: Vec<(u64, u64, bool)> },
}

#[derive(Debug, Clone)]
enum Ev {
    Core,
    LlcRead { pa: u64, t0: u64, demand: bool, refilled: bool },
    LlcWrite { pa: u64, data: u64, dirty: bool },
    LlcOwn { pa: u64 },
    Ptr(PtrRequest),
    ArrayRead { slice: usize, job: Job },
    ArrayWrite { slice: usize },
    ArrayFree { slice: usize },
    Fill { pa: u64, value: u64, dirty: bool, source: Source },
    Beat { pa: u64, value: u64, dirty: bool },
}

struct Scheduled {
    due: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Min-heap on (due, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Translated {
    paddr: u64,
    t0: u64,
    refilled: bool,
}

#[derive(Debug, Clone, Copy)]
struct Staged {
    id: u64,
    rec: TraceRecord,
    issue: u64,
    tr: Option<Translated>,
}

enum Access {
    Done,
    Stall,
}

/// One simulation instance. Self-contained; may move between threads.
pub struct Simulator {
    cfg: SimConfig,
    timing: LlcTiming,
    opts: SimOptions,
    translator: Translator,
    l1: SetAssoc<()>,
    l2: SetAssoc<L2Line>,
    llc: Llc,
    pbs: Option<PageBufferSet>,
    fetch_to_l2: bool,
    arrays: Vec<DataArray>,
    read_q: Vec<VecDeque<Job>>,
    write_q: Vec<u64>,
    bus: BTreeSet<u64>,
    events: BinaryHeap<Scheduled>,
    seq: u64,
    now: u64,
    mshrs: HashMap<u64, Mshr>,
    /// LLC writes / ownership messages in flight, per line.
    inflight: HashMap<u64, u32>,
    memory: HashMap<u64, u64>,
    staged: Option<Staged>,
    core_next: u64,
    stalled: bool,
    last_completion: u64,
    events_done: u64,
    line_shift: u32,
    lines_per_page: u64,
    metrics: RunMetrics,
    requests: Vec<MemRequest>,
    loads: Vec<LoadValue>,
}

impl Simulator {
    pub fn new(cfg: &SimConfig, opts: SimOptions) -> Result<Self> {
        cfg.validate()?;
        let line = cfg.core.line_size;
        let llc = Llc::new(cfg)?;
        let slices = cfg.llc.slices as usize;
        let pbs = cfg.page_buffers_active().then(|| PageBufferSet::new(cfg));
        Ok(Simulator {
            timing: cfg.timing(),
            opts,
            translator: Translator::new(cfg),
            l1: SetAssoc::new((cfg.l1.size / line) as usize / cfg.l1.ways, cfg.l1.ways),
            l2: SetAssoc::new((cfg.l2.size / line) as usize / cfg.l2.ways, cfg.l2.ways),
            llc,
            pbs,
            fetch_to_l2: cfg.pb.enabled && cfg.pb.mode == PromotionMode::FetchToL2,
            arrays: vec![DataArray::default(); slices],
            read_q: vec![VecDeque::new(); slices],
            write_q: vec![0; slices],
            bus: BTreeSet::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: 0,
            mshrs: HashMap::new(),
            inflight: HashMap::new(),
            memory: HashMap::new(),
            staged: None,
            core_next: 0,
            stalled: false,
            last_completion: 0,
            events_done: 0,
            line_shift: line.trailing_zeros(),
            lines_per_page: cfg.lines_per_page(),
            metrics: RunMetrics::new(cfg.lines_per_page()),
            requests: Vec::new(),
            loads: Vec::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn llc(&self) -> &Llc {
        &self.llc
    }

    pub fn page_buffers(&self) -> Option<&PageBufferSet> {
        self.pbs.as_ref()
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Setup helper: translates `vaddr` outside of simulated time so the
    /// page is mapped and resident in both TLBs. Returns the physical address.
    pub fn warm_translation(&mut self, vaddr: u64) -> Result<u64> {
        Ok(self.translator.translate(vaddr, false)?.paddr)
    }

    /// Setup helper: places a clean line holding `data` in the LLC.
    pub fn preload_llc(&mut self, paddr: u64, data: u64) {
        let pa = self.line_base(paddr);
        self.memory.insert(pa >> self.line_shift, data);
        let out = self.llc.write_line(pa, data, false);
        if let Some(ev) = out.evicted {
            self.on_llc_evict(ev);
        }
        if let Some(pbs) = self.pbs.as_mut() {
            pbs.on_llc_write(pa >> 12, out.position, data, self.now);
        }
    }

    /// Setup helper: promotes the LLC-resident lines of the 4KB frame at
    /// `frame_base` into a page buffer that is ready immediately. Returns
    /// the buffer used, or `None` without page buffers or a free buffer.
    pub fn preload_pb(&mut self, frame_base: u64, trigger: u64) -> Option<usize> {
        let pbs = self.pbs.as_mut()?;
        let scan = self.llc.lookup_ptr(frame_base);
        let pb = pbs.select_victim_pb(self.now)?;
        let lines = self.llc.read_row(frame_base, &scan.valid_positions);
        let region = self.llc.region_of(trigger) as u32;
        pbs.promote(pb, frame_base >> 12, &lines, region, self.now);
        let generation = pbs.buffer(pb).generation;
        pbs.mark_ready(pb, generation, self.now);
        Some(pb)
    }

    fn line_base(&self, pa: u64) -> u64 {
        pa & !((1u64 << self.line_shift) - 1)
    }

    fn schedule(&mut self, due: u64, ev: Ev) {
        debug_assert!(due >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.events.push(Scheduled { due, seq: self.seq, ev });
    }

    pub fn run<I>(mut self, trace: I) -> Result<RunOutput>
    where
        I: IntoIterator<Item = TraceRecord>,
    {
        let mut records = trace.into_iter();
        self.schedule(self.now, Ev::Core);
        let audit_every = self.cfg.core.audit_interval;
        while let Some(Scheduled { due, ev, .. }) = self.events.pop() {
            self.now = due;
            match ev {
                Ev::Core => self.core_step(&mut records)?,
                Ev::LlcRead { pa, t0, demand, refilled } => self.llc_read(pa, t0, demand, refilled),
                Ev::LlcWrite { pa, data, dirty } => self.llc_write(pa, data, dirty),
                Ev::LlcOwn { pa } => self.llc_own(pa),
                Ev::Ptr(req) => self.ptr_arrival(req),
                Ev::ArrayRead { slice, job } => {
                    self.read_q[slice].push_back(job);
                    self.dispatch(slice);
                }
                Ev::ArrayWrite { slice } => {
                    self.write_q[slice] += 1;
                    self.metrics.write_queue_peak = self.metrics.write_queue_peak.max(self.write_q[slice]);
                    self.dispatch(slice);
                }
                Ev::ArrayFree { slice } => self.dispatch(slice),
                Ev::Fill { pa, value, dirty, source } => self.fill(pa, value, dirty, source),
                Ev::Beat { pa, value, dirty } => self.beat(pa, value, dirty),
            }
            self.events_done += 1;
            if audit_every > 0 && self.events_done.is_multiple_of(audit_every) {
                self.audit();
                self.bus = self.bus.split_off(&self.now);
            }
        }
        if audit_every > 0 {
            self.audit();
        }
        debug_assert!(self.staged.is_none() && self.mshrs.is_empty());
        let s = self.translator.stats;
        let m = &mut self.metrics;
        m.cycles = self.now.max(self.last_completion);
        m.tlb_l1_misses = s.l1_misses;
        m.tlb_l2_hits = s.l2_hits;
        m.tlb_walks = s.walks;
        m.tlb_eligible_refills = s.eligible_refills;
        m.array_busy_cycles = self.arrays.iter().map(|a| a.busy_total).sum();
        self.requests.sort_by_key(|r| r.id);
        self.loads.sort_by_key(|l| l.record);
        Ok(RunOutput { metrics: self.metrics, requests: self.requests, loads: self.loads })
    }

    // ---- core -------------------------------------------------------------

    fn core_step(&mut self, records: &mut dyn Iterator<Item = TraceRecord>) -> Result<()> {
        loop {
            if self.staged.is_none() {
                let Some(rec) = records.next() else {
                    return Ok(());
                };
                let id = self.metrics.records;
                self.metrics.records += 1;
                self.metrics.instructions += rec.gap + 1;
                let issue = self.core_next + rec.gap;
                self.staged = Some(Staged { id, rec, issue, tr: None });
            }
            let mut st = self.staged.unwrap();
            if st.issue > self.now {
                self.schedule(st.issue, Ev::Core);
                return Ok(());
            }
            let tr = match st.tr {
                Some(tr) => tr,
                None => {
                    let r = self.translator.translate(st.rec.vaddr, st.rec.op.is_write())?;
                    if let Some(p) = r.ptr_request {
                        let at = st.issue + r.latency + self.cfg.pb.ptr_latency;
                        self.schedule(at, Ev::Ptr(p));
                    }
                    let t0 = st.issue + r.latency.saturating_sub(self.cfg.l1.tlb_rt);
                    let tr = Translated { paddr: r.paddr, t0, refilled: r.page_refilled };
                    st.tr = Some(tr);
                    self.staged = Some(st);
                    tr
                }
            };
            if tr.t0 > self.now {
                self.schedule(tr.t0, Ev::Core);
                return Ok(());
            }
            match self.access(&st, tr) {
                Access::Done => {
                    self.staged = None;
                    self.core_next = self.now + 1;
                }
                Access::Stall => {
                    self.stalled = true;
                    self.metrics.core_stalls += 1;
                    return Ok(());
                }
            }
        }
    }

    fn complete(&mut self, st: &Staged, paddr: u64, access: u64, done: u64, source: Source, value: Option<u64>) {
        self.last_completion = self.last_completion.max(done);
        self.metrics.record_service(source, done - access);
        if self.opts.record_requests {
            self.requests.push(MemRequest {
                id: st.id,
                op: st.rec.op,
                vaddr: st.rec.vaddr,
                paddr,
                issue_cycle: st.issue,
                access_cycle: access,
                completion_cycle: done,
                source,
            });
        }
        if let (true, Some(value)) = (self.opts.record_loads, value) {
            self.loads.push(LoadValue { record: st.id, vaddr: st.rec.vaddr, value });
        }
    }

    fn touch_origin(&mut self, origin: Option<Origin>) {
        match origin {
            Some(Origin::NextBlock) => self.metrics.prefetches_useful += 1,
            Some(Origin::Promoted) => self.metrics.promoted_lines_accessed += 1,
            None => {}
        }
    }

    fn access(&mut self, st: &Staged, tr: Translated) -> Access {
        let now = self.now;
        let pa = self.line_base(tr.paddr);
        let line = pa >> self.line_shift;
        let load = st.rec.op == Op::Read;
        let store_value = st.id + 1;
        let l1_rt = self.cfg.l1.rt;
        if load {
            self.metrics.loads += 1;
        } else {
            self.metrics.stores += 1;
        }

        if self.l1.get(line).is_some() {
            self.metrics.l1_hits += 1;
            let l2 = self.l2.peek_mut(line).expect("L1 is inclusive in L2");
            let value = if load {
                l2.data
            } else {
                l2.data = Some(store_value);
                l2.dirty = true;
                None
            };
            debug_assert!(!load || value.is_some());
            self.complete(st, tr.paddr, now, now + l1_rt, Source::L1, value);
            return Access::Done;
        }
        self.metrics.l1_misses += 1;

        if let Some(l2) = self.l2.get(line) {
            let origin = l2.origin.take();
            if l2.pending {
                let captured = l2.data;
                if !load {
                    l2.data = Some(store_value);
                    l2.dirty = true;
                }
                self.metrics.l2_pending_hits += 1;
                self.touch_origin(origin);
                if load {
                    let waiter = Waiter {
                        id: st.id,
                        vaddr: st.rec.vaddr,
                        paddr: tr.paddr,
                        issue: st.issue,
                        access: now,
                        captured,
                        primary: false,
                    };
                    self.mshrs.get_mut(&line).expect("pending lines own an MSHR").waiters.push(waiter);
                } else {
                    self.complete(st, tr.paddr, now, now + l1_rt, Source::L2, None);
                }
                return Access::Done;
            }
            let value = if load {
                l2.data
            } else {
                l2.data = Some(store_value);
                l2.dirty = true;
                None
            };
            self.metrics.l2_hits += 1;
            self.touch_origin(origin);
            self.l1.insert(line, ());
            let done = if load { now + self.cfg.l2.rt } else { now + l1_rt };
            self.complete(st, tr.paddr, now, done, Source::L2, value);
            return Access::Done;
        }

        // L2 miss.
        if load && self.mshrs.len() >= self.cfg.core.mshr_limit {
            return Access::Stall;
        }
        if !self.l2.can_insert(line, |l| !l.pending) {
            return Access::Stall;
        }
        let request = self.timing.request;
        if load {
            self.metrics.l2_load_misses += 1;
            self.insert_l2(line, L2Line { data: None, dirty: false, pending: true, origin: None });
            let waiter = Waiter {
                id: st.id,
                vaddr: st.rec.vaddr,
                paddr: tr.paddr,
                issue: st.issue,
                access: now,
                captured: None,
                primary: true,
            };
            self.mshrs.insert(line, Mshr { waiters: vec![waiter] });
            self.schedule(now + request, Ev::LlcRead { pa, t0: now, demand: true, refilled: tr.refilled });
            if self.cfg.l2.next_block_prefetch {
                self.next_block_prefetch(line);
            }
        } else {
            self.metrics.l2_store_misses += 1;
            self.insert_l2(line, L2Line { data: Some(store_value), dirty: true, pending: false, origin: None });
            self.l1.insert(line, ());
            *self.inflight.entry(line).or_default() += 1;
            self.schedule(now + request, Ev::LlcOwn { pa });
            self.complete(st, tr.paddr, now, now + l1_rt, Source::L2, None);
        }
        Access::Done
    }

    fn mshr_room_for_prefetch(&self) -> bool {
        // Prefetches only while MSHR occupancy is below 90%.
        self.mshrs.len() * 10 < self.cfg.core.mshr_limit * 9
    }

    fn next_block_prefetch(&mut self, line: u64) {
        let next = line + 1;
        if next / self.lines_per_page != line / self.lines_per_page
            || self.l2.contains(next)
            || !self.mshr_room_for_prefetch()
            || !self.l2.can_insert(next, |l| !l.pending)
        {
            return;
        }
        self.metrics.prefetches += 1;
        let origin = Some(Origin::NextBlock);
        self.insert_l2(next, L2Line { data: None, dirty: false, pending: true, origin });
        self.mshrs.insert(next, Mshr::default());
        let pa = next << self.line_shift;
        self.schedule(self.now + self.timing.request, Ev::LlcRead { pa, t0: self.now, demand: false, refilled: false });
    }

    /// Inserts into L2, sending any victim to the LLC.
    fn insert_l2(&mut self, line: u64, value: L2Line) {
        let evicted = self.l2.insert_with(line, value, |l| !l.pending).ok().flatten();
        if let Some((victim, v)) = evicted {
            self.metrics.l2_evictions += 1;
            self.l1.remove(victim);
            *self.inflight.entry(victim).or_default() += 1;
            let data = v.data.expect("evictable lines hold data");
            let pa = victim << self.line_shift;
            self.schedule(self.now + self.timing.request, Ev::LlcWrite { pa, data, dirty: v.dirty });
        }
    }

    fn fill(&mut self, pa: u64, value: u64, dirty: bool, source: Source) {
        let line = pa >> self.line_shift;
        let mshr = self.mshrs.remove(&line).expect("fill without MSHR");
        let l2 = self.l2.peek_mut(line).expect("pending lines stay in L2");
        if l2.data.is_none() {
            l2.data = Some(value);
        }
        l2.dirty |= dirty;
        l2.pending = false;
        if !mshr.waiters.is_empty() {
            self.l1.insert(line, ());
        }
        for w in mshr.waiters {
            if w.primary {
                self.metrics.l2_miss_response_cycles += self.now - w.access;
            }
            let st = Staged {
                id: w.id,
                rec: TraceRecord { gap: 0, op: Op::Read, vaddr: w.vaddr },
                issue: w.issue,
                tr: None,
            };
            self.complete(&st, w.paddr, w.access, self.now, source, Some(w.captured.unwrap_or(value)));
        }
        self.wake_core();
    }

    fn wake_core(&mut self) {
        if self.stalled {
            self.stalled = false;
            self.schedule(self.now, Ev::Core);
        }
    }

    // ---- LLC --------------------------------------------------------------

    fn array_source(&self) -> Source {
        match self.cfg.llc.technology {
            Technology::Sram => Source::SramLlc,
            Technology::Nvm => Source::NvmLlc,
        }
    }

    fn bus_grant(&mut self, earliest: u64) -> u64 {
        let mut t = earliest;
        while self.bus.contains(&t) {
            t += 1;
        }
        self.bus.insert(t);
        t
    }

    fn on_llc_evict(&mut self, ev: LlcLine) {
        self.metrics.llc_evictions += 1;
        let line = ev.paddr >> self.line_shift;
        if ev.dirty {
            self.metrics.mem_writes += 1;
            self.memory.insert(line, ev.data);
        } else {
            debug_assert_eq!(self.memory.get(&line).copied().unwrap_or(0), ev.data, "clean line differs from memory");
        }
        if let Some(pbs) = self.pbs.as_mut() {
            pbs.on_llc_invalidate(ev.paddr >> 12, ev.position);
        }
    }

    fn llc_read(&mut self, pa: u64, t0: u64, demand: bool, refilled: bool) {
        let now = self.now;
        let tag = self.timing.tag;
        let m = &mut self.metrics;
        m.llc_tag_lookups += 1;
        if demand {
            m.llc_reads += 1;
        }
        if self.pbs.is_some() {
            m.pb_tag_lookups += 1;
        }
        let look = self.llc.lookup_clr(pa);
        if !look.hit {
            let m = &mut self.metrics;
            m.mem_reads += 1;
            if demand {
                m.llc_misses += 1;
                m.llc_read_service_cycles += now + tag - t0;
            }
            let value = self.memory.get(&(pa >> self.line_shift)).copied().unwrap_or(0);
            let at = (t0 + self.cfg.mem.rt).max(now);
            self.schedule(at, Ev::Fill { pa, value, dirty: false, source: Source::Memory });
            return;
        }
        if demand {
            self.metrics.llc_hits += 1;
            if refilled {
                self.metrics.llc_hits_refilled += 1;
            }
        }
        let frame = pa >> 12;
        let pb = self.pbs.as_ref().map(|p| p.pb_lookup(frame, true, look.position, now + tag)).unwrap_or_default();
        let line = self.llc.invalidate(pa).expect("hit line is valid");
        if pb.pb_hit {
            let pbs = self.pbs.as_mut().unwrap();
            let id = pb.pb.unwrap();
            let (data, first) = pbs.on_pb_read_hit(id, look.position, now);
            pbs.on_llc_invalidate(frame, look.position);
            if data != line.data {
                self.metrics.audit_violations += 1;
            }
            let m = &mut self.metrics;
            m.pb_reads += 1;
            if first {
                m.promoted_lines_accessed += 1;
            }
            if demand {
                m.pb_hits += 1;
            }
            let ready = now + tag + 1 + self.timing.pb_data;
            let grant = self.bus_grant(ready);
            let done = grant + self.timing.response;
            if demand {
                self.metrics.llc_read_service_cycles += done - t0;
            }
            self.schedule(done, Ev::Fill { pa, value: data, dirty: line.dirty, source: Source::Pb });
            return;
        }
        if let Some(pbs) = self.pbs.as_mut() {
            pbs.on_llc_invalidate(frame, look.position);
        }
        if demand {
            self.metrics.llc_array_hits += 1;
        }
        let slice = self.llc.slice_of(pa);
        let at = now + tag + u64::from(pb.extra_cycle);
        let job = Job::Read { pa, value: line.data, dirty: line.dirty, t0, demand };
        self.schedule(at, Ev::ArrayRead { slice, job });
    }

    fn release_inflight(&mut self, line: u64) {
        if let Some(c) = self.inflight.get_mut(&line) {
            *c -= 1;
            if *c == 0 {
                self.inflight.remove(&line);
            }
        }
    }

    fn llc_write(&mut self, pa: u64, data: u64, dirty: bool) {
        self.release_inflight(pa >> self.line_shift);
        let m = &mut self.metrics;
        m.llc_writes += 1;
        m.llc_tag_lookups += 1;
        if self.pbs.is_some() {
            m.pb_tag_lookups += 1;
        }
        let out = self.llc.write_line(pa, data, dirty);
        if out.installed {
            self.metrics.llc_installs += 1;
        }
        if let Some(ev) = out.evicted {
            self.on_llc_evict(ev);
        }
        if let Some(pbs) = self.pbs.as_mut() {
            if matches!(pbs.on_llc_write(pa >> 12, out.position, data, self.now), WriteEffect::Updated | WriteEffect::Installed) {
                self.metrics.pb_writes += 1;
            }
        }
        let slice = self.llc.slice_of(pa);
        let at = self.now + self.timing.tag;
        self.schedule(at, Ev::ArrayWrite { slice });
    }

    fn llc_own(&mut self, pa: u64) {
        self.release_inflight(pa >> self.line_shift);
        self.metrics.llc_ownership_requests += 1;
        self.metrics.llc_tag_lookups += 1;
        if let Some(line) = self.llc.invalidate(pa) {
            if let Some(pbs) = self.pbs.as_mut() {
                self.metrics.pb_tag_lookups += 1;
                pbs.on_llc_invalidate(pa >> 12, line.position);
            }
        }
    }

    fn dispatch(&mut self, slice: usize) {
        let now = self.now;
        if !self.arrays[slice].is_free(now) {
            return;
        }
        let forced = self.write_q[slice] >= self.cfg.llc.write_queue_depth as u64;
        let job = if forced {
            self.metrics.write_queue_forced += 1;
            None
        } else if let Some(j) = self.read_q[slice].pop_front() {
            Some(j)
        } else if self.write_q[slice] > 0 {
            None
        } else {
            return;
        };
        let t = self.timing;
        let Some(job) = job else {
            self.write_q[slice] -= 1;
            self.metrics.llc_array_writes += 1;
            let s = self.arrays[slice].reserve(now, t.write_occupancy);
            self.schedule(s + t.write_occupancy, Ev::ArrayFree { slice });
            return;
        };
        let s = self.arrays[slice].reserve(now, t.read_occupancy);
        self.schedule(s + t.read_occupancy, Ev::ArrayFree { slice });
        match job {
            Job::Read { pa, value, dirty, t0, demand } => {
                self.metrics.llc_array_reads += 1;
                let grant = self.bus_grant(s + t.data);
                let done = grant + t.response;
                if demand {
                    self.metrics.llc_read_service_cycles += done - t0;
                }
                let source = self.array_source();
                self.schedule(done, Ev::Fill { pa, value, dirty, source });
            }
            Job::Row { pb, lines, to_l2 } => {
                self.metrics.row_reads += 1;
                self.metrics.row_read_lines += lines;
                if let (Some((id, generation)), Some(pbs)) = (pb, self.pbs.as_mut()) {
                    let regions = self.cfg.core.page_size / self.cfg.pb.size;
                    pbs.mark_ready(id, generation, s + t.data + t.pb_data + regions - 1);
                }
                for (i, (pa, value, dirty)) in to_l2.into_iter().enumerate() {
                    self.schedule(s + t.data + i as u64, Ev::Beat { pa, value, dirty });
                }
            }
        }
    }

    /// A fetch-to-L2 line takes the response bus only when it is idle.
    fn beat(&mut self, pa: u64, value: u64, dirty: bool) {
        if self.bus.contains(&self.now) {
            self.schedule(self.now + 1, Ev::Beat { pa, value, dirty });
        } else {
            self.bus.insert(self.now);
            let source = self.array_source();
            self.schedule(self.now + self.timing.response, Ev::Fill { pa, value, dirty, source });
        }
    }

    fn ptr_arrival(&mut self, req: PtrRequest) {
        let base = req.base();
        let frame = req.frame;
        self.metrics.ptr_received += 1;
        let scan = self.llc.lookup_ptr(base);
        self.metrics.record_ptr_population(scan.population);
        let slice = self.llc.slice_of(base);
        let at = self.now + self.timing.tag;
        if let Some(pbs) = self.pbs.as_mut() {
            self.metrics.pb_tag_lookups += 1;
            if let Some(pb) = pbs.find_pb(frame) {
                pbs.touch(pb, self.now);
                self.metrics.ptr_refreshed += 1;
                return;
            }
            self.metrics.ptr_tag_scans += 1;
            if !pbs.gate_promotion(scan.population) {
                self.metrics.ptr_gated_out += 1;
                return;
            }
            let Some(pb) = pbs.select_victim_pb(self.now) else {
                self.metrics.ptr_no_victim += 1;
                return;
            };
            let lines = self.llc.read_row(base, &scan.valid_positions);
            let region = self.llc.region_of(req.trigger) as u32;
            let tag = pbs.promote(pb, frame, &lines, region, self.now);
            let generation = pbs.buffer(pb).generation;
            let m = &mut self.metrics;
            m.ptr_promoted += 1;
            m.promoted_lines += u64::from(tag.residency_counter);
            m.pb_writes += u64::from(tag.residency_counter);
            let job = Job::Row { pb: Some((pb, generation)), lines: lines.len() as u64, to_l2: Vec::new() };
            self.schedule(at, Ev::ArrayRead { slice, job });
            return;
        }
        if !self.fetch_to_l2 || self.llc.page_row().is_none() {
            return;
        }
        self.metrics.ptr_tag_scans += 1;
        if scan.population < self.cfg.pb.threshold {
            self.metrics.ptr_gated_out += 1;
            return;
        }
        self.metrics.ptr_promoted += 1;
        let mut to_l2 = Vec::new();
        for &pos in &scan.valid_positions {
            let pa = self.llc.line_at(base, pos).expect("scanned line is valid");
            let line = pa >> self.line_shift;
            if self.l2.contains(line) {
                continue;
            }
            if !self.mshr_room_for_prefetch() || !self.l2.can_insert(line, |l| !l.pending) {
                self.metrics.promoted_lines_dropped += 1;
                continue;
            }
            let held = self.llc.invalidate(pa).expect("scanned line is valid");
            let origin = Some(Origin::Promoted);
            self.insert_l2(line, L2Line { data: Some(held.data), dirty: held.dirty, pending: true, origin });
            self.mshrs.insert(line, Mshr::default());
            self.metrics.promoted_lines += 1;
            to_l2.push((pa, held.data, held.dirty));
        }
        let job = Job::Row { pb: None, lines: u64::from(scan.population), to_l2 };
        self.schedule(at, Ev::ArrayRead { slice, job });
    }

    // ---- audits -------------------------------------------------------------

    /// Checks PB/LLC coherence, residency counts, exclusivity and inclusion.
    /// Returns the number of violations found (also added to the metrics).
    pub fn audit(&mut self) -> u64 {
        let mut bad = 0u64;
        if let Some(pbs) = self.pbs.as_ref() {
            for b in pbs.buffers() {
                let Some(ppn) = b.ppn else { continue };
                let base = ppn << 12;
                let mut live = 0;
                for (s, slot) in b.slots.iter().enumerate().filter(|(_, s)| s.occupied) {
                    let pos = pbs.position_of(s, slot.region);
                    let resident = self.llc.line_at(base, pos).filter(|pa| pa >> 12 == ppn);
                    if slot.live != resident.is_some() {
                        bad += 1;
                    }
                    if slot.live {
                        live += 1;
                        if resident.and_then(|pa| self.llc.read_line(pa)) != Some(slot.data) {
                            bad += 1;
                        }
                    }
                }
                if live != b.residency {
                    bad += 1;
                }
            }
        }
        for (line, l) in self.l2.iter() {
            if !l.pending && !self.inflight.contains_key(&line) && self.llc.contains(line << self.line_shift) {
                bad += 1;
            }
        }
        for (line, _) in self.l1.iter() {
            if !self.l2.contains(line) {
                bad += 1;
            }
        }
        if !self.translator.check_inclusion() {
            bad += 1;
        }
        self.metrics.audits += 1;
        self.metrics.audit_violations += bad;
        bad
    }
}

/// Runs `trace` on a fresh simulator.
pub fn run_trace(cfg: &SimConfig, trace: &[TraceRecord], opts: SimOptions) -> Result<RunOutput> {
    Simulator::new(cfg, opts)?.run(trace.iter().copied())
}
