use std::collections::{HashMap, HashSet};

use pbsim::config::SimConfig;
use pbsim::geometry::{
    decompose_clr, decompose_conventional, decompose_ptr, derive_conventional, derive_geometry, recompose_clr,
};
use pbsim::harness::fmt_sig6;
use pbsim::page_buffer::{PageBufferSet, SnapshotLine};
use pbsim::synth::{generate, SynthParams};
use pbsim::trace::{parse_trace_str, read_binary, trace_to_string, write_binary};
use pbsim::{run_trace, Op, Scheme, SimOptions, TraceRecord};
use proptest::prelude::*;

const ADDR_MASK: u64 = (1 << 48) - 1;

fn layout_config() -> impl Strategy<Value = SimConfig> {
    (prop::sample::select(vec![4u64, 8, 16, 32]), prop::sample::select(vec![1u64, 2, 4])).prop_map(|(mb, slices)| {
        let mut cfg = SimConfig::default();
        cfg.llc.slice_size = mb << 20;
        cfg.llc.slices = slices;
        cfg
    })
}

fn record() -> impl Strategy<Value = TraceRecord> {
    (0u64..1_000_000, any::<bool>(), 0u64..=ADDR_MASK)
        .prop_map(|(gap, w, vaddr)| TraceRecord { gap, op: if w { Op::Write } else { Op::Read }, vaddr })
}

proptest! {
    #[test]
    fn clr_decomposition_round_trips(cfg in layout_config(), pa in 0u64..=ADDR_MASK) {
        let g = derive_geometry(&cfg).unwrap();
        let idx = decompose_clr(pa, &g);
        prop_assert_eq!(recompose_clr(&idx, &g), pa);
        let p = decompose_ptr(pa, &g);
        prop_assert_eq!((p.row, p.slice, p.tag_high), (idx.row, idx.slice, idx.tag_high));
    }

    #[test]
    fn a_page_lands_in_one_row(cfg in layout_config(), frame in 0u64..(1 << 36)) {
        let g = derive_geometry(&cfg).unwrap();
        let base = frame << 12;
        let first = decompose_ptr(base, &g);
        let mut positions = HashSet::new();
        for line in 0..64u64 {
            let idx = decompose_clr(base + line * 64, &g);
            prop_assert_eq!((idx.row, idx.slice, idx.tag_high), (first.row, first.slice, first.tag_high));
            positions.insert((idx.set, idx.tag_low));
        }
        prop_assert_eq!(positions.len(), 64);
    }

    #[test]
    fn conventional_fields_cover_the_address(cfg in layout_config(), pa in 0u64..=ADDR_MASK) {
        let g = derive_conventional(&cfg).unwrap();
        let i = decompose_conventional(pa, &g);
        let rebuilt = (i.tag << g.tag.lo) | (i.slice << g.slice.lo) | (i.set << g.set.lo) | i.offset;
        prop_assert_eq!(rebuilt, pa);
    }

    #[test]
    fn traces_round_trip(records in prop::collection::vec(record(), 0..200)) {
        prop_assert_eq!(parse_trace_str(&trace_to_string(&records)).unwrap(), records.clone());
        let mut buf = Vec::new();
        write_binary(&records, &mut buf).unwrap();
        prop_assert_eq!(read_binary(&buf[..]).unwrap(), records);
    }

    #[test]
    fn sig6_keeps_six_digits(v in -1e12f64..1e12) {
        let back: f64 = fmt_sig6(v).parse().unwrap();
        prop_assert!((back - v).abs() <= v.abs() * 5e-6 + f64::MIN_POSITIVE);
    }
}

#[derive(Debug, Clone)]
enum PbOp {
    Promote { pb: usize, ppn: u64, positions: Vec<u64>, trigger: u32 },
    Read { ppn: u64, position: u64 },
    Write { ppn: u64, position: u64, data: u64 },
    Invalidate { ppn: u64, position: u64 },
    Idle(u64),
}

fn pb_op() -> impl Strategy<Value = PbOp> {
    prop_oneof![
        (0usize..20, 0u64..8, prop::collection::btree_set(0u64..64, 0..64), 0u32..2).prop_map(
            |(pb, ppn, set, trigger)| PbOp::Promote { pb, ppn, positions: set.into_iter().collect(), trigger }
        ),
        (0u64..8, 0u64..64).prop_map(|(ppn, position)| PbOp::Read { ppn, position }),
        (0u64..8, 0u64..64, any::<u64>()).prop_map(|(ppn, position, data)| PbOp::Write { ppn, position, data }),
        (0u64..8, 0u64..64).prop_map(|(ppn, position)| PbOp::Invalidate { ppn, position }),
        (0u64..2000).prop_map(PbOp::Idle),
    ]
}

proptest! {
    #[test]
    fn page_buffer_bookkeeping_stays_consistent(ops in prop::collection::vec(pb_op(), 1..120)) {
        let cfg = SimConfig::default();
        let mut pbs = PageBufferSet::new(&cfg);
        let max_counter = (1u32 << cfg.pb.replacement_counter_bits) - 1;
        let mut now = 0u64;
        for op in ops {
            now += 1;
            match op {
                PbOp::Promote { pb, ppn, positions, trigger } => {
                    if pbs.find_pb(ppn).is_some_and(|cur| cur != pb) {
                        continue;
                    }
                    let lines: Vec<_> = positions.iter().map(|&p| SnapshotLine { position: p, data: p }).collect();
                    let tag = pbs.promote(pb, ppn, &lines, trigger, now);
                    prop_assert!(tag.residency_counter as usize <= lines.len().min(32));
                    // Every populated slot holds one of the offered lines.
                    for (slot, region) in tag.regions.iter().enumerate() {
                        if let Some(r) = region {
                            prop_assert!(positions.contains(&pbs.position_of(slot, *r)));
                        }
                    }
                }
                PbOp::Read { ppn, position } => {
                    let l = pbs.pb_lookup(ppn, true, position, now);
                    if l.pb_hit {
                        pbs.on_pb_read_hit(l.pb.unwrap(), position, now);
                    }
                }
                PbOp::Write { ppn, position, data } => {
                    pbs.on_llc_write(ppn, position, data, now);
                }
                PbOp::Invalidate { ppn, position } => {
                    pbs.on_llc_invalidate(ppn, position);
                }
                PbOp::Idle(d) => now += d,
            }
            for (i, b) in pbs.buffers().iter().enumerate() {
                let live = b.slots.iter().filter(|s| s.live).count() as u32;
                prop_assert_eq!(b.residency, live);
                prop_assert!(b.slots.iter().all(|s| s.occupied || !s.live));
                prop_assert!(pbs.effective_counter(i, now) <= max_counter);
                if let Some(ppn) = b.ppn {
                    prop_assert_eq!(pbs.find_pb(ppn), Some(i));
                }
            }
        }
    }
}

fn small_trace() -> impl Strategy<Value = Vec<TraceRecord>> {
    // A few pages so lines are reused, plus a far region that forces evictions.
    let addr = prop_oneof![
        3 => (0u64..24, 0u64..64).prop_map(|(p, l)| 0x10_0000 + p * 4096 + l * 64),
        1 => (0u64..4096, 0u64..64).prop_map(|(p, l)| 0x4000_0000 + p * 4096 * 16 + l * 64),
    ];
    prop::collection::vec((0u64..6, any::<bool>(), addr), 1..400).prop_map(|v| {
        v.into_iter()
            .map(|(gap, w, vaddr)| if w { TraceRecord::write(gap, vaddr) } else { TraceRecord::read(gap, vaddr) })
            .collect()
    })
}

fn expected_loads(trace: &[TraceRecord]) -> Vec<u64> {
    let mut mem = HashMap::new();
    let mut out = Vec::new();
    for (id, r) in trace.iter().enumerate() {
        match r.op {
            Op::Write => {
                mem.insert(r.vaddr >> 6, id as u64 + 1);
            }
            Op::Read => out.push(mem.get(&(r.vaddr >> 6)).copied().unwrap_or(0)),
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loads_return_the_last_store(trace in small_trace(), scheme in prop::sample::select(Scheme::ALL.to_vec())) {
        let mut cfg = SimConfig::for_scheme(scheme);
        // Small caches so short traces exercise every eviction path.
        cfg.l1.size = 4096;
        cfg.l2.size = 16384;
        cfg.llc.slice_size = 1 << 20;
        cfg.core.audit_interval = 50;
        let out = run_trace(&cfg, &trace, SimOptions { record_requests: true, record_loads: true }).unwrap();
        let got: Vec<u64> = out.loads.iter().map(|l| l.value).collect();
        prop_assert_eq!(got, expected_loads(&trace));
        prop_assert_eq!(out.metrics.audit_violations, 0);
        prop_assert_eq!(out.requests.len(), trace.len());
        for r in &out.requests {
            prop_assert!(r.issue_cycle <= r.access_cycle && r.access_cycle < r.completion_cycle);
            prop_assert!(r.completion_cycle <= out.metrics.cycles);
        }
    }

    #[test]
    fn synthetic_traces_are_reproducible(seed in any::<u64>(), pool in 8u64..512, revisit in 0.0f64..1.0) {
        let p = SynthParams { seed, page_pool: pool, revisit_prob: revisit, accesses: 2000, ..SynthParams::default() };
        let a = generate(&p).unwrap();
        prop_assert_eq!(a.len(), 2000);
        prop_assert!(a.iter().all(|r| r.vaddr <= ADDR_MASK && r.gap <= 2 * p.mean_gap));
        prop_assert_eq!(generate(&p).unwrap(), a);
    }
}
