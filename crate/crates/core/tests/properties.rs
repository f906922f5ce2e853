// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use indexmap::IndexMap;
use proptest::prelude::*;

use bscan_olm::analog_fabric::{
    AbmTransferModel, AnalogBus, BusLine, Connection, NoiseSource, Segment,
};
use bscan_olm::ecu_model::{EcuNetlist, Fault, FaultKind, Link, Node, SignalClass};
use bscan_olm::idr::RotationSchedule;
use bscan_olm::measurement::{diff_compare, measure_dc, measure_duty, ComparatorConfig};
use bscan_olm::reconfigure::{capacity, Reconfigurator};
use bscan_olm::signals::{EdgeDirection, Waveform};
use bscan_olm::tap_engine::{configure_cost, TapController, TapState};
use bscan_olm::timing::{cycles_vs_chain_length, loop_rate, Mode, TimingParams};

mod common;
use common::*;

proptest! {
    #[test]
    fn tap_table_matches_oracle(walk in proptest::collection::vec(any::<bool>(), 1..64)) {
        let mut s = TapState::TestLogicReset;
        let mut o = "TestLogicReset";
        for tms in walk {
            s = s.step(tms);
            o = oracle_next(o, tms);
            prop_assert_eq!(name(s), o);
        }
    }

    #[test]
    fn bypass_shift_delay_is_device_count(
        n in 1usize..7,
        bits in proptest::collection::vec(any::<bool>(), 1..40),
    ) {
        let specs: Vec<(usize, usize)> = (0..n).map(|i| (2 + i % 3, 4)).collect();
        let mut tap = TapController::new(chain_of(&specs));
        // Idle -> Select-DR -> Capture-DR -> Shift-DR
        tap.clock(true, false);
        tap.clock(false, false);
        tap.clock(false, false);
        prop_assert_eq!(tap.state(), TapState::ShiftDr);
        let out: Vec<bool> = bits.iter().chain(std::iter::repeat_n(&false, n)).map(|b| tap.clock(false, *b)).collect();
        for (k, o) in out.iter().enumerate() {
            let expected = if k < n { false } else { bits[k - n] };
            prop_assert_eq!(*o, expected, "cycle {}", k);
        }
    }

    #[test]
    fn configure_cost_is_additive(
        specs in proptest::collection::vec((2usize..9, 0usize..40), 1..7),
        bits in proptest::collection::vec(any::<bool>(), 1..16),
    ) {
        let chain = chain_of(&specs);
        let ir: usize = specs.iter().map(|s| s.0).sum();
        let dr: usize = specs.iter().map(|s| s.1).sum();
        let oracle = oracle_scan_cycles(true, ir) + oracle_scan_cycles(false, dr);
        let targets = targets_for(&chain, &bits);
        let mut tap = TapController::new(chain.clone());
        let cost = tap.configure(&targets).unwrap();
        prop_assert_eq!(cost.0, oracle);
        prop_assert_eq!(configure_cost(&chain).0, oracle);
        prop_assert_eq!(tap.cycles().0, oracle);
    }

    #[test]
    fn configure_is_idempotent(
        specs in proptest::collection::vec((2usize..9, 0usize..24), 1..5),
        bits in proptest::collection::vec(any::<bool>(), 1..16),
    ) {
        let chain = chain_of(&specs);
        let targets = targets_for(&chain, &bits);
        let mut tap = TapController::new(chain);
        tap.configure(&targets).unwrap();
        let once: Vec<_> = tap.chain().devices.iter().map(|d| (d.instruction(), d.boundary_register().to_vec())).collect();
        tap.configure(&targets).unwrap();
        let twice: Vec<_> = tap.chain().devices.iter().map(|d| (d.instruction(), d.boundary_register().to_vec())).collect();
        prop_assert_eq!(&once, &twice);
        for (d, (ins, reg)) in tap.chain().devices.iter().zip(&once) {
            prop_assert_eq!(*ins, targets[&d.name].instruction);
            prop_assert_eq!(reg, &targets[&d.name].cells);
        }
    }
}

#[test]
fn five_tms_high_resets_from_every_state() {
    for s in TapState::ALL {
        let mut x = s;
        let mut o = name(s);
        for _ in 0..5 {
            x = x.step(true);
            o = oracle_next(&o, true).to_string();
        }
        assert_eq!(x, TapState::TestLogicReset, "from {s:?}");
        assert_eq!(o, "TestLogicReset");
    }
}

// ---------------------------------------------------------------------------
// Waveforms

fn waveform() -> impl Strategy<Value = Waveform> {
    prop_oneof![
        (-2.0f64..5.0).prop_map(Waveform::dc),
        (0.1f64..3.0, 1.0f64..5e5, 0.0f64..6.0, -1.0f64..2.0)
            .prop_map(|(a, f, p, o)| Waveform::sine(a, f, p, o)),
        (-1.0f64..1.0, 1.0f64..6.0, 10.0f64..5e4, 0.01f64..0.99)
            .prop_map(|(lo, hi, f, d)| Waveform::pwm(lo, hi, f, d).unwrap()),
    ]
}

proptest! {
    #[test]
    fn sample_is_pure(w in waveform(), t in 0.0f64..1.0) {
        let w2 = w.clone().lowpass(2e5).clipped(-0.5, 3.0);
        prop_assert_eq!(w.sample(t).unwrap().to_bits(), w.sample(t).unwrap().to_bits());
        prop_assert_eq!(w2.sample(t).unwrap().to_bits(), w2.sample(t).unwrap().to_bits());
    }

    #[test]
    fn pwm_high_time_is_duty_over_frequency(
        f in 1.0f64..1e5, duty in 0.001f64..0.999, k in 0u32..1000,
    ) {
        let w = Waveform::pwm(0.0, 3.5, f, duty).unwrap();
        let t0 = k as f64 / f;
        let e = w.edges_in(t0, (k + 1) as f64 / f);
        prop_assert_eq!(e.len(), 2);
        prop_assert_eq!(e[0].direction, EdgeDirection::Rising);
        prop_assert_eq!(e[1].direction, EdgeDirection::Falling);
        let high = e[1].time - e[0].time;
        prop_assert!((high - duty / f).abs() <= 1e-9 / f);
    }

    #[test]
    fn edges_split_without_duplicates(
        f in 1.0f64..1e4, duty in 0.01f64..0.99,
        a in 0.0f64..0.5, ab in 0.0f64..0.5, bc in 0.0f64..0.5,
    ) {
        let w = Waveform::pwm(0.0, 1.0, f, duty).unwrap();
        let (b, c) = (a + ab, a + ab + bc);
        let mut joined = w.edges_in(a, b);
        joined.extend(w.edges_in(b, c));
        prop_assert_eq!(joined, w.edges_in(a, c));
    }

    #[test]
    fn pulse_edges_split_without_duplicates(
        gaps in proptest::collection::vec(1e-4f64..0.05, 1..40),
        a in 0.0f64..0.3, ab in 0.0f64..0.6,
    ) {
        let mut t = 0.0;
        let edges: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let w = Waveform::pulses(0.0, 3.5, edges).unwrap();
        let b = a + ab;
        let mut joined = w.edges_in(0.0, a);
        joined.extend(w.edges_in(a, b));
        joined.extend(w.edges_in(b, 10.0));
        prop_assert_eq!(joined, w.edges_in(0.0, 10.0));
    }
}

// ---------------------------------------------------------------------------
// Analogue fabric

proptest! {
    #[test]
    fn transfer_output_is_clipped(w in waveform(), gain in 0.1f64..4.0, t in 0.0f64..0.1) {
        let m = AbmTransferModel::default();
        let out = m.transfer(&Waveform::scaled(gain, w)).unwrap();
        let v = out.sample(t).unwrap();
        prop_assert!(v >= m.v_min - 1e-12 && v <= m.v_max + 1e-12, "{}", v);
    }

    #[test]
    fn gain_is_non_increasing(f1 in 0.0f64..1e7, df in 0.0f64..1e7) {
        let m = AbmTransferModel::default();
        prop_assert!(m.gain_at(f1 + df) <= m.gain_at(f1));
        // Amplitude of an unclipped sine through the transfer follows the gain.
        let amp = |f: f64| {
            let out = m.transfer(&Waveform::sine(0.5, f.max(1.0), 0.0, 1.5)).unwrap();
            let (lo, hi) = out.bounds().unwrap();
            (hi - lo) / 2.0
        };
        prop_assert!(amp(f1 + df) <= amp(f1) + 1e-12);
    }

    #[test]
    fn linked_pair_reads_the_same_on_both_lines(v in -0.6f64..3.9) {
        let seg = Segment { pair: 0, nodes: vec!["a".into(), "b".into()] };
        let mut bus = AnalogBus::new(1, IndexMap::from([("s".to_string(), seg)])).unwrap();
        bus.connect(0, BusLine::At1, Connection::Tap("a".into())).unwrap();
        bus.connect(0, BusLine::At2, Connection::Load("b".into())).unwrap();
        bus.set_linked(0, true).unwrap();
        let (at1, at2) = bus.bus_resolve(0, |n| (n == "a").then(|| Waveform::dc(v))).unwrap();
        prop_assert_eq!(at1, at2);
    }
}

// ---------------------------------------------------------------------------
// ECU model

fn node(name: &str, class: SignalClass, source: Waveform) -> Node {
    Node {
        name: name.into(),
        class,
        source,
        critical: false,
        bias: None,
    }
}

fn three_node_net() -> EcuNetlist {
    EcuNetlist::new(
        vec![
            node("a", SignalClass::DigitalHigh, Waveform::dc(3.5)),
            node("b", SignalClass::DigitalHigh, Waveform::dc(3.5)),
            node(
                "c",
                SignalClass::Pwm,
                Waveform::pwm(0.0, 3.5, 1000.0, 0.3).unwrap(),
            ),
        ],
        vec![Link {
            name: "ab".into(),
            from: "a".into(),
            to: "b".into(),
            has_abm: true,
        }],
        vec![],
    )
    .unwrap()
}

fn fault_kind() -> impl Strategy<Value = FaultKind> {
    prop_oneof![
        Just(FaultKind::StuckLow),
        Just(FaultKind::StuckHigh),
        Just(FaultKind::ShortToGround),
        (0.1f64..2.0).prop_map(FaultKind::Drift),
    ]
}

proptest! {
    #[test]
    fn faults_do_not_reach_back_in_time(
        kind in fault_kind(), onset in 0.1f64..1.0, frac in 0.0f64..1.0, target in 0usize..3,
    ) {
        let names = ["a", "b", "c"];
        let clean = three_node_net();
        let mut net = three_node_net();
        net.inject_fault(Fault::new(onset, kind, names[target])).unwrap();
        net.inject_fault(Fault::new(onset, FaultKind::Open, "ab")).unwrap();
        let win = (0.0, onset * 0.999);
        let t = win.1 * frac;
        for n in names {
            let got = net.node_waveform(n, win).unwrap().sample(t).unwrap();
            let want = clean.node_waveform(n, win).unwrap().sample(t).unwrap();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn fault_injection_order_does_not_matter(
        k1 in fault_kind(), k2 in fault_kind(),
        o1 in 0.0f64..1.0, o2 in 0.0f64..1.0, t in 0.0f64..1.2,
        pick in 0usize..3,
    ) {
        let pairs = [("a", "c"), ("b", "c"), ("a", "b")];
        let (x, y) = pairs[pick];
        let mut n1 = three_node_net();
        n1.inject_fault(Fault::new(o1, k1, x)).unwrap();
        n1.inject_fault(Fault::new(o2, k2, y)).unwrap();
        let mut n2 = three_node_net();
        n2.inject_fault(Fault::new(o2, k2, y)).unwrap();
        n2.inject_fault(Fault::new(o1, k1, x)).unwrap();
        for n in ["a", "b", "c"] {
            let w = (0.0, 1.2);
            prop_assert_eq!(
                n1.node_waveform(n, w).unwrap().sample(t).unwrap(),
                n2.node_waveform(n, w).unwrap().sample(t).unwrap()
            );
        }
    }

    #[test]
    fn fault_free_nodes_show_their_source(level in -0.5f64..3.9, f in 1.0f64..1e4, duty in 0.05f64..0.95, t in 0.0f64..1.0) {
        let src = [
            ("x", Waveform::dc(level)),
            ("y", Waveform::pwm(0.0, 3.5, f, duty).unwrap()),
            ("z", Waveform::sine(1.0, f, 0.0, 1.5)),
        ];
        let net = EcuNetlist::new(
            src.iter().map(|(n, w)| node(n, SignalClass::DigitalHigh, w.clone())).collect(),
            vec![],
            vec![],
        )
        .unwrap();
        for (n, w) in &src {
            prop_assert_eq!(net.node_waveform(n, (0.0, 1.0)).unwrap().sample(t).unwrap(), w.sample(t).unwrap());
        }
    }
}

// ---------------------------------------------------------------------------
// Measurement

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparator_is_symmetric(a in waveform(), b in waveform(), t0 in 0.0f64..0.05) {
        let m = AbmTransferModel::default();
        let (a, b) = (m.transfer(&a).unwrap(), m.transfer(&b).unwrap());
        let cfg = ComparatorConfig::default();
        let win = (t0, t0 + 0.002);
        prop_assert_eq!(diff_compare(&a, &b, &cfg, win).unwrap(), diff_compare(&b, &a, &cfg, win).unwrap());
    }

    #[test]
    fn healthy_lines_never_trigger(class_idx in 0usize..7, t0 in 0.0f64..0.5) {
        let classes = [
            (SignalClass::DigitalHigh, Waveform::dc(3.5), None),
            (SignalClass::DigitalLow, Waveform::dc(0.0), Some(0.5)),
            (SignalClass::PullUp, Waveform::pwm(0.0, 3.5, 5.0, 0.5).unwrap(), None),
            (SignalClass::PullDown, Waveform::pwm(0.0, 3.5, 5.0, 0.5).unwrap(), None),
            (SignalClass::Pwm, Waveform::pwm(0.0, 3.5, 1000.0, 0.6).unwrap(), None),
            (SignalClass::AnalogGround, Waveform::dc(0.0), None),
            (SignalClass::Hall, Waveform::pulses(0.0, 3.5, (1..400).map(|k| k as f64 * 0.0031).collect()).unwrap(), None),
        ];
        let (class, src, bias) = classes[class_idx].clone();
        let mut drv = node("drv", class, src);
        drv.bias = bias;
        let rcv = node("rcv", class, Waveform::dc(0.0));
        let net = EcuNetlist::new(
            vec![drv, rcv],
            vec![Link { name: "l".into(), from: "drv".into(), to: "rcv".into(), has_abm: true }],
            vec![],
        )
        .unwrap();
        let win = (t0, t0 + 0.01);
        let m = AbmTransferModel::default();
        let at1 = m.transfer(&net.node_waveform("drv", win).unwrap()).unwrap();
        let at2 = m.transfer(&net.node_waveform("rcv", win).unwrap()).unwrap();
        prop_assert!(!diff_compare(&at1, &at2, &ComparatorConfig::default(), win).unwrap());
    }
}

proptest! {
    #[test]
    fn dc_error_stays_within_bound(seed in any::<u64>(), level in -0.64f64..3.92, t0 in 0.0f64..1.0) {
        let mut noise = NoiseSource::new(seed);
        let w = AbmTransferModel::default().transfer(&Waveform::dc(level)).unwrap();
        for _ in 0..8 {
            let (v, cost) = measure_dc(&w, (t0, t0 + 7e-6), &mut noise, 0.01).unwrap();
            prop_assert!((v - level).abs() <= 0.01 + 1e-12);
            prop_assert_eq!(cost, 7e-6);
        }
    }

    #[test]
    fn duty_is_exact_on_clean_pwm(f in 10.0f64..2e4, duty in 0.01f64..0.99, k in 0u32..100) {
        let w = Waveform::pwm(0.0, 3.5, f, duty).unwrap();
        let t0 = k as f64 / f + 0.1 / f;
        let d = measure_duty(&w, (t0, t0 + 12.0 / f)).unwrap();
        prop_assert!((d - duty).abs() <= 1e-9, "{} vs {}", d, duty);
    }
}

// ---------------------------------------------------------------------------
// Rotation

fn names(p: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{p}{i}")).collect()
}

proptest! {
    #[test]
    fn rotation_is_injective_and_covers(
        a in 1usize..7, m in 1usize..7, step in 0u64..10_000, drop in proptest::option::of(0usize..7),
    ) {
        let mut s = RotationSchedule::new(names("d", a), names("l", m), 100.0).unwrap();
        if let Some(k) = drop.filter(|k| *k < a && a > 1) {
            s = s.exclude(&format!("d{k}")).unwrap();
        }
        let active: Vec<String> = s.active().iter().map(|x| x.to_string()).collect();
        let p = s.period_steps() as u64;
        // Injective at every step.
        for k in step..step + p {
            let used: Vec<&str> = s.mapping_at_step(k).into_iter().filter_map(|(_, d)| d).collect();
            let mut dedup = used.clone();
            dedup.sort();
            dedup.dedup();
            prop_assert_eq!(used.len(), dedup.len());
            prop_assert!(used.iter().all(|d| active.iter().any(|x| x == d)));
        }
        // Over one period every logical meets every active driver equally often.
        for i in 0..m {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for k in step..step + p {
                if let (_, Some(d)) = s.mapping_at_step(k)[i] {
                    *counts.entry(d.to_string()).or_default() += 1;
                }
            }
            prop_assert_eq!(counts.len(), active.len());
            let first = counts.values().next().copied().unwrap();
            prop_assert!(counts.values().all(|c| *c == first));
        }
    }

    #[test]
    fn excluded_driver_never_serves(a in 2usize..7, m in 1usize..7, k in 0usize..7, t in 0.0f64..100.0) {
        let k = k % a;
        let s = RotationSchedule::new(names("d", a), names("l", m), 120.0).unwrap().exclude(&format!("d{k}")).unwrap();
        let bad = format!("d{k}");
        prop_assert!(s.rotate_mapping(t).iter().all(|(_, d)| *d != Some(bad.as_str())));
    }

    #[test]
    fn healthy_rotation_conveys_demand(a in 1usize..6, demand in proptest::collection::vec(any::<bool>(), 1..6), start in 0u64..1000) {
        // With at least as many drivers as logicals every logical is served at
        // every step, so its output in each period equals its demand.
        let m = demand.len();
        let a = a.max(m);
        let s = RotationSchedule::new(names("d", a), names("l", m), 100.0).unwrap();
        let p = s.period_steps() as u64;
        for i in 0..m {
            let on = (start..start + p)
                .filter(|k| demand[i] && s.mapping_at_step(*k)[i].1.is_some())
                .count() as u64;
            prop_assert_eq!(on, if demand[i] { p } else { 0 });
        }
    }
}

// ---------------------------------------------------------------------------
// Reconfiguration

fn bypass_net(links: usize, level: f64) -> EcuNetlist {
    let mut nodes = Vec::new();
    let mut ls = Vec::new();
    for i in 0..links {
        nodes.push(node(
            &format!("d{i}"),
            SignalClass::DigitalHigh,
            Waveform::dc(level),
        ));
        nodes.push(node(
            &format!("r{i}"),
            SignalClass::DigitalHigh,
            Waveform::dc(level),
        ));
        ls.push(Link {
            name: format!("l{i}"),
            from: format!("d{i}"),
            to: format!("r{i}"),
            has_abm: true,
        });
    }
    EcuNetlist::new(nodes, ls, vec![]).unwrap()
}

proptest! {
    #[test]
    fn bypasses_never_exceed_capacity(
        pairs in 1usize..5,
        ops in proptest::collection::vec((any::<bool>(), 0usize..8), 1..40),
    ) {
        let links = 8;
        let mut net = bypass_net(links, 3.5);
        // One segment per pair, links dealt round-robin over the segments.
        let segs: IndexMap<String, Segment> = (0..pairs)
            .map(|p| {
                let nodes = (p..links).step_by(pairs).flat_map(|i| [format!("d{i}"), format!("r{i}")]).collect();
                (format!("s{p}"), Segment { pair: p, nodes })
            })
            .collect();
        let mut bus = AnalogBus::new(pairs, segs).unwrap();
        let mut r = Reconfigurator::default();
        let mut noise = NoiseSource::new(1);
        for (k, (apply, l)) in ops.into_iter().enumerate() {
            let link = format!("l{l}");
            if apply {
                let _ = r.request_bypass(&mut bus, &mut net, &link, k as f64, &mut noise).unwrap();
            } else {
                r.release_bypass(&mut bus, &mut net, &link, k as f64).unwrap();
            }
            prop_assert!(r.active_bypasses() <= capacity(bus.bus_lines()));
        }
    }

    #[test]
    fn bypassed_receiver_tracks_source(level in -0.64f64..3.92, seed in any::<u64>()) {
        let mut net = bypass_net(1, level);
        net.inject_fault(Fault::new(0.0, FaultKind::Open, "l0")).unwrap();
        let seg = Segment { pair: 0, nodes: vec!["d0".into(), "r0".into()] };
        let mut bus = AnalogBus::new(1, IndexMap::from([("s".to_string(), seg)])).unwrap();
        let mut r = Reconfigurator::default();
        r.apply_bypass(&mut bus, &mut net, "l0", 0.5, &mut NoiseSource::new(seed)).unwrap();
        let v = net.node_waveform("r0", (0.5, 1.0)).unwrap().sample(0.75).unwrap();
        prop_assert!((v - level).abs() <= 2.0 * bus.model.dc_noise_bound + 1e-12, "{} vs {}", v, level);
    }
}

#[test]
fn capacity_is_half_the_bus_lines() {
    for (b, c) in [(1, 0), (2, 1), (4, 2), (8, 4)] {
        assert_eq!(capacity(b), c);
    }
}

// ---------------------------------------------------------------------------
// Timing

proptest! {
    #[test]
    fn best_is_never_slower_than_worst(n in 1u32..64, cycles in 1.0f64..1e7, tck in 1e5f64..1e8) {
        let mut p = TimingParams { n_nodes: n, f_tck: tck, ..TimingParams::default() };
        p.config_cycles_initial = cycles;
        p.config_cycles_full = cycles;
        let best = loop_rate(&TimingParams { mode: Mode::Best, ..p });
        let worst = loop_rate(&TimingParams { mode: Mode::Worst, ..p });
        prop_assert!(best >= worst);
    }

    #[test]
    fn loop_rate_falls_with_load(
        n in 1u32..64, extra in 1u32..16, c in 1.0f64..1e6, dc in 1.0f64..1e6, adc in 1e-7f64..1e-3, fourier in 1e-3f64..1.0,
    ) {
        for mode in [Mode::Best, Mode::Worst] {
            let base = TimingParams {
                n_nodes: n,
                config_cycles_initial: c,
                config_cycles_full: c,
                adc_capture: adc,
                fourier_cost: fourier,
                mode,
                ..TimingParams::default()
            };
            let r = loop_rate(&base);
            let more_cycles = TimingParams { config_cycles_initial: c + dc, config_cycles_full: c + dc, ..base };
            let more_nodes = TimingParams { n_nodes: n + extra, ..base };
            let slower_test = TimingParams { adc_capture: adc * 2.0, fourier_cost: fourier * 2.0, ..base };
            prop_assert!(loop_rate(&more_cycles) < r);
            prop_assert!(loop_rate(&more_nodes) < r);
            prop_assert!(loop_rate(&slower_test) < r);
        }
    }

    #[test]
    fn longer_chains_cost_more(
        specs in proptest::collection::vec((2usize..9, 0usize..40), 1..6),
        extra in (2usize..9, 1usize..40),
        n in 1u64..20,
    ) {
        let short = chain_of(&specs);
        let mut longer = specs.clone();
        longer.push(extra);
        let long = chain_of(&longer);
        for mode in [Mode::Best, Mode::Worst] {
            prop_assert!(cycles_vs_chain_length(&long, mode, n) > cycles_vs_chain_length(&short, mode, n));
        }
        prop_assert!(cycles_vs_chain_length(&short, Mode::Best, n) <= cycles_vs_chain_length(&short, Mode::Worst, n));
    }
}
