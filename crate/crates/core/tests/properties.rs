use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use comrades_core::coordinator::{feasible_intervals, is_suitable, propose_start, CoordinatorConfig, UsageWindow};
use comrades_core::crypto::{generate_challenge, solve_challenge, verify_solution, ClientIdentity};
use comrades_core::dht::{derive_key, Dht, SimDht};
use comrades_core::site::{self, response_time, TargetSite, TrafficLedger};
use comrades_core::target::canonicalize;
use comrades_core::trust::{apply_outcome, CampaignOutcome, TrustConfig, TrustDb, Verdict};
use comrades_core::CampaignStart;

fn host() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9-]{0,10}(\\.[a-zA-Z]{2,6}){1,2}\\.?"
}

fn raw_url() -> impl Strategy<Value = String> {
    (
        prop_oneof!["http", "https", "HTTP", "Https"],
        host(),
        proptest::option::of(1u16..65535),
        "(/[a-zA-Z0-9._~-]{0,8}){0,4}/?",
    )
        .prop_map(|(scheme, host, port, path)| match port {
            Some(p) => format!("{scheme}://{host}:{p}{path}"),
            None => format!("{scheme}://{host}{path}"),
        })
}

fn site() -> TargetSite {
    TargetSite {
        base_latency: 80.0,
        capacity: 250.0,
        timeout: 4_000.0,
        ..TargetSite::new(canonicalize("http://pills.example/").unwrap())
    }
}

proptest! {
    #[test]
    fn canonicalization_is_idempotent(raw in raw_url()) {
        let once = canonicalize(&raw).unwrap();
        let twice = canonicalize(&once.render()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.host(), once.host().to_ascii_lowercase());
    }

    #[test]
    fn response_time_is_monotone_and_capped(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let s = site();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (r_lo, r_hi) = (response_time(&s, lo), response_time(&s, hi));
        prop_assert!(r_lo <= r_hi);
        prop_assert!(r_hi <= s.timeout);
        prop_assert!(r_lo >= s.base_latency);
    }

    #[test]
    fn analytic_success_threshold(alpha in 1.1f64..4.0, extra in 0.0f64..2.0) {
        // Load at or above capacity * sqrt(alpha - 1) multiplies the idle
        // latency by at least alpha.
        let s = TargetSite { timeout: 1e12, ..site() };
        let load = s.capacity * (alpha - 1.0).sqrt() * (1.0 + extra);
        prop_assert!(response_time(&s, load) >= alpha * response_time(&s, 0.0) * (1.0 - 1e-12));
    }

    #[test]
    fn visitors_are_conserved(bursts in proptest::collection::vec((0u64..50, 0u64..40), 1..40)) {
        let s = TargetSite { visitor_rate: 7, patience: 300.0, ..site() };
        let mut ledger = TrafficLedger::default();
        for (minute, &(n, rate)) in bursts.iter().enumerate() {
            site::send_opt_out_burst(&mut ledger, n, rate, minute as u64);
            site::settle_minute(&s, &mut ledger, minute as u64, s.capacity);
        }
        let totals = ledger.totals();
        prop_assert_eq!(totals.visitors(), 7 * bursts.len() as u64);
    }

    #[test]
    fn proposals_are_always_suitable(
        now in 0u64..50_000,
        min_wait in 1u64..500,
        span in 1u64..3_000,
        start in 0u64..10_000,
        len in 1u64..2_000,
        seed in any::<u64>(),
    ) {
        let end = (start + len).min(10_080);
        let cfg = CoordinatorConfig {
            min_wait,
            max_wait: min_wait + span,
            usage_windows: vec![UsageWindow::new(start, end)],
            ..CoordinatorConfig::default()
        };
        let intervals = feasible_intervals(now, &cfg);
        match propose_start(now, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(s) => {
                prop_assert!(is_suitable(s, now, &cfg));
                prop_assert!(intervals.iter().any(|&(a, b)| a <= s && s <= b));
            }
            Err(_) => prop_assert!(intervals.is_empty()),
        }
        for &(a, b) in &intervals {
            prop_assert!(is_suitable(a, now, &cfg) && is_suitable(b, now, &cfg));
        }
    }

    #[test]
    fn challenges_round_trip(seed in any::<u64>(), max_rand in 0u64..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let issuer = ClientIdentity::generate(&mut rng);
        let (challenge, rand2) = generate_challenge(&issuer, max_rand, 0, &mut rng);
        prop_assert!(challenge.rand1 <= max_rand && rand2 <= max_rand);
        let solved = solve_challenge(&challenge, max_rand).unwrap();
        prop_assert_eq!(solved.solution, rand2);
        prop_assert_eq!(solved.work, rand2 + 1);
        prop_assert!(verify_solution(&challenge, solved.solution));
    }

    #[test]
    fn threshold_ramps_monotonically_to_the_cap(verdicts in proptest::collection::vec(any::<bool>(), 0..60)) {
        let cfg = TrustConfig::default();
        let mut db = TrustDb::new(0);
        let outcome = CampaignOutcome {
            campaign: CampaignStart::new(canonicalize("http://a.example/").unwrap(), 100),
            baseline_latency: 1.0,
            during_latency: 1.0,
            comrades: vec![b"peer".to_vec()],
        };
        let mut last = db.current_min_accumulated_trust();
        for ok in verdicts {
            let v = if ok { Verdict::Success } else { Verdict::Failure };
            apply_outcome(&mut db, v, &outcome, &cfg);
            let now = db.current_min_accumulated_trust();
            prop_assert!(now >= last);
            prop_assert!(now <= u64::from(cfg.ramp_cap));
            prop_assert!(db.consecutive_failures() < cfg.failures_before_reset);
            last = now;
        }
    }

    #[test]
    fn dht_matches_a_map_of_sets(ops in proptest::collection::vec((0u8..3, 0u8..6, 0u8..5), 1..300)) {
        let mut dht = SimDht::default();
        let mut oracle: BTreeMap<u8, BTreeSet<Vec<u8>>> = BTreeMap::new();
        for (i, (op, k, v)) in ops.into_iter().enumerate() {
            let key = derive_key(&[b'k', k]).unwrap();
            let value = vec![b'v', v];
            match op {
                0 => {
                    dht.put(key, &value, i as u64).unwrap();
                    oracle.entry(k).or_default().insert(value);
                }
                1 => {
                    dht.remove(&key, &value);
                    if let Some(s) = oracle.get_mut(&k) {
                        s.remove(&value);
                    }
                }
                _ => {
                    let mut got = dht.get(&key, i as u64);
                    got.sort();
                    let want: Vec<Vec<u8>> = oracle.get(&k).map(|s| s.iter().cloned().collect()).unwrap_or_default();
                    prop_assert_eq!(got, want);
                }
            }
        }
    }
}
