use std::collections::BTreeSet;
use std::sync::Arc;

use dhsa::bfv::Bfv;
use dhsa::harness::{
    party_rng, run_session, run_session_in, CaptureMode, DemaskSource, FixedUpdates, SessionOptions,
    UniformUpdates,
};
use dhsa::mkbfv::{gen_reenc_keypair, ReEncKeyPair};
use dhsa::protocol::{
    ClientPhase, ClientState, Destination, Message, MessageKind, PartyRef, Payload, ServerState,
    SessionConfig, SessionContext,
};
use dhsa::shprg::Setting;
use dhsa::Error;
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn small(n: usize, m: usize, epochs: usize, tau: usize) -> SessionConfig {
    SessionConfig {
        n_clients: n,
        model_size: m,
        tau,
        max_epochs: epochs,
        setting: Setting::A,
        ..Default::default()
    }
}

fn all_views(n: u32, seed: u64) -> SessionOptions {
    SessionOptions {
        master_seed: seed,
        record_views: (0..n).collect(),
        ..Default::default()
    }
}

#[test]
fn three_clients_full_pipeline() {
    let out = run_session(small(3, 8, 3, 2), &mut UniformUpdates::new(1, -1.0, 1.0), &all_views(3, 5)).unwrap();
    let r = &out.report;
    assert_eq!(r.rounds.total, 3 + 3 * 2);
    assert_eq!(r.rounds.expected, 9);
    assert_eq!(r.rounds.msa_runs, 2);
    assert_eq!(r.correctness.violations, 0);
    assert_eq!(r.correctness.output_disagreements, 0);
    assert!(r.correctness.max_abs_model_error <= r.correctness.model_error_bound);
    assert!(r.correctness.error_histogram.keys().all(|e| (-2..=0).contains(e)));
    let mut seen = BTreeSet::new();
    for v in &out.views {
        assert_eq!(v.epochs.len(), 3);
        for entry in v.epochs.values() {
            assert!(seen.insert(entry.seed.entries().to_vec()), "seed reused");
        }
    }
    let kinds: BTreeSet<_> = out.transcript.entries().iter().map(|e| e.kind).collect();
    assert_eq!(kinds.len(), MessageKind::ALL.len());
    assert_eq!(out.transcript.total_bytes(), r.traffic.total_bytes);
    let per_party: u64 = r.traffic.parties.iter().map(|p| p.msa_up + p.hma_up + p.secure_up).sum();
    assert_eq!(per_party, r.traffic.total_bytes);
    let down: u64 = r.traffic.parties.iter().map(|p| p.msa_down + p.hma_down + p.secure_down).sum();
    assert_eq!(down, r.traffic.total_bytes);
}

#[test]
fn demask_seeds_equal_big_integer_sums() {
    let out = run_session(small(3, 4, 2, 2), &mut UniformUpdates::new(2, -1.0, 1.0), &all_views(3, 9)).unwrap();
    let q = BigUint::from(1u8) << 54;
    for epoch in [1u32, 2] {
        let entries: Vec<_> = out.views.iter().map(|v| &v.epochs[&epoch]).collect();
        for j in 0..512 {
            let sum: BigUint = entries.iter().map(|e| BigUint::from(e.seed.entries()[j])).sum();
            let k0 = BigUint::from(entries[0].demask.entries()[j]);
            assert_eq!(k0, sum % &q);
        }
        assert!(entries.iter().all(|e| e.demask == entries[0].demask));
    }
}

#[test]
fn single_client_demask_equals_own_seed() {
    let out = run_session(small(1, 16, 3, 3), &mut UniformUpdates::new(3, -1.0, 1.0), &all_views(1, 1)).unwrap();
    for e in out.views[0].epochs.values() {
        assert_eq!(e.seed, e.demask);
    }
    assert_eq!(out.report.correctness.error_histogram.keys().copied().collect::<Vec<_>>(), vec![0]);
    assert!(out.report.correctness.max_abs_model_error < out.report.correctness.model_error_bound);
}

#[test]
fn seed_ciphertext_count_is_ceil_mu_tau_over_n() {
    for (tau, expected) in [(2usize, 1usize), (8, 1), (9, 2), (100, 13)] {
        let cfg = small(2, 4, 1, tau);
        assert_eq!(cfg.ciphertexts_per_run().unwrap(), expected);
        let out = run_session(cfg, &mut UniformUpdates::new(4, -1.0, 1.0), &SessionOptions::default()).unwrap();
        let upload = out
            .transcript
            .entries()
            .iter()
            .find(|e| e.kind == MessageKind::SeedCiphertexts)
            .unwrap();
        assert_eq!(upload.len, 16 + 4 + expected * 131_085);
    }
}

#[test]
fn aggregate_error_within_bound_three_clients() {
    let cfg = SessionConfig { m_min: -1.0, m_max: 1.0, w: 16, ..small(3, 8, 4, 4) };
    let out = run_session(cfg, &mut UniformUpdates::new(5, -1.0, 1.0), &SessionOptions::default()).unwrap();
    let bound = 5.0 * 2f64.powi(-16) * 2.0;
    assert!((out.report.correctness.model_error_bound - bound).abs() < 1e-15);
    assert!(out.report.correctness.max_abs_model_error <= bound);
}

#[test]
fn constant_minimum_input_sums_to_n_times_minimum() {
    let n = 4;
    let cfg = small(n, 32, 2, 2);
    let updates = FixedUpdates(vec![vec![-1.0; 32]; n]);
    let out = run_session(cfg, &mut updates.clone(), &SessionOptions::default()).unwrap();
    let bound = out.report.correctness.model_error_bound;
    for o in &out.outputs {
        assert!(o.model_sum.iter().all(|v| (v + n as f64).abs() <= bound));
    }
}

#[test]
fn aggregate_error_stays_in_window_over_ten_thousand_entries() {
    let n = 8;
    let cfg = small(n, 10_000, 1, 1);
    let out = run_session(cfg, &mut UniformUpdates::new(6, -1.0, 1.0), &SessionOptions::default()).unwrap();
    let h = &out.report.correctness.error_histogram;
    assert_eq!(h.values().sum::<u64>(), 10_000);
    assert!(h.keys().all(|&e| (-(n as i64 - 1)..=0).contains(&e)));
}

#[test]
fn identical_seeds_give_identical_transcripts() {
    let run = |seed| {
        let opts = SessionOptions { master_seed: seed, capture: CaptureMode::Full, ..Default::default() };
        run_session(small(3, 50, 3, 2), &mut UniformUpdates::new(7, -1.0, 1.0), &opts).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.report.deterministic_json(), b.report.deterministic_json());
    assert_ne!(a.transcript.digest(), c.transcript.digest());
    let mut log = Vec::new();
    a.transcript.write_binary(&mut log).unwrap();
    assert_eq!(log.len(), a.transcript.len() * 12 + a.transcript.total_bytes() as usize);
}

#[test]
fn server_never_receives_secrets() {
    let opts = SessionOptions { capture: CaptureMode::Full, ..Default::default() };
    let out = run_session(small(4, 8, 2, 2), &mut UniformUpdates::new(8, -1.0, 1.0), &opts).unwrap();
    let allowed = [
        MessageKind::PkShare,
        MessageKind::SeedCiphertexts,
        MessageKind::KeySwitchShareMsg,
        MessageKind::MaskedUpload,
    ];
    for e in out.transcript.entries() {
        if e.receiver == PartyRef::Server {
            assert!(allowed.contains(&e.kind), "{}", e.kind);
        }
        if e.kind == MessageKind::ReEncKeyDeliver {
            assert!(e.secure_channel());
            assert_eq!(e.sender, PartyRef::Client(0));
        }
    }
    let secure = out.report.traffic.secure_channel_bytes;
    assert!(secure > 0);
    assert_eq!(out.report.traffic.client_server_bytes + secure, out.report.traffic.total_bytes);
}

fn setup(n: usize, m: usize) -> (Arc<SessionContext>, Vec<ClientState>, ServerState) {
    let ctx = SessionContext::new(small(n, m, 1, 1)).unwrap();
    let clients = (0..n as u32)
        .map(|i| ClientState::new(i, ctx.clone(), party_rng(0, PartyRef::Client(i))))
        .collect();
    let server = ServerState::new(ctx.clone());
    (ctx, clients, server)
}

fn msg(sender: PartyRef, payload: Payload) -> Message {
    Message { sender, run: 0, epoch: 0, payload }
}

#[test]
fn out_of_phase_messages_are_named() {
    let (_, mut clients, mut server) = setup(2, 4);
    let y = dhsa::codec::MaskedVector { values: vec![0; 4] };
    let err = clients[0]
        .step(vec![Message { epoch: 1, ..msg(PartyRef::Server, Payload::MaskedAggBroadcast(y.clone())) }])
        .unwrap_err();
    assert!(matches!(&err, Error::ProtocolViolation { message, .. } if message.contains("MaskedAggBroadcast")), "{err}");
    let err = server
        .step(vec![msg(PartyRef::Client(0), Payload::KeySwitchShareMsg(vec![]))])
        .unwrap_err();
    assert!(err.to_string().contains("KeySwitchShareMsg"), "{err}");
    let err = server.step(vec![msg(PartyRef::Server, Payload::MaskedAggBroadcast(y))]).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation { .. }));
}

#[test]
fn server_reports_missing_and_duplicate_parties() {
    let (_, mut clients, mut server) = setup(3, 4);
    let mut uploads = Vec::new();
    for c in clients.iter_mut() {
        let outs = c.begin_msa(0, 1).unwrap();
        uploads.extend(outs.into_iter().filter(|o| o.to == Destination::Server).map(|o| o.message));
    }
    let dup = uploads[0].clone();
    assert!(server.step(uploads[..2].to_vec()).unwrap().is_empty());
    assert_eq!(server.finish_round(), Err(Error::MissingParty(2)));
    assert_eq!(server.step(vec![dup]).unwrap_err(), Error::DuplicateParty(0));
}

#[test]
fn masked_uploads_produce_one_broadcast_in_any_order() {
    let (ctx, _, _) = setup(3, 8);
    let uploads: Vec<Message> = (0..3u32)
        .map(|i| Message {
            epoch: 1,
            ..msg(
                PartyRef::Client(i),
                Payload::MaskedUpload(dhsa::codec::MaskedVector { values: vec![(i as u64 + 1) << 22; 8] }),
            )
        })
        .collect();
    let mut results = Vec::new();
    for order in [[0usize, 1, 2], [2, 0, 1]] {
        let mut server = ServerState::new(ctx.clone());
        let outs = server.step(order.iter().map(|&i| uploads[i].clone()).collect()).unwrap();
        server.finish_round().unwrap();
        assert_eq!(outs.len(), 1);
        assert_eq!(outs[0].to, Destination::Broadcast);
        results.push(outs[0].message.encode(&ctx));
    }
    assert_eq!(results[0], results[1]);
    let out = Message::decode(&results[0], &ctx).unwrap();
    let Payload::MaskedAggBroadcast(y) = out.payload else { panic!() };
    assert_eq!(y.values, vec![(6u64 << 22) % (1 << 24); 8]);
}

#[test]
fn corrupted_reencryption_pair_aborts() {
    let (ctx, mut clients, mut server) = setup(2, 4);
    let mut uploads = Vec::new();
    let mut delivered = None;
    for c in clients.iter_mut() {
        for o in c.begin_msa(0, 1).unwrap() {
            match o.to {
                Destination::Server => uploads.push(o.message),
                Destination::Secure(1) => delivered = Some(o.message),
                _ => unreachable!(),
            }
        }
    }
    let cpk = server.step(uploads).unwrap().remove(0).message;
    let Payload::ReEncKeyDeliver(kp) = delivered.unwrap().payload else { panic!() };
    let bfv = Bfv::new(ctx.bfv.params().clone(), ctx.config.sampler).unwrap();
    let other = gen_reenc_keypair(&bfv, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let bad = ReEncKeyPair { sk_r: other.sk_r, pk_r: kp.pk_r };
    let err = clients[1]
        .step(vec![cpk, msg(PartyRef::Client(0), Payload::ReEncKeyDeliver(bad))])
        .unwrap_err();
    assert_eq!(err, Error::ReEncKeyInvalid(1));
}

#[test]
fn reencryption_key_only_from_leader() {
    let (_, mut clients, _) = setup(3, 4);
    clients[2].begin_msa(0, 1).unwrap();
    let bfv = Bfv::default_params();
    let kp = gen_reenc_keypair(&bfv, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
    let err = clients[2].step(vec![msg(PartyRef::Client(1), Payload::ReEncKeyDeliver(kp))]).unwrap_err();
    assert!(err.to_string().contains("ReEncKeyDeliver"));
}

#[test]
fn client_refuses_epoch_without_seeds_and_reuse() {
    let (_, mut clients, _) = setup(2, 4);
    assert!(clients[0].begin_epoch(1, &[0.0; 4]).is_err());
    let params = clients[0].seed(1).cloned();
    assert!(params.is_none());
    let (ctx, _, _) = setup(2, 4);
    let mut c = ClientState::new(0, ctx.clone(), party_rng(1, PartyRef::Client(0)));
    let s = dhsa::shprg::Seed::zero(ctx.shprg_params());
    c.install_seed_pair(1, s.clone(), s).unwrap();
    assert_eq!(c.phase(), ClientPhase::Ready);
    c.begin_epoch(1, &[0.5; 4]).unwrap();
    assert!(c.seed(1).is_none() && c.demask_seed(1).is_none());
    assert_eq!(c.phase(), ClientPhase::AwaitMaskedAggregate);
    assert!(c.begin_epoch(1, &[0.5; 4]).is_err());
}

#[test]
fn ideal_and_agreed_demasking_agree_on_output_quality() {
    let cfg = small(5, 200, 2, 2);
    let ctx = SessionContext::new(cfg).unwrap();
    for demask in [DemaskSource::Agreement, DemaskSource::Ideal] {
        let opts = SessionOptions { demask, ..Default::default() };
        let out = run_session_in(ctx.clone(), &mut UniformUpdates::new(9, -1.0, 1.0), &opts).unwrap();
        assert_eq!(out.report.correctness.violations, 0);
        let rounds = if demask == DemaskSource::Ideal { 2 } else { 5 };
        assert_eq!(out.report.rounds.total, rounds);
    }
}

#[test]
fn aborts_carry_phase_context() {
    struct Short;
    impl dhsa::harness::UpdateSource for Short {
        fn updates(&mut self, _e: u32, n: usize, m: usize) -> Vec<Vec<f64>> {
            vec![vec![0.0; m - 1]; n]
        }
    }
    let err = run_session(small(2, 4, 1, 1), &mut Short, &SessionOptions::default()).unwrap_err();
    match err {
        Error::Aborted { phase, source } => {
            assert_eq!(phase, "aggregation epoch 1");
            assert_eq!(*source, Error::LengthMismatch { expected: 4, got: 3 });
        }
        other => panic!("{other}"),
    }
    let bad = SessionConfig { n_clients: 300, ..Default::default() };
    assert!(run_session(bad, &mut Short, &SessionOptions::default()).is_err());
}

#[test]
fn early_stop_skips_remaining_runs() {
    struct StopAfter(u32, u32);
    impl dhsa::harness::UpdateSource for StopAfter {
        fn updates(&mut self, _e: u32, n: usize, m: usize) -> Vec<Vec<f64>> {
            vec![vec![0.25; m]; n]
        }
        fn aggregate(&mut self, epoch: u32, _sum: &[f64]) {
            self.1 = epoch;
        }
        fn should_stop(&self) -> bool {
            self.1 >= self.0
        }
    }
    let out = run_session(small(2, 4, 5, 2), &mut StopAfter(2, 0), &SessionOptions::default()).unwrap();
    assert_eq!(out.report.rounds.total, 3 + 2);
    assert_eq!(out.report.rounds.msa_runs, 1);
    assert_eq!(out.report.rounds.expected, 5);
}
