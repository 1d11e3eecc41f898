//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Runs sequentially in a plain binary so timings are not disturbed by
//! parallel tests. Exits nonzero when a criterion fails that is not listed
//! in `KNOWN_GAPS`; known gaps still print FAIL.

use std::time::Instant;

use dhsa::bfv::{decode, Bfv, Ciphertext};
use dhsa::codec;
use dhsa::harness::{
    audit_colluding_view, run_session, run_session_in, time_mask_expand, time_msa, toy_fedavg,
    CaptureMode, DemaskSource, FedAvgMode, SessionOptions, TrainerConfig, UniformUpdates,
};
use dhsa::mkbfv;
use dhsa::protocol::{MessageKind, SessionConfig, SessionContext};
use dhsa::ring::{sample_uniform, RingParams, DEFAULT_PRIME_0, DEFAULT_PRIME_1};
use dhsa::shprg::{add_seeds, centered_diff, sample_seed, Setting, Shprg, ShprgParams};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Criteria that cannot hold as stated; see the README.
const KNOWN_GAPS: &[u32] = &[6];

type Outcome = dhsa::Result<(bool, String)>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn c1_error_bound() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for n in [2usize, 3, 8, 16, 64, 256] {
        let cfg = SessionConfig { n_clients: n, model_size: 1000, tau: 1, max_epochs: 1, ..Default::default() };
        let ctx = SessionContext::new(cfg)?;
        let (mut lo, mut hi, mut violations) = (0i64, 0i64, 0u64);
        for trial in 0..100u64 {
            let opts = SessionOptions { master_seed: trial, demask: DemaskSource::Ideal, ..Default::default() };
            let mut updates = UniformUpdates::new(1000 + trial, -1.0, 1.0);
            let out = run_session_in(ctx.clone(), &mut updates, &opts)?;
            let h = &out.report.correctness.error_histogram;
            lo = lo.min(*h.keys().next().unwrap());
            hi = hi.max(*h.keys().last().unwrap());
            violations += h
                .iter()
                .filter(|(&e, _)| e < -(n as i64 - 1) || e > n as i64 - 1)
                .map(|(_, c)| c)
                .sum::<u64>();
        }
        ok &= violations == 0;
        notes.push(format!("N={n}: e0 in [{lo},{hi}], {violations} violations"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    Ok((ok, format!("{}; {secs:.1}s", notes.join("; "))))
}

fn c2_shprg_homomorphism() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut notes = Vec::new();
    let mut ok = true;
    for setting in [Setting::A, Setting::B] {
        let params = ShprgParams::preset(setting, [2; 32]);
        let shprg = Shprg::new(params.clone())?;
        let p = params.p();
        let (mut checks, mut bad) = (0usize, 0usize);
        let mut seen = [0usize; 3];
        while checks < 100_000 {
            let s1 = sample_seed(&params, &mut rng);
            let s2 = sample_seed(&params, &mut rng);
            let s12 = add_seeds(&[s1.clone(), s2.clone()], &params)?;
            let g = shprg.expand_many(&[&s1, &s2, &s12], 10_000)?;
            for j in 0..10_000 {
                let lhs = (g[0].values[j] + g[1].values[j]) % p;
                let e = centered_diff(lhs, g[2].values[j], p);
                if (-1..=1).contains(&e) {
                    seen[(e + 1) as usize] += 1;
                } else {
                    bad += 1;
                }
                checks += 1;
            }
        }
        ok &= bad == 0;
        notes.push(format!("{setting}: {checks} checks, e=-1/0/1 counts {seen:?}, {bad} outside"));
    }
    Ok((ok, notes.join("; ")))
}

fn c3_mk_pipeline() -> Outcome {
    let bfv = Bfv::default_params();
    let params = ShprgParams::preset(Setting::A, [3; 32]);
    let n = bfv.params().degree();
    let tau = 100;
    let t_mask = u64::MAX as u128;
    let mut notes = Vec::new();
    let mut ok = true;
    let (mut single_trials, mut single_min) = (0usize, 1.0f64);
    for n_parties in [1usize, 2, 3, 8, 16, 256] {
        let mut exact = 0;
        for trial in 0..20u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(n_parties as u64 * 1000 + trial);
            let a = sample_uniform(bfv.params(), &mut rng);
            let keys: Vec<_> = (0..n_parties).map(|_| bfv.keygen(&a, &mut rng)).collect::<Result<_, _>>()?;
            let cpk = mkbfv::combine_public_keys(&keys.iter().map(|k| k.1.clone()).collect::<Vec<_>>())?;
            let reenc = mkbfv::gen_reenc_keypair(&bfv, &mut rng)?;
            let mut oracle: Vec<Vec<u128>> = Vec::new();
            let mut agg: Vec<Ciphertext> = Vec::new();
            for _ in 0..n_parties {
                let seeds: Vec<_> = (0..tau).map(|_| sample_seed(&params, &mut rng)).collect();
                let rows = codec::pack_seeds(&seeds, n)?;
                if oracle.is_empty() {
                    oracle = vec![vec![0u128; n]; rows.len()];
                }
                for (acc, row) in oracle.iter_mut().zip(&rows) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v as u128;
                    }
                }
                for (k, row) in rows.iter().enumerate() {
                    let ct = bfv.encrypt(&cpk, &bfv.encode(row)?, &mut rng)?;
                    if agg.len() <= k {
                        agg.push(ct);
                    } else {
                        agg[k].add_assign(&ct)?;
                    }
                }
            }
            let parties: Vec<u32> = (0..n_parties as u32).collect();
            let mut all = true;
            for (ct, expected) in agg.iter().zip(&oracle) {
                let shares = keys
                    .iter()
                    .enumerate()
                    .map(|(i, (sk, _))| mkbfv::pks_share(&bfv, i as u32, sk, ct, &reenc.pk_r, &mut rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let merged = mkbfv::pks_merge(ct, &shares, &parties)?;
                let got = decode(&bfv.decrypt(&reenc.sk_r, &merged)?, n)?;
                all &= got.iter().zip(expected).all(|(&g, &e)| g as u128 == e & t_mask);
            }
            exact += all as usize;
            if n_parties >= 2 {
                let got = decode(&bfv.decrypt(&keys[0].0, &agg[0])?, n)?;
                let wrong = got.iter().zip(&oracle[0]).filter(|(&g, &e)| g as u128 != e & t_mask).count();
                single_min = single_min.min(wrong as f64 / n as f64);
                single_trials += 1;
            }
        }
        ok &= exact == 20;
        notes.push(format!("N={n_parties}: {exact}/20 exact"));
    }
    ok &= single_min >= 0.99;
    notes.push(format!("single-key decryption wrong in >= {:.2}% of coefficients ({single_trials} trials)", 100.0 * single_min));
    Ok((ok, notes.join("; ")))
}

fn schoolbook(a: &[u128], b: &[u128], q: &BigUint) -> Vec<BigUint> {
    let n = a.len();
    let mut out = vec![BigUint::from(0u8); n];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let prod = BigUint::from(x) * BigUint::from(y) % q;
            let k = (i + j) % n;
            out[k] = if i + j < n { (&out[k] + prod) % q } else { (&out[k] + q - prod) % q };
        }
    }
    out
}

fn c4_bfv_oracles() -> Outcome {
    let bfv = Bfv::default_params();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let n = bfv.params().degree();
    let a = sample_uniform(bfv.params(), &mut rng);
    let (sk, pk) = bfv.keygen(&a, &mut rng)?;
    let mut roundtrip = 0;
    let mut sum = vec![BigUint::from(0u8); n];
    let t = BigUint::from(bfv.params().plaintext_modulus());
    let mut acc: Option<Ciphertext> = None;
    for _ in 0..256 {
        let values: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let ct = bfv.encrypt(&pk, &bfv.encode(&values)?, &mut rng)?;
        roundtrip += (decode(&bfv.decrypt(&sk, &ct)?, n)? == values) as usize;
        for (s, &v) in sum.iter_mut().zip(&values) {
            *s = (&*s + v) % &t;
        }
        match acc.as_mut() {
            None => acc = Some(ct),
            Some(c) => c.add_assign(&ct)?,
        }
    }
    let got = decode(&bfv.decrypt(&sk, &acc.unwrap())?, n)?;
    let fold_ok = got.iter().zip(&sum).all(|(&g, s)| BigUint::from(g) == *s);

    let small = RingParams::new(8, &[DEFAULT_PRIME_0, DEFAULT_PRIME_1], 1 << 64)?;
    let q = BigUint::from(DEFAULT_PRIME_0) * BigUint::from(DEFAULT_PRIME_1);
    let mut matches = 0;
    for _ in 0..1000 {
        let x = sample_uniform(&small, &mut rng);
        let y = sample_uniform(&small, &mut rng);
        let want = schoolbook(&x.crt_lift(), &y.crt_lift(), &q);
        let got: Vec<BigUint> = x.mul(&y)?.crt_lift().into_iter().map(BigUint::from).collect();
        matches += (got == want) as usize;
    }
    let ok = roundtrip == 256 && fold_ok && matches == 1000;
    Ok((ok, format!("roundtrip {roundtrip}/256 exact; 256-fold sum exact: {fold_ok}; n=8 products {matches}/1000")))
}

fn c5_rounds() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (epochs, tau) in [(1usize, 100usize), (100, 100), (250, 100), (7, 3)] {
        let cfg = SessionConfig { n_clients: 2, model_size: 16, tau, max_epochs: epochs, ..Default::default() };
        let out = run_session(cfg, &mut UniformUpdates::new(5, -1.0, 1.0), &SessionOptions::default())?;
        let want = (epochs + 3 * epochs.div_ceil(tau)) as u32;
        let got = out.report.rounds.total;
        ok &= got == want && out.transcript.rounds() == want;
        notes.push(format!("(T={epochs},tau={tau}): {got} rounds, want {want}"));
    }
    Ok((ok, notes.join("; ")))
}

fn c6_traffic() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (log_p, target) in [(24u32, 1.50f64), (20, 1.25)] {
        let cfg = SessionConfig {
            n_clients: 10,
            model_size: 100_000,
            tau: 100,
            max_epochs: 1,
            log_p: Some(log_p),
            ..Default::default()
        };
        let n = RingParams::default_params().degree();
        let cts = cfg.ciphertexts_per_run()?;
        let out = run_session(cfg, &mut UniformUpdates::new(6, -1.0, 1.0), &SessionOptions::default())?;
        let tr = &out.report.traffic;
        let coeff_bytes = 8 * 2;
        let payload = 2 * n * cts * coeff_bytes;
        let r2 = tr.msa_round2_upload_bytes as f64 / payload as f64;
        let r2_ok = within(r2, 1.0, 0.01);
        let inf = &out.report.inflation;
        let inf_ok = within(inf.vs_quant16, target, 0.05);
        if log_p == 24 {
            let want = 100_000 * (log_p as u64).div_ceil(8) + 16;
            let hma_ok = tr.hma_upload_bytes == want;
            ok &= hma_ok;
            notes.push(format!("p=2^24 HMA upload {} B, formula {want} B", tr.hma_upload_bytes));
        } else {
            notes.push(format!("p=2^20 HMA upload {} B (bit-packed)", tr.hma_upload_bytes));
        }
        ok &= r2_ok && inf_ok;
        notes.push(format!(
            "p=2^{log_p} MSA round-2 upload {} B vs {payload} B payload (ratio {r2:.5}); inflation vs 16-bit {:.4} (HMA {:.4} + MSA {:.4}), target {target:.2}+-0.05",
            tr.msa_round2_upload_bytes, inf.vs_quant16, inf.hma_only_vs_quant16, inf.msa_amortized_vs_quant16
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn c7_model_quality() -> Outcome {
    let session = SessionConfig { n_clients: 10, tau: 10, max_epochs: 10, ..Default::default() };
    let trainer = TrainerConfig::default();
    let plain = toy_fedavg(&session, &trainer, FedAvgMode::Plain, 7)?.final_accuracy();
    let masked = toy_fedavg(&session, &trainer, FedAvgMode::Dhsa, 7)?.final_accuracy();
    let ok = plain >= 0.95 && masked >= 0.95 && (plain - masked).abs() <= 0.01;
    Ok((ok, format!("plain {:.2}%, masked {:.2}%", 100.0 * plain, 100.0 * masked)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c8_performance_shape() -> Outcome {
    let a = ShprgParams::preset(Setting::A, [8; 32]);
    let d = ShprgParams::preset(Setting::D, [8; 32]);
    // interleaved repetitions, median of per-repetition ratios
    let (mut a5s, mut a6s, mut linear, mut d_ratio) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rep in 0..5 {
        let a5 = time_mask_expand(&a, 100_000, 1, rep)?;
        let a6 = time_mask_expand(&a, 1_000_000, 1, rep)?;
        let d6 = time_mask_expand(&d, 1_000_000, 1, rep)?;
        linear.push(a6 / a5);
        d_ratio.push(d6 / a6);
        a5s.push(a5);
        a6s.push(a6);
    }
    let (a5, a6, linear, d_ratio) = (median(a5s), median(a6s), median(linear), median(d_ratio));
    let msa = time_msa(&a, 10, 100, 3, 1)?;
    let per_epoch = msa.client_ms() / 100.0;
    let share = per_epoch / a6;
    let ok = (8.0..=12.0).contains(&linear) && (1.6..=2.4).contains(&d_ratio) && share < 0.05;
    Ok((
        ok,
        format!(
            "A: {a5:.1} ms at 1e5, {a6:.1} ms at 1e6 (median ratio {linear:.2}); D/A at 1e6 {d_ratio:.2}; MSA client {:.1} ms/run = {per_epoch:.3} ms/epoch, {:.2}% of one expansion",
            msa.client_ms(),
            100.0 * share
        ),
    ))
}

fn c9_collusion() -> Outcome {
    let n = 5;
    let cfg = SessionConfig { n_clients: n, model_size: 10_000, tau: 2, max_epochs: 2, ..Default::default() };
    let ctx = SessionContext::new(cfg)?;
    let opts = SessionOptions {
        master_seed: 9,
        capture: CaptureMode::Full,
        record_views: (0..n as u32).collect(),
        ..Default::default()
    };
    let out = run_session_in(ctx.clone(), &mut UniformUpdates::new(9, -1.0, 1.0), &opts)?;
    let colluders = "server,0,1,2".parse()?;
    let report = audit_colluding_view(&ctx, &out.transcript, &out.views, &colluders)?;
    let q = 1u128 << ctx.shprg_params().log_q;
    let honest = &report.honest;
    let (mut exact, mut within_rounding, mut total, mut seeds_exact) = (0usize, 0usize, 0usize, true);
    for r in &report.reconstructions {
        let mut truth = vec![0i64; ctx.config.model_size];
        let mut seed_sum = vec![0u128; ctx.shprg_params().mu];
        for v in out.views.iter().filter(|v| honest.contains(&v.id)) {
            let e = &v.epochs[&r.epoch];
            for (t, &x) in truth.iter_mut().zip(&e.quantized.values) {
                *t += x as i64;
            }
            for (s, &k) in seed_sum.iter_mut().zip(e.seed.entries()) {
                *s = (*s + k) % q;
            }
        }
        seeds_exact &= r.honest_seed_sum == seed_sum;
        for (got, want) in r.honest_update_sum.iter().zip(&truth) {
            exact += (got == want) as usize;
            within_rounding += (-1..=0).contains(&(got - want)) as usize;
            total += 1;
        }
    }
    let uploads: Vec<_> = report.uniformity.iter().filter(|u| u.kind == MessageKind::MaskedUpload).collect();
    let uniform_ok = !uploads.is_empty() && report.uniformity_passed();
    let worst_p = uploads.iter().map(|u| u.p_value).fold(1.0, f64::min);
    let ok = honest == &vec![3, 4]
        && report.reconstructions.len() == 2
        && seeds_exact
        && within_rounding == total
        && report.structural.passed
        && uniform_ok;
    Ok((
        ok,
        format!(
            "honest {honest:?}; honest seed sum exact: {seeds_exact}; honest update sum {exact}/{total} exact, {within_rounding}/{total} within SHPRG rounding [-1,0]; structural {}; {} upload chi-square tests, min p {worst_p:.4}",
            report.structural.passed,
            uploads.len()
        ),
    ))
}

fn c10_determinism() -> Outcome {
    let run = || {
        let cfg = SessionConfig { n_clients: 4, model_size: 500, tau: 2, max_epochs: 3, ..Default::default() };
        let opts = SessionOptions { master_seed: 10, capture: CaptureMode::Full, ..Default::default() };
        run_session(cfg, &mut UniformUpdates::new(10, -1.0, 1.0), &opts)
    };
    let (a, b) = (run()?, run()?);
    let mut la = Vec::new();
    let mut lb = Vec::new();
    a.transcript.write_binary(&mut la).map_err(|e| dhsa::Error::InvalidParams(e.to_string()))?;
    b.transcript.write_binary(&mut lb).map_err(|e| dhsa::Error::InvalidParams(e.to_string()))?;
    let same_log = la == lb;
    let same_report = a.report.deterministic_json() == b.report.deterministic_json();
    Ok((
        same_log && same_report,
        format!("transcript {} B identical: {same_log}; report identical: {same_report}", la.len()),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "aggregate error bound", c1_error_bound),
        (2, "SHPRG almost-homomorphism", c2_shprg_homomorphism),
        (3, "multi-key pipeline vs integer oracle", c3_mk_pipeline),
        (4, "BFV primitive oracles", c4_bfv_oracles),
        (5, "round count", c5_rounds),
        (6, "traffic formulas and inflation", c6_traffic),
        (7, "model quality", c7_model_quality),
        (8, "performance shape", c8_performance_shape),
        (9, "colluder audit", c9_collusion),
        (10, "determinism", c10_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let (passed, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_GAPS.contains(&id);
        let tag = match (passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {tag}: {name} [{secs:.1}s] {detail}");
        if !passed && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
