//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use mhat::adapt::{ilma_loss, ilma_loss_and_grad, run_ilma, HeldOut, IlmSnapshot, IlmaConfig};
use mhat::data::{gen_corpus, uniform_domain, Corpus, DomainSpec, Split};
use mhat::decode::{beam_search, exhaustive_search, BeamConfig, FusionConfig, FusionMode};
use mhat::eval::{
    decode_corpus, generate_data, run_experiment, score_records, train_mhat, ErrorTally,
    ExperimentConfig, ExperimentOutputs, Method,
};
use mhat::extlm::{train_lm, ExternalLm, ExternalLmConfig, LmTrainConfig};
use mhat::fixtures::{
    random_features, random_tokens, randomize, tiny_hat_config, tiny_mhat_config,
};
use mhat::lattice::{brute_force_log_prob, forward_log_prob, hat_loss, hat_loss_and_grad};
use mhat::losses::{
    ilm_loss, ilm_loss_and_grad, mhat_loss, mhat_loss_and_grad, perplexity, LossConfig,
};
use mhat::model::{EmbeddingDecoderConfig, HatModel, MhatModel, TokenId, Transducer, Vocabulary};
use mhat::numerics::{
    gradient_check, sample_coordinates, Coordinate, Group, OptimizerKind, ParameterSet, Tensor,
};
use mhat::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String)>;

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn random_mhat(v: usize, seed: u64) -> MhatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MhatModel::new(Vocabulary::new(v).unwrap(), tiny_mhat_config(3), &mut rng).unwrap();
    randomize(m.params_mut(), &mut rng, 1.0);
    m
}

fn random_hat(v: usize, seed: u64) -> HatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = HatModel::new(Vocabulary::new(v).unwrap(), tiny_hat_config(3), &mut rng).unwrap();
    randomize(m.params_mut(), &mut rng, 1.0);
    m
}

fn random_lm(v: usize, seed: u64) -> ExternalLm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ExternalLmConfig {
        decoder: EmbeddingDecoderConfig {
            embed_dim: 4,
            tied_tables: false,
        },
    };
    let mut lm = ExternalLm::new(Vocabulary::new(v).unwrap(), cfg, &mut rng).unwrap();
    randomize(lm.params_mut(), &mut rng, 1.0);
    lm
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<(Tensor, Vec<TokenId>)> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(2..=4);
            let u = rng.random_range(1..=3);
            (random_features(rng, t, 3), random_tokens(rng, u, v))
        })
        .collect()
}

fn borrow(batch: &[(Tensor, Vec<TokenId>)]) -> Vec<(&Tensor, &[TokenId])> {
    batch.iter().map(|(x, y)| (x, &y[..])).collect()
}

/// At least `n` coordinates, all inside `groups`.
fn coords_in(params: &ParameterSet, groups: &[Group], n: usize, seed: u64) -> Vec<Coordinate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for c in sample_coordinates(params, n, &mut rng) {
            if groups.contains(&params.group(c.param)) && out.len() < n {
                out.push(c);
            }
        }
    }
    out
}

fn lattice_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let v = [2, 3, 5][(i % 3) as usize];
        let t = rng.random_range(1..=4);
        let u = rng.random_range(0..=3);
        let x = random_features(&mut rng, t, 3);
        let y = random_tokens(&mut rng, u, v);
        let (f, b) = if i % 2 == 0 {
            let m = random_mhat(v, 1000 + i);
            (
                forward_log_prob(&m, &x, &y)?,
                brute_force_log_prob(&m, &x, &y)?,
            )
        } else {
            let m = random_hat(v, 1000 + i);
            (
                forward_log_prob(&m, &x, &y)?,
                brute_force_log_prob(&m, &x, &y)?,
            )
        };
        worst = worst.max((f - b).abs() / b.abs().max(f64::MIN_POSITIVE));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-10 && secs < 10.0,
        format!("200 instances, max relative error {worst:.2e}, {secs:.2}s"),
    ))
}

fn gradient_certification() -> Check {
    let start = Instant::now();
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let batch = random_batch(&mut rng, 3, 4);
    let pairs = borrow(&batch);
    let texts: Vec<Vec<TokenId>> = batch.iter().map(|(_, y)| y.clone()).collect();
    let mut results = Vec::new();

    let hat = random_hat(4, 11);
    let coords = coords_in(hat.params(), &Group::ALL, 200, 1);
    let e = gradient_check(
        |p| hat_loss_and_grad(&hat.with_params(p.clone())?, &pairs),
        hat.params(),
        h,
        &coords,
    )?;
    results.push(("hat_loss", e));

    let mhat = random_mhat(4, 12);
    let coords = coords_in(mhat.params(), &Group::ALL, 200, 2);
    let loss = LossConfig { alpha: 0.1 };
    let e = gradient_check(
        |p| mhat_loss_and_grad(&mhat.with_params(p.clone())?, &pairs, &loss),
        mhat.params(),
        h,
        &coords,
    )?;
    results.push(("mhat_loss(a=0.1)", e));

    let coords = coords_in(mhat.params(), &[Group::Ilm], 200, 3);
    let e = gradient_check(
        |p| ilm_loss_and_grad(&mhat.with_params(p.clone())?, &texts),
        mhat.params(),
        h,
        &coords,
    )?;
    results.push(("ilm_loss", e));

    let teacher = IlmSnapshot::capture(&random_mhat(4, 13));
    for rho in [0.0, 0.5, 1.0] {
        let e = gradient_check(
            |p| ilma_loss_and_grad(&mhat.with_params(p.clone())?, &teacher, &texts, rho),
            mhat.params(),
            h,
            &coords,
        )?;
        results.push((
            if rho == 0.0 {
                "ilma(r=0)"
            } else if rho == 0.5 {
                "ilma(r=0.5)"
            } else {
                "ilma(r=1)"
            },
            e,
        ));
    }
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail: Vec<String> = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect();
    Ok((
        worst <= 1e-4 && secs < 60.0,
        format!("{}; 200 coordinates each, {secs:.1}s", detail.join(", ")),
    ))
}

/// Blank posteriors and AM log-probs of `a` and `b` on every frame and
/// reference prefix of `probe`; returns the number of values compared, or
/// `None` on the first mismatch.
fn compare_heads(
    a: &MhatModel,
    b: &MhatModel,
    probe: &[(&Tensor, &[TokenId])],
) -> Result<Option<usize>> {
    let mut n = 0;
    for (x, y) in probe {
        let (fa, fb) = (a.encode(x)?, b.encode(x)?);
        for t in 0..fa.rows() {
            let (am_a, am_b) = (a.am_log_probs(fa.row(t))?, b.am_log_probs(fb.row(t))?);
            if am_a
                .iter()
                .zip(&am_b)
                .any(|(p, q)| p.to_bits() != q.to_bits())
            {
                return Ok(None);
            }
            n += am_a.len();
            for u in 0..=y.len() {
                let ba = a.blank_posterior(fa.row(t), &a.decode_blank(&y[..u])?)?;
                let bb = b.blank_posterior(fb.row(t), &b.decode_blank(&y[..u])?)?;
                if ba.to_bits() != bb.to_bits() {
                    return Ok(None);
                }
                n += 1;
            }
        }
    }
    Ok(Some(n))
}

fn frozen_groups_equal(a: &MhatModel, b: &MhatModel) -> bool {
    [Group::Encoder, Group::BlankBranch]
        .iter()
        .all(|&g| a.params().checksum(g) == b.params().checksum(g))
}

fn structural_freeze(exp: &ExperimentOutputs) -> Check {
    let mut checked = 0;
    let mut ok = true;

    let probe: Vec<(&Tensor, &[TokenId])> =
        exp.data.target_test.pairs()?.into_iter().take(25).collect();
    match compare_heads(&exp.mhat, &exp.adapted, &probe)? {
        Some(n) => checked += n,
        None => ok = false,
    }
    ok &= frozen_groups_equal(&exp.mhat, &exp.adapted);
    ok &= exp.mhat.params().checksum(Group::Ilm) != exp.adapted.params().checksum(Group::Ilm);

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let base = random_mhat(5, 31);
    let batch = random_batch(&mut rng, 6, 5);
    let texts: Vec<Vec<TokenId>> = (0..40).map(|_| random_tokens(&mut rng, 4, 5)).collect();
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let cfg = IlmaConfig {
            steps: 30,
            lr: 0.05,
            batch_size: 8,
            optimizer,
            ..IlmaConfig::default()
        };
        let (adapted, _) = run_ilma(&base, &texts, &cfg, &HeldOut::default())?;
        match compare_heads(&base, &adapted, &borrow(&batch))? {
            Some(n) => checked += n,
            None => ok = false,
        }
        ok &= frozen_groups_equal(&base, &adapted);
    }
    Ok((
        ok,
        format!("{checked} head outputs bit-identical across 3 ILMA runs; encoder and blank_branch checksums unchanged"),
    ))
}

fn degenerate_equivalences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();

    let m = random_mhat(4, 41);
    let batch = random_batch(&mut rng, 5, 4);
    let pairs = borrow(&batch);
    let texts: Vec<Vec<TokenId>> = batch.iter().map(|(_, y)| y.clone()).collect();
    if mhat_loss(&m, &pairs, &LossConfig { alpha: 0.0 })?.to_bits()
        != hat_loss(&m, &pairs)?.to_bits()
    {
        failures.push("mhat_loss(a=0) != hat_loss");
    }
    let teacher = IlmSnapshot::capture(&random_mhat(4, 42));
    if ilma_loss(&m, &teacher, &texts, 0.0)?.to_bits() != ilm_loss(&m, &texts)?.to_bits() {
        failures.push("ilma_loss(r=0) != ilm_loss");
    }

    let lm = random_lm(4, 43);
    let beam = BeamConfig::with_beam(4);
    for _ in 0..10 {
        let x = random_features(&mut rng, 5, 3);
        let none = beam_search(&m, &x, &beam, &FusionConfig::none())?;
        for fused in [
            FusionConfig::shallow(&lm, 0.0),
            FusionConfig::ilme_subtract(&lm, 0.0, 0.0),
        ] {
            let got = beam_search(&m, &x, &beam, &fused)?;
            let same = got.len() == none.len()
                && got.iter().zip(&none).all(|(a, b)| {
                    a.tokens == b.tokens && a.scores.total.to_bits() == b.scores.total.to_bits()
                });
            if !same {
                failures.push("zero-weight fusion differs from no fusion");
            }
        }
    }

    let self_teacher = IlmSnapshot::capture(&m);
    let (_, g) = ilma_loss_and_grad(&m, &self_teacher, &texts, 1.0)?;
    let norm = g.norm(None);
    if norm > 1e-6 {
        failures.push("r=1 gradient at the snapshot is not zero");
    }
    failures.dedup();
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("all bit-exact; r=1 gradient norm {norm:.1e}")
        } else {
            failures.join("; ")
        },
    ))
}

fn beam_vs_exhaustive() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = BeamConfig {
        beam: 256,
        max_symbols_per_frame: 10,
        max_output_len: Some(4),
    };
    let mut mismatches = 0;
    let mut compared = 0;
    for i in 0..100u64 {
        let m = random_mhat(3, 5000 + i);
        let lm = random_lm(3, 6000 + i);
        let t = rng.random_range(1..=3);
        let x = random_features(&mut rng, t, 3);
        for fusion in [
            FusionConfig::none(),
            FusionConfig::shallow(&lm, 0.5),
            FusionConfig::ilme_subtract(&lm, 0.5, 0.3),
        ] {
            let beam = beam_search(&m, &x, &cfg, &fusion)?;
            let (best, _) = exhaustive_search(&m, &x, 4, &fusion)?;
            compared += 1;
            if beam.first().map(|h| &h.tokens) != Some(&best) {
                mismatches += 1;
            }
        }
    }
    Ok((
        mismatches == 0,
        format!("{compared} searches (100 instances x 3 modes), {mismatches} mismatches"),
    ))
}

fn texts(c: &Corpus) -> Vec<Vec<TokenId>> {
    c.items.iter().map(|u| u.tokens.clone()).collect()
}

fn decode_tally<M: Transducer + Sync>(
    model: &M,
    corpus: &Corpus,
    beam: usize,
) -> Result<ErrorTally> {
    let records = decode_corpus(
        model,
        corpus,
        &BeamConfig::with_beam(beam),
        &FusionConfig::none(),
        jobs(),
    )?;
    score_records(corpus, &records)
}

fn rel_change(before: f64, after: f64) -> f64 {
    (after - before) / before
}

fn alpha_trend(cfg: &ExperimentConfig, exp: &ExperimentOutputs) -> Check {
    let start = Instant::now();
    let vocab = exp.data.domains.source.vocab().clone();
    let pairs = exp.data.source_train.pairs()?;
    let mut train = cfg.train;
    train.seed = cfg.stage_seed(4);
    train.jobs = jobs();
    let (mut plain, _) = train_mhat(&vocab, cfg.mhat, &pairs, 0.0, &train)?;
    plain.params_mut().round_to_f32();

    let held = texts(&exp.data.source_test);
    let ppl_joint = perplexity(&exp.mhat, &held)?;
    let ppl_plain = perplexity(&plain, &held)?;
    let wer_joint = exp.report.source_wer(Method::Mhat);
    let wer_plain = decode_tally(&plain, &exp.data.source_test, cfg.beam)?.wer_percent();
    let ppl_drop = -rel_change(ppl_plain, ppl_joint);
    let wer_diff = rel_change(wer_plain, wer_joint).abs();
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ppl_drop >= 0.25 && wer_diff <= 0.10,
        format!(
            "source ILM ppl a=0 {ppl_plain:.3} -> a=0.1 {ppl_joint:.3} ({:.1}% lower); source WER {wer_plain:.2}% vs {wer_joint:.2}% ({:.1}% relative); {secs:.0}s",
            100.0 * ppl_drop,
            100.0 * wer_diff
        ),
    ))
}

struct IlmaGain {
    target_wer: (f64, f64),
    source_wer: (f64, f64),
    target_ppl: (f64, f64),
}

impl IlmaGain {
    fn passes(&self) -> bool {
        rel_change(self.target_wer.0, self.target_wer.1) <= -0.10
            && rel_change(self.target_ppl.0, self.target_ppl.1) <= -0.20
            && rel_change(self.source_wer.0, self.source_wer.1) <= 0.05
    }

    fn describe(&self) -> String {
        format!(
            "target WER {:.2}% -> {:.2}% ({:+.1}%), target ILM ppl {:.2} -> {:.2} ({:+.1}%), source WER {:.2}% -> {:.2}% ({:+.1}%)",
            self.target_wer.0,
            self.target_wer.1,
            100.0 * rel_change(self.target_wer.0, self.target_wer.1),
            self.target_ppl.0,
            self.target_ppl.1,
            100.0 * rel_change(self.target_ppl.0, self.target_ppl.1),
            self.source_wer.0,
            self.source_wer.1,
            100.0 * rel_change(self.source_wer.0, self.source_wer.1),
        )
    }
}

fn ilma_gain_for_seed(base: &ExperimentConfig, seed: u64) -> Result<IlmaGain> {
    let cfg = ExperimentConfig {
        seed,
        ..base.clone()
    };
    let data = generate_data(&cfg)?;
    let vocab = data.domains.source.vocab().clone();
    let pairs = data.source_train.pairs()?;
    let mut train = cfg.train;
    train.seed = cfg.stage_seed(4);
    train.jobs = jobs();
    let (mut mhat, _) = train_mhat(&vocab, cfg.mhat, &pairs, cfg.alpha, &train)?;
    mhat.params_mut().round_to_f32();
    let ilma = IlmaConfig {
        seed: cfg.stage_seed(6),
        ..cfg.ilma
    };
    let (mut adapted, _) = run_ilma(&mhat, &texts(&data.target_text), &ilma, &HeldOut::default())?;
    adapted.params_mut().round_to_f32();
    let dev = texts(&data.target_dev);
    Ok(IlmaGain {
        target_wer: (
            decode_tally(&mhat, &data.target_test, cfg.beam)?.wer_percent(),
            decode_tally(&adapted, &data.target_test, cfg.beam)?.wer_percent(),
        ),
        source_wer: (
            decode_tally(&mhat, &data.source_test, cfg.beam)?.wer_percent(),
            decode_tally(&adapted, &data.source_test, cfg.beam)?.wer_percent(),
        ),
        target_ppl: (perplexity(&mhat, &dev)?, perplexity(&adapted, &dev)?),
    })
}

fn ilma_gains(cfg: &ExperimentConfig, exp: &ExperimentOutputs) -> Check {
    let r = &exp.report;
    let seeded = IlmaGain {
        target_wer: (r.target_wer(Method::Mhat), r.target_wer(Method::MhatIlma)),
        source_wer: (r.source_wer(Method::Mhat), r.source_wer(Method::MhatIlma)),
        target_ppl: (r.perplexity.mhat_target, r.perplexity.ilma_target),
    };
    println!("  report seed {}: {}", cfg.seed, seeded.describe());
    for seed in [cfg.seed + 1, cfg.seed + 2] {
        let g = ilma_gain_for_seed(cfg, seed)?;
        println!(
            "  report seed {seed}: {} [{}]",
            g.describe(),
            if g.passes() {
                "meets thresholds"
            } else {
                "below thresholds"
            }
        );
    }
    Ok((
        seeded.passes(),
        format!("seed {}: {}", cfg.seed, seeded.describe()),
    ))
}

fn fusion_complementarity(exp: &ExperimentOutputs) -> Check {
    let r = &exp.report;
    let fused = r.row(Method::MhatIlmaLm);
    let ilme = r.row(Method::MhatLm);
    let modes_ok =
        fused.fusion.mode == FusionMode::Shallow && ilme.fusion.mode == FusionMode::IlmeSubtract;
    let (a, b, c) = (
        r.target_wer(Method::MhatIlmaLm),
        r.target_wer(Method::MhatIlma),
        r.target_wer(Method::MhatLm),
    );
    Ok((
        modes_ok && a <= b && a <= c,
        format!(
            "MHAT+ILMA+LM (shallow, lE={}) {a:.2}% vs MHAT+ILMA {b:.2}% and MHAT+LM (ilme, lE={} lI={}) {c:.2}%",
            fused.fusion.lambda_e, ilme.fusion.lambda_e, ilme.fusion.lambda_i
        ),
    ))
}

fn method_ordering(exp: &ExperimentOutputs) -> Check {
    let r = &exp.report;
    let w = |m| r.target_wer(m);
    for m in Method::ALL {
        let row = r.row(m);
        println!(
            "  report {:<18} source {:6.2}%  target {:6.2}%  ({} lE={} lI={})",
            m.label(),
            row.source.wer_percent(),
            row.target.wer_percent(),
            row.fusion.mode.as_str(),
            row.fusion.lambda_e,
            row.fusion.lambda_i
        );
    }
    let ok = w(Method::MhatIlmaLm) <= w(Method::MhatIlma)
        && w(Method::MhatIlma) <= w(Method::Mhat)
        && w(Method::MhatIlmaLm) <= w(Method::MhatLm);
    Ok((
        ok,
        format!(
            "target WER MHAT+ILMA+LM {:.2}% <= MHAT+ILMA {:.2}% <= MHAT {:.2}%, MHAT+LM {:.2}%",
            w(Method::MhatIlmaLm),
            w(Method::MhatIlma),
            w(Method::Mhat),
            w(Method::MhatLm)
        ),
    ))
}

/// Perplexity over label tokens only (EOS events excluded).
fn token_perplexity(lm: &ExternalLm, corpus: &[Vec<TokenId>]) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for y in corpus {
        for u in 0..y.len() {
            nll -= lm.lm_log_prob(&y[..u], y[u])?;
            n += 1;
        }
    }
    Ok((nll / n as f64).exp())
}

fn lm_sanity() -> Check {
    let vocab = Vocabulary::with_names(vec!["A".into(), "B".into()])?;
    let chain = vec![
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
    ];
    let protos = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0])?;
    let det = DomainSpec::new(vocab, chain, protos, 1..=3, 0.3)?;
    let uniform = uniform_domain(8, 0.02)?;
    let cfg = LmTrainConfig {
        seed: 7,
        ..LmTrainConfig::default()
    };
    let fit = |spec: &DomainSpec, n: usize| -> Result<(f64, f64)> {
        let train = texts(&gen_corpus(spec, Split::Train, 71, n, true)?);
        let test = texts(&gen_corpus(spec, Split::Test, 71, 500, true)?);
        let (lm, _) = train_lm(spec.vocab(), &train, &cfg)?;
        Ok((token_perplexity(&lm, &test)?, lm.perplexity(&test)?))
    };
    let (det_ppl, det_events) = fit(&det, 1000)?;
    let (uni_ppl, uni_events) = fit(&uniform, 3000)?;
    let uni_err = (uni_ppl - 8.0).abs() / 8.0;
    Ok((
        det_ppl < 1.1 && uni_err <= 0.05,
        format!(
            "deterministic ppl {det_ppl:.4} (with EOS {det_events:.4}); uniform |V|=8 ppl {uni_ppl:.3} ({:.1}% from 8, with EOS {uni_events:.3})",
            100.0 * uni_err
        ),
    ))
}

fn main() {
    let total = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Check| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{n}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    report(1, "lattice oracle equivalence", lattice_oracle());
    report(2, "gradient certification", gradient_certification());
    report(4, "degenerate equivalences", degenerate_equivalences());
    report(5, "beam vs exhaustive search", beam_vs_exhaustive());
    report(10, "external LM sanity", lm_sanity());

    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    match run_experiment(&cfg, None, jobs()) {
        Ok(exp) => {
            println!(
                "  seeded experiment finished in {:.0}s",
                start.elapsed().as_secs_f64()
            );
            report(3, "structural freeze", structural_freeze(&exp));
            report(6, "joint ILM training trend", alpha_trend(&cfg, &exp));
            report(7, "ILMA gains", ilma_gains(&cfg, &exp));
            report(8, "fusion complementarity", fusion_complementarity(&exp));
            report(9, "method-matrix ordering", method_ordering(&exp));
        }
        Err(e) => {
            for (n, name) in [
                (3, "structural freeze"),
                (6, "joint ILM training trend"),
                (7, "ILMA gains"),
                (8, "fusion complementarity"),
                (9, "method-matrix ordering"),
            ] {
                report(
                    n,
                    name,
                    Err(mhat::Error::Evaluation(format!("experiment failed: {e}"))),
                );
            }
        }
    }
    println!(
        "acceptance: {failed} failed, total {:.0}s",
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
