mod common;

use std::path::Path;

use common::*;
use mctm::anomaly::{least_likely, score_mc, score_plugin, PredictiveState, ScoreOptions, ScoringModel};
use mctm::em::{em_fit, m_step, EmConfig};
use mctm::evaluation::{accuracy, auc_pr, best_accuracy, pr_curve, LabelledScores};
use mctm::forward_backward::e_step;
use mctm::generative::inject_uniform_anomalies;
use mctm::gibbs::GibbsState;
use mctm::ingest::{quantise_direction, Direction, FrameLayout};
use mctm::io::{
    format_corpus, format_scores, parse_corpus_words, parse_scores, Algorithm, LocalisedToken, ModelFile,
    ScoreRecord,
};
use mctm::model::validate_params;
use mctm::special::{digamma, normalise_log_weights};
use mctm::vb::{tilde_params, vb_m_step};
use mctm::{make_prior, Corpus, ModelSpec, PriorKind};
use proptest::prelude::*;
use rand::Rng;

fn instance(seed: u64, max_docs: usize, max_len: usize) -> (ModelSpec, mctm::ModelParams, Corpus) {
    let mut r = rng(seed);
    let spec = ModelSpec::new(r.random_range(2..=8), r.random_range(1..=4), r.random_range(1..=4)).unwrap();
    let params = random_params(&mut r, &spec, 0.0);
    let corpus = random_corpus(&mut r, spec, max_docs, max_len);
    (spec, params, corpus)
}

fn prior_kind(i: u8) -> PriorKind {
    [PriorKind::Type1, PriorKind::TypeH, PriorKind::TypeHPlus1][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_counts_conserve_totals(seed in any::<u64>()) {
        let (_, params, corpus) = instance(seed, 12, 10);
        let (c, ll) = e_step(&params, &corpus).unwrap();
        prop_assert!(ll <= 1e-12);
        let tokens = corpus.num_tokens() as f64;
        prop_assert!((c.n_xy.sum() - tokens).abs() < 1e-9 * tokens.max(1.0));
        prop_assert!((c.n_yz.sum() - tokens).abs() < 1e-9 * tokens.max(1.0));
        prop_assert!((c.n_zz.sum() - (corpus.num_docs() - 1) as f64).abs() < 1e-9);
        prop_assert!((c.n_z1.sum() - 1.0).abs() < 1e-12);
        prop_assert!(c.n_xy.iter().chain(c.n_zz.iter()).all(|v| *v >= 0.0));
    }

    #[test]
    fn learner_outputs_are_stochastic(seed in any::<u64>(), kind in 0u8..3) {
        let (spec, params, corpus) = instance(seed, 12, 10);
        let hyper = make_prior(prior_kind(kind), &spec);
        let (c, _) = e_step(&params, &corpus).unwrap();
        prop_assert!(validate_params(&m_step(&c, &hyper), &spec).is_valid());
        let post = vb_m_step(&c, &hyper);
        prop_assert!((post.beta_t.sum() - hyper.beta.iter().sum::<f64>() * spec.num_topics as f64
            - corpus.num_tokens() as f64).abs() < 1e-6);
        prop_assert!(validate_params(&mctm::vb::point_estimates(&post), &spec).is_valid());
        let fit = em_fit(&corpus, &hyper, &spec, seed, &EmConfig { max_iters: 5, tol: None }).unwrap();
        prop_assert!(validate_params(&fit.params, &spec).is_valid());
    }

    #[test]
    fn tilde_columns_are_substochastic(seed in any::<u64>()) {
        let (spec, params, corpus) = instance(seed, 8, 6);
        let (c, _) = e_step(&params, &corpus).unwrap();
        let tilde = tilde_params(&vb_m_step(&c, &make_prior(PriorKind::TypeH, &spec)));
        for col in tilde.as_params().phi.columns() {
            prop_assert!(col.sum() < 1.0);
            prop_assert!(col.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn gibbs_tallies_match_assignments(seed in any::<u64>(), sweeps in 1usize..6) {
        let (spec, _, corpus) = instance(seed, 10, 8);
        let hyper = make_prior(PriorKind::TypeH, &spec);
        let mut state = GibbsState::init(&corpus, &spec, seed).unwrap();
        for _ in 0..sweeps {
            state.sweep(&corpus, &hyper);
            prop_assert!(state.audit(&corpus).is_ok());
        }
        let c = state.counts();
        prop_assert!(c.is_integral());
        prop_assert_eq!(c.n_xy.sum() as usize, corpus.num_tokens());
        prop_assert_eq!(c.n_z1.sum(), 1.0);
    }

    #[test]
    fn scoring_keeps_beliefs_normalised(seed in any::<u64>()) {
        let (_, params, corpus) = instance(seed, 10, 8);
        let model = ScoringModel::new(params.clone()).unwrap();
        let opts = ScoreOptions { min_words: 1, word_marginals: true };
        let mut state = PredictiveState::prior(&params);
        for doc in corpus.docs() {
            let (plug, next) = score_plugin(&state, &doc.words, &model, &opts).unwrap();
            let (mc, _) = score_mc(std::slice::from_ref(&state), &doc.words, std::slice::from_ref(&model), &opts).unwrap();
            prop_assert!(plug.log_lik <= 1e-12);
            prop_assert!(plug.word_log_liks.as_ref().unwrap().iter().all(|w| *w <= 1e-12));
            prop_assert!((mc.log_lik - plug.log_lik).abs() <= 1e-12 * plug.log_lik.abs().max(1.0));
            prop_assert!((next.behaviour_belief.sum() - 1.0).abs() < 1e-12);
            state = next;
        }
    }

    #[test]
    fn least_likely_takes_the_smallest(values in prop::collection::vec(-50.0f64..0.0, 1..40), n in 1usize..40) {
        let picked = least_likely(&values, n);
        prop_assert_eq!(picked.len(), n.min(values.len()));
        let worst_picked = picked.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        for (i, v) in values.iter().enumerate() {
            if !picked.contains(&i) {
                prop_assert!(*v >= worst_picked);
            }
        }
    }

    #[test]
    fn pr_curve_shape(scores in prop::collection::vec(-5i32..5, 2..80), flips in prop::collection::vec(any::<bool>(), 80)) {
        let mut labels: Vec<bool> = flips[..scores.len()].to_vec();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let data = LabelledScores::new(scores.clone(), labels).unwrap();
        let curve = pr_curve(&data).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].recall <= w[1].recall && w[0].threshold < w[1].threshold));
        prop_assert_eq!(curve.last().unwrap().recall, 1.0);
        let auc = auc_pr(&curve).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let (_, best) = best_accuracy(&data);
        for s in &scores {
            prop_assert!(accuracy(&data, *s) <= best);
        }
    }

    #[test]
    fn log_weights_normalise(w in prop::collection::vec(-800.0f64..800.0, 1..30)) {
        let mut w = w;
        let norm = normalise_log_weights(&mut w);
        prop_assert!(norm.is_finite());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn digamma_recurrence(x in 1e-3f64..1e3) {
        let lhs = digamma(x + 1.0);
        let rhs = digamma(x) + 1.0 / x;
        prop_assert!((lhs - rhs).abs() <= 1e-11 * rhs.abs().max(1.0));
    }

    #[test]
    fn layout_words_round_trip(w in 8u32..400, h in 8u32..400, cell in 1u32..16, pick in any::<u64>()) {
        let layout = FrameLayout::new(w, h, cell).unwrap();
        let word = (pick % layout.vocab_size() as u64) as u32;
        let (x, y, d) = layout.decode(word).unwrap();
        prop_assert_eq!(layout.word_id(x, y, d).unwrap(), word);
        prop_assert!(layout.decode(layout.vocab_size() as u32).is_err());
    }

    #[test]
    fn quantised_directions_follow_the_dominant_axis(dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
        prop_assume!(dx != 0.0 || dy != 0.0);
        let d = quantise_direction(dx, dy).unwrap();
        let (ux, uy) = d.unit();
        prop_assert!(ux * dx + uy * dy >= dx.abs().max(dy.abs()) - 1e-12);
    }

    #[test]
    fn corpus_text_round_trips(seed in any::<u64>()) {
        let (_, _, corpus) = instance(seed, 20, 15);
        let words = parse_corpus_words(&format_corpus(&corpus)).unwrap();
        let back: Vec<Vec<u32>> = corpus.docs().iter().map(|d| d.words.clone()).collect();
        prop_assert_eq!(words, back);
    }

    #[test]
    fn score_records_round_trip(vals in prop::collection::vec((-1e4f64..0.0, 1usize..200), 1..20), inf_at in any::<prop::sample::Index>()) {
        let mut records: Vec<ScoreRecord> = vals
            .iter()
            .enumerate()
            .map(|(i, (ll, n))| ScoreRecord {
                index: i,
                length: *n,
                log_lik: *ll,
                score: ll - (*n as f64).ln(),
                localisation: vec![
                    LocalisedToken { token: i, place: None },
                    LocalisedToken { token: i + 1, place: Some((i, 2, Direction::Left)) },
                ],
            })
            .collect();
        let k = inf_at.index(records.len());
        records[k].score = f64::INFINITY;
        records[k].localisation.clear();
        prop_assert_eq!(parse_scores(&format_scores(&records)).unwrap(), records);
    }

    #[test]
    fn model_files_round_trip_exactly(seed in any::<u64>(), kind in 0u8..3) {
        let (spec, params, corpus) = instance(seed, 6, 6);
        let hyper = make_prior(prior_kind(kind), &spec);
        let (c, _) = e_step(&params, &corpus).unwrap();
        let file = ModelFile {
            prior: Some(prior_kind(kind)),
            hyper: hyper.clone(),
            algorithm: Algorithm::Vb,
            params: params.clone(),
            posterior: Some(vb_m_step(&c, &hyper)),
            samples: Vec::new(),
            train_belief: Some(PredictiveState::after_training(&params, &corpus).unwrap().behaviour_belief),
        };
        let back = ModelFile::from_json(&file.to_json(), Path::new("model.json")).unwrap();
        prop_assert_eq!(back.params, file.params);
        prop_assert_eq!(back.posterior, file.posterior);
        prop_assert_eq!(back.train_belief, file.train_belief);
        prop_assert_eq!(back.hyper, file.hyper);
    }

    #[test]
    fn injected_anomalies_change_the_chosen_tokens(seed in any::<u64>(), rate in 0.0f64..1.0, frac in 0.05f64..1.0) {
        let (_, _, corpus) = instance(seed, 20, 12);
        let out = inject_uniform_anomalies(&corpus, rate, frac, seed).unwrap();
        let flagged = out.labels.iter().filter(|l| **l).count();
        prop_assert_eq!(flagged, (rate * corpus.num_docs() as f64).round() as usize);
        for ((orig, new), (bad, toks)) in corpus.docs().iter().zip(out.corpus.docs()).zip(out.labels.iter().zip(&out.abnormal_tokens)) {
            if *bad {
                prop_assert_eq!(toks.len(), (frac * orig.len() as f64).ceil() as usize);
            } else {
                prop_assert!(toks.is_empty());
            }
            for i in 0..orig.len() {
                prop_assert_eq!(orig.words[i] != new.words[i], toks.contains(&i));
            }
        }
    }
}
