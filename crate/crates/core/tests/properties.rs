mod common;

use proptest::prelude::*;

use evalact::advantage::{
    calibrate, group_normalize, mean_std, multiplier, PcarParams, StdKind,
};
use evalact::objective::{
    clip_term, kl_term, objective_gradient, objective_value, ContextKey, GroupBatch, ObjectiveConfig,
    RolloutTokens, TokenRecord, ToyPolicy,
};
use evalact::protocol::{
    parse_trajectory, segment_trajectory, validate_format, Action, Observation, Segment, Violation,
};
use evalact::retrieval::{
    feedback_cue, Bm25Params, CorpusIndex, CueLevel, Document, EpisodeState, RetrievalEnv,
};
use evalact::reward::{exact_match, gated_reward, token_f1, GoldAnswer};

use common::{render, Block};

fn block_strategy() -> impl Strategy<Value = Block> {
    let text = "[a-zA-Z0-9 ,.?'\"]{0,20}";
    prop_oneof![
        text.prop_map(Block::Think),
        "[a-z]{1,8}( [a-z]{1,8}){0,3}".prop_map(Block::Search),
        ("[a-z ]{0,20}", 0.0..=10.0f64).prop_map(|(c, z)| Block::Eval(c, z)),
        text.prop_map(Block::Answer),
    ]
}

fn compliant_strategy() -> impl Strategy<Value = Vec<Block>> {
    (
        prop::collection::vec(("[a-z]{1,8}", 0.0..=10.0f64, any::<bool>()), 0..5),
        "[A-Za-z ]{1,16}",
    )
        .prop_map(|(pairs, answer)| {
            let mut b = vec![Block::Think("start".into())];
            for (i, (q, z, think_between)) in pairs.into_iter().enumerate() {
                if i > 0 {
                    b.push(Block::Think("again".into()));
                }
                b.push(Block::Search(q));
                if think_between {
                    b.push(Block::Think("checking".into()));
                }
                b.push(Block::Eval("assessment".into(), z));
            }
            b.push(Block::Think("answer now".into()));
            b.push(Block::Answer(answer));
            b
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_never_panics(raw in "\\PC{0,300}") {
        let t = parse_trajectory(&raw);
        let v = validate_format(&t);
        prop_assert_eq!(v.compliant, v.violations.is_empty());
    }

    #[test]
    fn parse_never_panics_on_tag_soup(blocks in prop::collection::vec(block_strategy(), 0..10)) {
        let t = parse_trajectory(&render(&blocks));
        let _ = validate_format(&t);
        let _ = t.serialize();
    }

    #[test]
    fn compliant_round_trip(blocks in compliant_strategy()) {
        let t = parse_trajectory(&render(&blocks));
        prop_assert!(validate_format(&t).compliant, "{:?}", validate_format(&t));
        let s = t.serialize();
        prop_assert_eq!(parse_trajectory(&s).serialize(), s);
    }

    #[test]
    fn segments_partition_prefix(blocks in compliant_strategy()) {
        let t = parse_trajectory(&render(&blocks));
        let segs = segment_trajectory(&t).unwrap();
        prop_assert_eq!(segs.len(), t.count_evaluates());
        let mut prev = 0;
        for (i, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.index, i + 1);
            prop_assert_eq!(s.start, prev);
            prop_assert!(s.end > s.start && s.end <= t.token_count);
            prev = s.end;
        }
        // The final think and answer sit in the unscored tail.
        prop_assert!(prev < t.token_count);
    }

    #[test]
    fn out_of_range_score_flagged(z in prop_oneof![-100.0..-1e-9f64, 10.0000001..100.0f64]) {
        let blocks = vec![
            Block::Think("t".into()),
            Block::Search("q".into()),
            Block::Eval("c".into(), z),
            Block::Think("t".into()),
            Block::Answer("a".into()),
        ];
        let v = validate_format(&parse_trajectory(&render(&blocks)));
        prop_assert!(v.has(Violation::ScoreOutOfRange));
        prop_assert!(feedback_cue(z).is_err());
    }

    #[test]
    fn phi_partitions_range(z in 0.0..=10.0f64) {
        let cue = feedback_cue(z).unwrap();
        let want = if z <= 3.0 { CueLevel::Low } else if z <= 7.0 { CueLevel::Mid } else { CueLevel::High };
        prop_assert_eq!(cue, want);
        prop_assert_eq!(feedback_cue(z).unwrap(), cue);
    }

    #[test]
    fn f1_bounds_and_symmetry(p in "[a-c ]{0,12}", g in "[a-c ]{0,12}") {
        let gp = GoldAnswer::single(g.clone());
        let f = token_f1(&p, &gp);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, token_f1(&g, &GoldAnswer::single(p.clone())));
        if exact_match(&p, &gp) == 1 {
            prop_assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn gate_dominance(blocks in prop::collection::vec(block_strategy(), 0..8), gold in "[a-z]{1,6}") {
        let t = parse_trajectory(&render(&blocks));
        let r = gated_reward(&t, &GoldAnswer::single(gold));
        prop_assert!(r.reward <= r.f1);
        if r.format_compliant {
            prop_assert_eq!(r.reward, r.f1);
        } else {
            prop_assert_eq!(r.reward, 0.0);
        }
        prop_assert!(r.em == 0 || r.f1 == 1.0);
    }

    #[test]
    fn group_centering(rs in prop::collection::vec(0.0..=1.0f64, 2..16)) {
        let a = group_normalize(&rs, 1e-8).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-12 * rs.len() as f64 * 1e4);
        let (_, sigma) = mean_std(&rs, StdKind::Population);
        let (_, out_sd) = mean_std(&a, StdKind::Population);
        if sigma > 0.0 {
            prop_assert!((out_sd - sigma / (sigma + 1e-8)).abs() < 1e-9);
        }
        prop_assert!(out_sd <= 1.0 + 1e-12);
    }

    #[test]
    fn calibration_invariants(
        a in -4.0..4.0f64,
        scores in prop::collection::vec(0.0..=10.0f64, 1..6),
        lb in 0.0..1.0f64,
        span in 0.0..1.5f64,
        tail in 0usize..10,
    ) {
        let params = PcarParams::new(lb, lb + span);
        let mut segs = Vec::new();
        let mut at = 0;
        for (i, z) in scores.iter().enumerate() {
            segs.push(Segment { index: i + 1, start: at, end: at + 3, score: *z });
            at += 3;
        }
        let len = at + tail;
        let c = calibrate(a, &segs, len, &params).unwrap();
        for d in &c.segments {
            prop_assert!(d.multiplier >= params.delta);
            prop_assert_eq!(d.multiplier == params.delta, d.raw_multiplier <= params.delta);
        }
        for t in &c.tokens[at..] {
            prop_assert_eq!(*t, a);
        }
        for t in &c.tokens {
            prop_assert!(a == 0.0 && *t == 0.0 || t.signum() == a.signum());
        }
        let zero = calibrate(0.0, &segs, len, &params).unwrap();
        prop_assert!(zero.tokens.iter().all(|t| *t == 0.0));

        let want = common::pcar_oracle(
            a,
            &segs.iter().map(|s| (s.start, s.end, s.score)).collect::<Vec<_>>(),
            len, params.lambda_base, params.lambda_max, params.delta, params.eps,
        );
        for (x, y) in c.tokens.iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn multiplier_monotone_in_z_tilde(lambda in 0.01..2.0f64, x in -3.0..3.0f64, dx in 0.001..1.0f64) {
        let lo = multiplier(lambda, x, 1e-6);
        let hi = multiplier(lambda, x + dx, 1e-6);
        prop_assert!(hi >= lo);
        if 1.0 + lambda * x > 1e-6 {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn clip_term_bounded(rho in 0.0..3.0f64, adv in -3.0..3.0f64, eps in 0.05..0.5f64) {
        let c = clip_term(rho, adv, eps);
        prop_assert!(c <= rho * adv + 1e-15);
        if (1.0 - eps..=1.0 + eps).contains(&rho) {
            prop_assert_eq!(c, rho * adv);
        }
        if adv > 0.0 && rho >= 1.0 + eps {
            prop_assert_eq!(c, (1.0 + eps) * adv);
        }
    }

    #[test]
    fn kl_nonnegative(a in prop::collection::vec(-3.0..3.0f64, 4), b in prop::collection::vec(-3.0..3.0f64, 4)) {
        let mut p = ToyPolicy::uniform(4);
        let mut q = ToyPolicy::uniform(4);
        p.set_row(ContextKey(1), a.clone()).unwrap();
        q.set_row(ContextKey(1), b).unwrap();
        prop_assert!(kl_term(&p, &q, ContextKey(1)) >= 0.0);
        q.set_row(ContextKey(1), a).unwrap();
        prop_assert!(kl_term(&p, &q, ContextKey(1)).abs() < 1e-12);
    }

    #[test]
    fn objective_invariant_to_token_order(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut policy = ToyPolicy::uniform(4);
        for c in 0..3 {
            policy.set_row(ContextKey(c), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        }
        let tokens: Vec<TokenRecord> = (0..6)
            .map(|i| TokenRecord {
                group_id: 0,
                rollout_id: 0,
                position: i,
                context_key: ContextKey(rng.gen_range(0..3)),
                token_id: rng.gen_range(0..4),
                logprob_old: -1.2,
                advantage: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let mut rev = tokens.clone();
        rev.reverse();
        let mk = |t: Vec<TokenRecord>| vec![GroupBatch { group_id: 0, rollouts: vec![RolloutTokens { rollout_id: 0, tokens: t }] }];
        let reference = ToyPolicy::uniform(4);
        let cfg = ObjectiveConfig::default();
        let a = objective_value(&policy, &reference, &mk(tokens), &cfg).unwrap();
        let b = objective_value(&policy, &reference, &mk(rev), &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn index_is_permutation_invariant(
        texts in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,6}", 1..12),
        query in "[a-e]{1,3}( [a-e]{1,3}){0,2}",
        rot in 0usize..12,
    ) {
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document {
            id: format!("d{i:02}"), title: String::new(), text: t.clone(),
        }).collect();
        let mut shuffled = docs.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        let a = CorpusIndex::build(docs, Bm25Params::default()).unwrap();
        let b = CorpusIndex::build(shuffled, Bm25Params::default()).unwrap();
        let ra: Vec<_> = a.search(&query, 5).into_iter().map(|(d, s)| (d.id.clone(), s)).collect();
        let rb: Vec<_> = b.search(&query, 5).into_iter().map(|(d, s)| (d.id.clone(), s)).collect();
        prop_assert_eq!(&ra, &rb);
        prop_assert!(ra.len() <= 5);
        prop_assert!(ra.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn budget_is_monotone(budget in 0usize..5, searches in 0usize..10) {
        let docs = vec![Document { id: "a".into(), title: "A".into(), text: "alpha".into() }];
        let env = RetrievalEnv::new(CorpusIndex::build(docs, Bm25Params::default()).unwrap(), 3, budget);
        let mut state = EpisodeState::new(budget);
        for _ in 0..searches {
            let before = state.searches_used;
            let (obs, next) = env.step(state, &Action::search("alpha"));
            prop_assert!(next.searches_used >= before && next.searches_used <= budget);
            if before == budget {
                prop_assert_eq!(obs, Observation::Empty { budget_exhausted: true });
            } else if let Observation::Retrieved { docs } = obs {
                prop_assert!(docs.len() <= 3);
            }
            state = next;
        }
    }
}

#[test]
fn kl_gradient_vanishes_at_reference() {
    let mut p = ToyPolicy::uniform(3);
    p.set_row(ContextKey(0), vec![0.3, -0.2, 1.0]).unwrap();
    let tokens = vec![TokenRecord {
        group_id: 0,
        rollout_id: 0,
        position: 0,
        context_key: ContextKey(0),
        token_id: 1,
        logprob_old: p.log_prob(ContextKey(0), 1).unwrap(),
        advantage: 0.0,
    }];
    let groups = vec![GroupBatch {
        group_id: 0,
        rollouts: vec![RolloutTokens { rollout_id: 0, tokens }],
    }];
    let g = objective_gradient(&p, &p, &groups, &ObjectiveConfig::default()).unwrap();
    assert!(g.max_abs() < 1e-15);
}

#[test]
fn ascent_moves_probability_with_advantage_sign() {
    for (adv, up) in [(1.0, true), (-1.0, false)] {
        let p = ToyPolicy::uniform(4);
        let ctx = ContextKey(9);
        let groups = vec![GroupBatch {
            group_id: 0,
            rollouts: vec![RolloutTokens {
                rollout_id: 0,
                tokens: vec![TokenRecord {
                    group_id: 0,
                    rollout_id: 0,
                    position: 0,
                    context_key: ctx,
                    token_id: 2,
                    logprob_old: p.log_prob(ctx, 2).unwrap(),
                    advantage: adv,
                }],
            }],
        }];
        let cfg = ObjectiveConfig { kl_beta: 0.0, ..ObjectiveConfig::default() };
        let g = objective_gradient(&p, &p, &groups, &cfg).unwrap();
        let next = p.ascent_step(&g, 0.1).unwrap();
        let (before, after) = (p.log_prob(ctx, 2).unwrap(), next.log_prob(ctx, 2).unwrap());
        assert_eq!(after > before, up);
    }
}

#[test]
fn identical_policies_give_mean_advantage() {
    let p = ToyPolicy::uniform(5);
    let adv = [0.5, -1.5, 2.0];
    let groups = vec![GroupBatch {
        group_id: 0,
        rollouts: adv
            .iter()
            .enumerate()
            .map(|(i, a)| RolloutTokens {
                rollout_id: i as u64,
                tokens: vec![TokenRecord {
                    group_id: 0,
                    rollout_id: i as u64,
                    position: 0,
                    context_key: ContextKey(i as u64),
                    token_id: 0,
                    logprob_old: p.log_prob(ContextKey(i as u64), 0).unwrap(),
                    advantage: *a,
                }],
            })
            .collect(),
    }];
    let v = objective_value(&p, &p, &groups, &ObjectiveConfig::default()).unwrap();
    assert!((v - adv.iter().sum::<f64>() / 3.0).abs() < 1e-12);
}
