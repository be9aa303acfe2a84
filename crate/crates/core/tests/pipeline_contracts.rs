use convcal::pipeline::Phase;
use convcal::simulator::{dialogue_turns, SimModel, SimProfile};
use convcal::{
    run_dialogue, DialogueResult, History, LogitRecord, PolicyKind, Result, RunOptions,
    SelectionPolicy, Span, TurnInput,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const K: usize = 8;

fn peaked(turn: &TurnInput, at: Span) -> Result<LogitRecord> {
    let hot = |i: usize| {
        let mut v = vec![0.0; K];
        v[i] = 9.0;
        v
    };
    let (s, e) = (hot(at.start), hot(at.end));
    LogitRecord::new(
        &turn.dialogue_id,
        turn.turn_index,
        turn.gold,
        s.clone(),
        e.clone(),
        vec![s; 2],
        vec![e; 2],
    )
}

fn uniform(turn: &TurnInput) -> Result<LogitRecord> {
    let v = vec![0.0; K];
    LogitRecord::new(
        &turn.dialogue_id,
        turn.turn_index,
        turn.gold,
        v.clone(),
        v.clone(),
        vec![v.clone(); 2],
        vec![v; 2],
    )
}

fn turns(golds: &[Span]) -> Vec<TurnInput> {
    golds
        .iter()
        .enumerate()
        .map(|(i, &gold)| TurnInput {
            dialogue_id: "d".into(),
            turn_index: i as u32 + 1,
            question_id: format!("q{}", i + 1),
            gold,
        })
        .collect()
}

fn span(start: usize, end: usize) -> Span {
    Span { start, end }
}

fn simulate(seed: u64, turns: &[TurnInput], policy: &SelectionPolicy) -> DialogueResult {
    let profile = SimProfile::default();
    let mut model = SimModel::new(&profile, policy, turns, seed, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_dialogue(&mut model, turns, policy, &RunOptions::default(), &mut rng).unwrap()
}

#[test]
fn gold_echo_scores_perfectly() {
    let dialogue = turns(&[span(0, 1), span(3, 3), span(5, 7), span(2, 4)]);
    let mut echo = |t: &TurnInput, _: &History| peaked(t, t.gold);
    let policy = SelectionPolicy::of(PolicyKind::Gold);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let result = run_dialogue(
        &mut echo,
        &dialogue,
        &policy,
        &RunOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(result.mean_f1, 1.0);
}

#[test]
fn future_turns_cannot_change_past_decisions() {
    let profile = SimProfile::default();
    for seed in 0..50u64 {
        let original = dialogue_turns(&profile, seed, 0, 0).unwrap();
        for kind in [PolicyKind::AllPred, PolicyKind::AsUncer, PolicyKind::NoPred] {
            let policy = SelectionPolicy::new(kind, 0.3).unwrap();
            let base = simulate(seed, &original, &policy);
            for cut in 1..original.len() {
                let mut shuffled = original.clone();
                let mut golds: Vec<Span> = shuffled[cut..].iter().map(|t| t.gold).collect();
                golds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ cut as u64));
                golds.reverse();
                for (t, g) in shuffled[cut..].iter_mut().zip(golds) {
                    t.gold = g;
                }
                let other = simulate(seed, &shuffled, &policy);
                assert_eq!(
                    base.per_turn[..cut],
                    other.per_turn[..cut],
                    "seed {seed} cut {cut}"
                );
            }
        }
    }
}

#[test]
fn extreme_thresholds_reproduce_fixed_policies() {
    let profile = SimProfile::default();
    for seed in 0..100u64 {
        let dialogue = dialogue_turns(&profile, seed, 0, 0).unwrap();
        let all = simulate(seed, &dialogue, &SelectionPolicy::of(PolicyKind::AllPred));
        let none = simulate(seed, &dialogue, &SelectionPolicy::of(PolicyKind::NoPred));
        for (kind, keep_all, keep_none) in [
            (PolicyKind::AsConf, 0.0, 1.0),
            (PolicyKind::AsUncer, 1.0, 0.0),
            (PolicyKind::AsCombine, 0.0, 1.0),
        ] {
            let policy = SelectionPolicy::new(kind, keep_all).unwrap();
            assert_eq!(
                simulate(seed, &dialogue, &policy),
                all,
                "{kind} seed {seed}"
            );
            let policy = SelectionPolicy::new(kind, keep_none).unwrap();
            assert_eq!(
                simulate(seed, &dialogue, &policy),
                none,
                "{kind} seed {seed}"
            );
        }
    }
}

#[test]
fn dropped_first_answer_leaves_question_only() {
    // Turn 1 is uniform: uncertainty exactly 1, prediction (0, 0) by the
    // lowest-index tie rule, so it is dropped at threshold 0.5.
    let dialogue = turns(&[span(2, 3), span(5, 5)]);
    let mut seen = Vec::new();
    let mut model = |t: &TurnInput, h: &History| {
        seen.push(h.clone());
        if t.turn_index == 1 {
            uniform(t)
        } else {
            peaked(t, t.gold)
        }
    };
    let policy = SelectionPolicy::new(PolicyKind::AsUncer, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let result = run_dialogue(
        &mut model,
        &dialogue,
        &policy,
        &RunOptions::default(),
        &mut rng,
    )
    .unwrap();

    assert!(seen[0].is_empty());
    assert_eq!(seen[1].turns.len(), 1);
    assert_eq!(seen[1].turns[0].question_id, "q1");
    assert_eq!(seen[1].turns[0].answer, None);

    let first = &result.per_turn[0];
    assert_eq!(first.score.pred, span(0, 0));
    assert!((first.score.s_uncer - 1.0).abs() < 1e-12);
    assert!(!first.kept);
    assert_eq!(first.f1, 0.0);
    assert_eq!(result.per_turn[1].f1, 1.0);
    assert_eq!(result.mean_f1, 0.5);
}

#[test]
fn no_pred_and_all_pred_differ_only_in_answers() {
    let dialogue = turns(&[span(0, 0), span(2, 3), span(6, 7)]);
    let guesses = [span(0, 0), span(4, 4), span(6, 7)];
    let run = |kind| {
        let mut seen = Vec::new();
        let mut model = |t: &TurnInput, h: &History| {
            seen.push(h.clone());
            peaked(t, guesses[t.turn_index as usize - 1])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = SelectionPolicy::of(kind);
        run_dialogue(
            &mut model,
            &dialogue,
            &policy,
            &RunOptions::default(),
            &mut rng,
        )
        .unwrap();
        seen
    };
    let none = run(PolicyKind::NoPred);
    let all = run(PolicyKind::AllPred);
    for (a, b) in none.iter().zip(&all) {
        let qa: Vec<_> = a.turns.iter().map(|t| &t.question_id).collect();
        let qb: Vec<_> = b.turns.iter().map(|t| &t.question_id).collect();
        assert_eq!(qa, qb);
        assert!(a.turns.iter().all(|t| t.answer.is_none()));
    }
    let answers: Vec<_> = all[2].turns.iter().map(|t| t.answer).collect();
    assert_eq!(answers, [Some(guesses[0]), Some(guesses[1])]);
}

#[test]
fn training_phase_draws_are_reproducible() {
    let profile = SimProfile::default();
    let dialogue = dialogue_turns(&profile, 3, 0, 0).unwrap();
    let policy = SelectionPolicy::of(PolicyKind::AsUncer);
    let opts = RunOptions {
        phase: Phase::Train {
            step: 0,
            total_steps: 1,
        },
        ..RunOptions::default()
    };
    let run = || {
        let mut model = SimModel::new(&profile, &policy, &dialogue, 3, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        run_dialogue(&mut model, &dialogue, &policy, &opts, &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}
