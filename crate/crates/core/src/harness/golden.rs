//! The two-hop film trajectory used as an end-to-end fixture.

use serde::Serialize;

use crate::advantage::{calibrate, PcarParams};
use crate::protocol::{parse_trajectory, segment_trajectory, validate_format, Action, Trajectory, Violation};
use crate::retrieval::{Document, RetrievalConfig, RetrievalEnv};
use crate::reward::{gated_reward, GoldAnswer};

use super::rollout::{run_rollout, RolloutPolicy, ScriptItem, ScriptedPolicy};
use super::HarnessError;

pub const GOLDEN_TEXT: &str = include_str!("../../fixtures/two_hop.txt");
pub const GOLDEN_QUESTION: &str = "In between Remember the Titans and My Favorite Martian which film grossed $36.8 million domestically?";
pub const GOLDEN_ANSWER: &str = "My Favorite Martian";

pub fn golden_trajectory() -> Trajectory {
    parse_trajectory(GOLDEN_TEXT).with_query(GOLDEN_QUESTION)
}

/// Small film corpus the scripted replay searches.
pub fn golden_corpus() -> Vec<Document> {
    let d = |id: &str, title: &str, text: &str| Document {
        id: id.into(),
        title: title.into(),
        text: text.into(),
    };
    vec![
        d("film-1", "Remember the Titans", "Remember the Titans opened strongly at the U.S. box office. It eventually went on to gross an estimated $115,654,751 in the U.S."),
        d("film-2", "My Favorite Martian (film)", "The film grossed $36.8 million domestically against a budget of $65 million."),
        d("film-3", "Titans (soundtrack)", "The soundtrack album accompanied the film Remember the Titans."),
        d("film-4", "Martian (disambiguation)", "Martian may refer to an inhabitant of Mars or to several films."),
        d("film-5", "Box office", "Box office gross is the revenue a film earns from ticket sales."),
    ]
}

/// The fixture's actions as a replayable script.
pub fn golden_script() -> Vec<ScriptItem> {
    golden_trajectory()
        .steps
        .into_iter()
        .map(|s| ScriptItem::Act(s.action))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenReport {
    pub searches: usize,
    pub evaluates: usize,
    pub answer: Option<String>,
    pub compliant: bool,
    pub violations: Vec<Violation>,
    pub segment_scores: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub reward: f64,
    pub replay_reward: f64,
    pub replay_compliant: bool,
    /// Parse then serialize reproduces the fixture.
    pub round_trip: bool,
}

impl GoldenReport {
    pub fn ok(&self) -> bool {
        self.searches == 2
            && self.evaluates == 2
            && self.answer.as_deref() == Some(GOLDEN_ANSWER)
            && self.compliant
            && self.segment_scores == [5.0, 10.0]
            && self.reward == 1.0
            && self.replay_reward == 1.0
            && self.replay_compliant
            && self.round_trip
    }
}

/// Parses, validates, segments, calibrates and replays the fixture.
pub fn verify_golden() -> Result<GoldenReport, HarnessError> {
    let traj = golden_trajectory();
    let verdict = validate_format(&traj);
    let gold = GoldAnswer::single(GOLDEN_ANSWER);
    let segments = segment_trajectory(&traj).unwrap_or_default();
    let cal = calibrate(1.0, &segments, traj.token_count, &PcarParams::default())?;

    let env = RetrievalEnv::from_documents(golden_corpus(), &RetrievalConfig::default())?;
    let policy = RolloutPolicy::Scripted(ScriptedPolicy::new(vec![golden_script()])?);
    let replay = run_rollout(&policy, &env, GOLDEN_QUESTION, GOLDEN_ANSWER, 0, 0);
    let replay_rec = gated_reward(&replay.trajectory, &gold);

    Ok(GoldenReport {
        searches: traj.count_searches(),
        evaluates: traj.count_evaluates(),
        answer: traj.answer_text.clone(),
        compliant: verdict.compliant,
        violations: verdict.violations,
        segment_scores: segments.iter().map(|s| s.score).collect(),
        multipliers: cal.segments.iter().map(|d| d.multiplier).collect(),
        reward: gated_reward(&traj, &gold).reward,
        replay_reward: replay_rec.reward,
        replay_compliant: replay_rec.format_compliant,
        round_trip: traj.serialize() == GOLDEN_TEXT.trim_end(),
    })
}

/// The fixture with the `n`-th action of `kind` removed (0-based).
pub fn without_action(kind: fn(&Action) -> bool, n: usize) -> String {
    let traj = golden_trajectory();
    let target = traj
        .steps
        .iter()
        .filter(|s| kind(&s.action))
        .nth(n)
        .map(|s| s.span.clone());
    let mut blocks = Vec::new();
    for s in &traj.steps {
        if Some(&s.span) == target.as_ref() {
            continue;
        }
        blocks.push(s.action.render());
        if let Some(o) = s.observation.render() {
            blocks.push(o);
        }
    }
    blocks.join("\n")
}
