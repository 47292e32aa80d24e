use super::{Action, FormatVerdict, Trajectory, Violation};

/// Format gate.
///
/// A trajectory is compliant when:
/// - every Search and the Answer are preceded by a `<think>` span since
///   the previous non-Think action (or the start);
/// - every Search's next non-Think action is an Evaluate;
/// - every Evaluate's previous non-Think action is a Search that has not
///   already been evaluated;
/// - a tag-enclosed answer exists;
/// - no tool block failed to parse and every score is in `[0, 10]`.
///
/// The Evaluate that closes a Search rides on that Search's reasoning and
/// needs no Think of its own.
pub fn validate_format(traj: &Trajectory) -> FormatVerdict {
    let mut v: Vec<Violation> = traj.defects.iter().map(|d| d.code).collect();

    let mut thought_since_last = false;
    let mut any_think = false;
    // Search waiting for its Evaluate.
    let mut open_search = false;

    for action in traj.actions() {
        match action {
            Action::Think { .. } => {
                thought_since_last = true;
                any_think = true;
                continue;
            }
            Action::Search { .. } => {
                if open_search {
                    v.push(Violation::SearchWithoutEvaluate);
                }
                if !thought_since_last {
                    v.push(Violation::MissingThink);
                }
                open_search = true;
            }
            Action::Evaluate { score, .. } => {
                if !open_search {
                    v.push(Violation::EvaluateWithoutSearch);
                }
                if !(0.0..=10.0).contains(score) {
                    v.push(Violation::ScoreOutOfRange);
                }
                open_search = false;
            }
            Action::Answer { .. } => {
                if open_search {
                    v.push(Violation::SearchWithoutEvaluate);
                }
                if !thought_since_last {
                    v.push(Violation::MissingThink);
                }
                open_search = false;
            }
        }
        thought_since_last = false;
    }
    if open_search {
        v.push(Violation::SearchWithoutEvaluate);
    }
    if !any_think {
        v.push(Violation::MissingThink);
    }
    if traj.answer_text.is_none() {
        v.push(Violation::MissingAnswer);
    }
    FormatVerdict::from_violations(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_trajectory;

    fn verdict(raw: &str) -> FormatVerdict {
        validate_format(&parse_trajectory(raw))
    }

    const S: &str = "<tool:search>{\"query\": \"q\"}</tool>";
    const E: &str = "<tool:evaluate>{\"evaluation\": \"c\", \"score\": 5}</tool>";
    const T: &str = "<think>t</think>";
    const A: &str = "<answer>a</answer>";

    #[test]
    fn minimal_compliant() {
        let v = verdict(&[T, S, E, T, A].concat());
        assert!(v.compliant, "{v:?}");
        assert!(verdict(&[T, A].concat()).compliant);
    }

    #[test]
    fn empty_trajectory() {
        let v = verdict("");
        assert_eq!(
            v.violations,
            vec![Violation::MissingThink, Violation::MissingAnswer]
        );
    }

    #[test]
    fn think_between_search_and_evaluate_is_allowed() {
        assert!(verdict(&[T, S, T, E, T, A].concat()).compliant);
    }

    #[test]
    fn coupling_violations() {
        let v = verdict(&[T, S, T, S, E, T, A].concat());
        assert_eq!(v.violations, vec![Violation::SearchWithoutEvaluate]);
        let v = verdict(&[T, S, E, E, T, A].concat());
        assert_eq!(v.violations, vec![Violation::EvaluateWithoutSearch]);
        let v = verdict(&[T, E, T, S, E, T, A].concat());
        assert_eq!(v.violations, vec![Violation::EvaluateWithoutSearch]);
        let v = verdict(&[T, S, T, A].concat());
        assert_eq!(v.violations, vec![Violation::SearchWithoutEvaluate]);
        let v = verdict(&[T, S].concat());
        assert!(v.has(Violation::SearchWithoutEvaluate) && v.has(Violation::MissingAnswer));
    }

    #[test]
    fn missing_think_before_search_or_answer() {
        let v = verdict(&[T, S, E, S, E, T, A].concat());
        assert_eq!(v.violations, vec![Violation::MissingThink]);
        let v = verdict(&[T, S, E, A].concat());
        assert_eq!(v.violations, vec![Violation::MissingThink]);
    }

    #[test]
    fn score_out_of_range_is_flagged() {
        let bad = "<tool:evaluate>{\"evaluation\": \"c\", \"score\": 10.5}</tool>";
        let v = verdict(&[T, S, bad, T, A].concat());
        assert!(v.has(Violation::ScoreOutOfRange));
        assert!(!v.compliant);
    }
}
