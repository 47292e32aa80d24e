use std::fmt::Write as _;
use std::io::Write;

use crate::advantage::write_diagnostics;
use crate::objective::write_token_batch;

use super::group::GroupOutcome;
use super::training::IterationSummary;

/// Writes the token records of `groups` as JSON lines.
pub fn export_batch<W: Write>(w: W, groups: &[GroupOutcome]) -> std::io::Result<()> {
    write_token_batch(w, groups.iter().flat_map(|g| g.batch.records()))
}

/// Writes per-segment diagnostics of `groups` as JSON lines.
pub fn export_diagnostics<W: Write>(w: W, groups: &[GroupOutcome]) -> std::io::Result<()> {
    let recs: Vec<_> = groups.iter().flat_map(GroupOutcome::diagnostics).collect();
    write_diagnostics(w, &recs)
}

/// One JSON object per line: question id, rollout id, reward and raw text.
pub fn export_rollouts<W: Write>(mut w: W, groups: &[GroupOutcome]) -> std::io::Result<()> {
    for g in groups {
        for r in &g.rollouts {
            let v = serde_json::json!({
                "id": g.question_id,
                "rollout": r.rollout_id,
                "reward": r.reward.reward,
                "f1": r.reward.f1,
                "format_compliant": r.reward.format_compliant,
                "prediction": r.rollout.trajectory.answer_text,
                "trajectory": r.rollout.trajectory.raw_text,
            });
            serde_json::to_writer(&mut w, &v)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn export_metrics<W: Write>(mut w: W, summaries: &[IterationSummary]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut w, summaries)?;
    w.write_all(b"\n")
}

const CSV_HEADER: &str = "iteration,mean_reward,mean_f1,em_rate,compliance_rate,tpfr,mean_searches,clamp_rate,buffer_tokens,objective_before,objective_after";

pub fn curves_csv(summaries: &[IterationSummary]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for m in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.iteration,
            m.mean_reward,
            m.mean_f1,
            m.em_rate,
            m.compliance_rate,
            m.tpfr,
            m.mean_searches,
            m.clamp_rate,
            m.buffer_tokens,
            m.objective_before,
            m.objective_after
        );
    }
    s
}

/// Line chart of mean reward and TPFR per iteration. The y axis spans the
/// observed range of the plotted values.
pub fn curves_svg(summaries: &[IterationSummary]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let series: [(&str, &str, Vec<f64>); 2] = [
        ("mean reward", "#1f77b4", summaries.iter().map(|m| m.mean_reward).collect()),
        ("TPFR", "#d62728", summaries.iter().map(|m| m.tpfr).collect()),
    ];
    let all = series.iter().flat_map(|s| s.2.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let n = summaries.len().max(2) - 1;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="4" y="{}">{hi:.3}</text>"#, y(hi) + 4.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{lo:.3}</text>"#, y(lo) + 4.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}">0</text>"#, H - PAD + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        W - PAD,
        H - PAD + 16.0,
        summaries.len().saturating_sub(1)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, W / 2.0, H - 8.0);
    for (k, (name, color, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - PAD - 90.0,
            PAD + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the CSV and SVG learning curves.
pub fn emit_curves<W1: Write, W2: Write>(
    mut csv: W1,
    mut svg: W2,
    summaries: &[IterationSummary],
) -> std::io::Result<()> {
    csv.write_all(curves_csv(summaries).as_bytes())?;
    svg.write_all(curves_svg(summaries).as_bytes())
}
