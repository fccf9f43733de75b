use std::fmt::Write;

use super::ig::AttributionMap;
use crate::alignment::Label;
use crate::error::{Error, Result};

/// `|score| / max|score|`; all zeros when every score is zero.
pub fn intensities(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if max == 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| s.abs() / max).collect()
}

/// Plain-text report: `#`-prefixed header lines, then one `token<TAB>score`
/// line per token. Scores are written in shortest round-trip form.
pub fn render_text(map: &AttributionMap) -> String {
    let mut s = String::new();
    writeln!(s, "# subject\t{}", map.subject_id).unwrap();
    let class = map.predicted_class.map_or("-".to_string(), |c| c.code().to_string());
    writeln!(s, "# predicted_class\t{class}").unwrap();
    writeln!(s, "# steps\t{}", map.steps).unwrap();
    writeln!(s, "# output_gap\t{}", map.output_gap).unwrap();
    writeln!(s, "# completeness_gap\t{}", map.completeness_gap).unwrap();
    for (t, v) in map.tokens.iter().zip(&map.scores) {
        writeln!(s, "{}\t{v}", t.replace(['\t', '\n'], " ")).unwrap();
    }
    s
}

/// Inverse of [`render_text`].
pub fn parse_text(report: &str) -> Result<AttributionMap> {
    let bad = |line: usize, msg: &str| Error::format("attribution report", format!("line {}: {msg}", line + 1));
    let mut map = AttributionMap {
        subject_id: String::new(),
        tokens: Vec::new(),
        scores: Vec::new(),
        predicted_class: None,
        steps: 0,
        output_gap: 0.0,
        completeness_gap: f64::NAN,
    };
    for (i, line) in report.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix("# ") {
            let (k, v) = h.split_once('\t').ok_or_else(|| bad(i, "header without a tab"))?;
            match k {
                "subject" => map.subject_id = v.to_string(),
                "predicted_class" => {
                    map.predicted_class = if v == "-" {
                        None
                    } else {
                        Some(v.parse::<Label>().map_err(|_| bad(i, "unknown class"))?)
                    }
                }
                "steps" => map.steps = v.parse().map_err(|_| bad(i, "bad step count"))?,
                "output_gap" => map.output_gap = v.parse().map_err(|_| bad(i, "bad number"))?,
                "completeness_gap" => map.completeness_gap = v.parse().map_err(|_| bad(i, "bad number"))?,
                _ => {}
            }
            continue;
        }
        let (tok, score) = line.rsplit_once('\t').ok_or_else(|| bad(i, "expected token<TAB>score"))?;
        map.tokens.push(tok.to_string());
        map.scores.push(score.parse().map_err(|_| bad(i, "bad score"))?);
    }
    if map.completeness_gap.is_nan() {
        return Err(bad(0, "missing completeness_gap header"));
    }
    Ok(map)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tokens shaded green (supporting the attributed output) or red
/// (opposing) with opacity equal to their normalized intensity.
pub fn render_html(map: &AttributionMap) -> String {
    let mut s = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attributions</title></head><body>\n");
    let class = map.predicted_class.map_or("-".to_string(), |c| c.code().to_string());
    writeln!(
        s,
        "<p>subject {} &middot; class {class} &middot; completeness gap {:.3e}</p>\n<p>",
        escape(&map.subject_id),
        map.completeness_gap
    )
    .unwrap();
    for ((t, v), w) in map.tokens.iter().zip(&map.scores).zip(intensities(&map.scores)) {
        let rgb = if *v > 0.0 {
            "0,160,0"
        } else if *v < 0.0 {
            "200,0,0"
        } else {
            "128,128,128"
        };
        writeln!(
            s,
            "<span title=\"{v}\" style=\"background: rgba({rgb},{w:.3})\">{}</span>",
            escape(t)
        )
        .unwrap();
    }
    s.push_str("</p>\n</body></html>\n");
    s
}
