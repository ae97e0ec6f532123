use super::likelihood::PreparedData;

/// Clean user-supplied change-points so every piece holds at least one event.
///
/// Points with no event before them or none at/after them are dropped; two
/// adjacent points with no event between them are replaced by their mean.
/// Repeats until stable. Returns the cleaned points and one warning per
/// change made.
pub(crate) fn validate_prepared(breakpoints: &[f64], data: &PreparedData) -> (Vec<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut pts: Vec<f64> = Vec::with_capacity(breakpoints.len());
    for &d in breakpoints {
        if d.is_finite() && d > 0.0 {
            pts.push(d);
        } else {
            warnings.push(format!("change-point {d} is not a positive finite time; dropped"));
        }
    }
    pts.sort_by(f64::total_cmp);
    let before = pts.len();
    pts.dedup();
    if pts.len() < before {
        warnings.push("duplicate change-points removed".to_string());
    }

    let n_events = data.n_events();
    loop {
        let mut changed = false;

        let mut kept = Vec::with_capacity(pts.len());
        for &d in &pts {
            let before = n_events - data.events_from(d);
            let after = data.events_from(d);
            if before == 0 {
                warnings.push(format!("change-point {d} dropped: no events before it"));
                changed = true;
            } else if after == 0 {
                warnings.push(format!("change-point {d} dropped: no events after it"));
                changed = true;
            } else {
                kept.push(d);
            }
        }
        pts = kept;

        if let Some(i) = (0..pts.len().saturating_sub(1)).find(|&i| data.events_in(pts[i], pts[i + 1]) == 0) {
            let mid = 0.5 * (pts[i] + pts[i + 1]);
            warnings.push(format!(
                "change-points {} and {} have no events between them; merged into {mid}",
                pts[i],
                pts[i + 1]
            ));
            pts.splice(i..i + 2, [mid]);
            changed = true;
        }

        if !changed {
            return (pts, warnings);
        }
    }
}
