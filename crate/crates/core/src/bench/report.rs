use std::fmt::Write as _;

use super::{GridPoint, Lambda, Method, Metrics};
use crate::field::SpaceTimeField;

pub const METRICS_HEADER: &str = "method,lambda_g,lambda_t,snr_db,n_electrodes,re,cc,vh,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub lambda: Lambda,
    pub snr_db: f64,
    pub n_electrodes: usize,
    pub metrics: Metrics,
    /// Solver wall time, written only when timing is enabled.
    pub seconds: Option<f64>,
}

fn snr_text(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        snr.to_string()
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let secs = r.seconds.map(|s| format!("{s:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{},{},{},{},{}",
            r.method,
            r.lambda.gamma,
            r.lambda.t,
            snr_text(r.snr_db),
            r.n_electrodes,
            r.metrics.re,
            r.metrics.cc,
            r.metrics.vh,
            secs
        );
    }
    out
}

/// Every evaluated grid point; failed points have empty metric fields.
pub fn grid_csv(snr_db: f64, n_electrodes: usize, points: &[GridPoint]) -> String {
    let mut out = String::from("method,lambda_g,lambda_t,snr_db,n_electrodes,re,cc,vh,iterations,converged\n");
    for p in points {
        let m = p
            .metrics
            .map(|m| format!("{},{},{}", m.re, m.cc, m.vh))
            .unwrap_or_else(|| ",,".into());
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{},{},{},{}",
            p.method,
            p.lambda.gamma,
            p.lambda.t,
            snr_text(snr_db),
            n_electrodes,
            m,
            p.iterations,
            p.converged
        );
    }
    out
}

fn diverging(x: f64) -> [u8; 3] {
    // blue (−1) through white (0) to red (+1)
    let x = x.clamp(-1.0, 1.0);
    let fade = |v: f64| (255.0 * (1.0 - v)).round() as u8;
    if x >= 0.0 {
        [255, fade(x), fade(x)]
    } else {
        [fade(-x), fade(-x), 255]
    }
}

/// Plain-text PPM of a space-time field: one row per epicardial node in
/// surface order, one column per time node, colours scaled to `±scale`.
pub fn heatmap_ppm(u: &SpaceTimeField, scale: f64) -> String {
    let (w, h) = (u.n_time(), u.n_space());
    let mut out = format!("P3\n{w} {h}\n255\n");
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for i in 0..h {
        let px: Vec<String> = (0..w)
            .map(|s| {
                let [r, g, b] = diverging(u.get(i, s) / scale);
                format!("{r} {g} {b}")
            })
            .collect();
        let _ = writeln!(out, "{}", px.join(" "));
    }
    out
}
