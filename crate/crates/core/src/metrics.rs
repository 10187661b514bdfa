//! APCER / BPCER / ACER, FAR-FRR curves and fold aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{AttackType, Label};
use crate::scoring::{predict, ScoredSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    /// Spoof samples per attack type.
    pub presentation_attacks: BTreeMap<AttackType, usize>,
    /// Spoof samples per attack type that were accepted as live.
    pub accepted: BTreeMap<AttackType, usize>,
    pub bona_fide: usize,
    /// Live samples rejected as spoof.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_attack_apcer: BTreeMap<AttackType, f64>,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub threshold: f64,
    pub curve: Vec<CurvePoint>,
    pub counts: Counts,
}

/// Metrics at `threshold`. A sample is rejected (predicted spoof) when its
/// score is below the threshold.
pub fn compute_metrics(samples: &[ScoredSample], threshold: f64) -> Result<MetricsReport> {
    let mut pa: BTreeMap<AttackType, usize> = BTreeMap::new();
    let mut accepted: BTreeMap<AttackType, usize> = BTreeMap::new();
    let (mut bona_fide, mut rejected) = (0usize, 0usize);
    for s in samples {
        if !s.attack.consistent_with(s.label) {
            return Err(Error::contract(format!(
                "sample `{}` is {} with attack type {}",
                s.sample_id, s.label, s.attack
            )));
        }
        let live_pred = predict(s.score, threshold) == Label::Live;
        match s.label {
            Label::Live => {
                bona_fide += 1;
                rejected += (!live_pred) as usize;
            }
            Label::Spoof => {
                *pa.entry(s.attack).or_default() += 1;
                *accepted.entry(s.attack).or_default() += live_pred as usize;
            }
        }
    }
    if bona_fide == 0 || pa.is_empty() {
        return Err(Error::invalid("metrics need at least one live and one spoof sample"));
    }
    let per_attack_apcer: BTreeMap<AttackType, f64> = pa
        .iter()
        .map(|(&t, &n)| (t, accepted[&t] as f64 / n as f64))
        .collect();
    let apcer = per_attack_apcer.values().copied().fold(0.0, f64::max);
    let bpcer = rejected as f64 / bona_fide as f64;
    let (live, spoof) = split_scores(samples);
    Ok(MetricsReport {
        per_attack_apcer,
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
        threshold,
        curve: far_frr_curve(&live, &spoof)?,
        counts: Counts {
            presentation_attacks: pa,
            accepted,
            bona_fide,
            rejected,
        },
    })
}

/// `(live scores, spoof scores)`.
pub fn split_scores(samples: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let live = samples.iter().filter(|s| s.label == Label::Live).map(|s| s.score).collect();
    let spoof = samples.iter().filter(|s| s.label == Label::Spoof).map(|s| s.score).collect();
    (live, spoof)
}

/// FAR and FRR at every distinct observed score, ascending.
pub fn far_frr_curve(live: &[f64], spoof: &[f64]) -> Result<Vec<CurvePoint>> {
    if live.is_empty() || spoof.is_empty() {
        return Err(Error::invalid("curve needs live and spoof scores"));
    }
    if live.iter().chain(spoof).any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut ls = live.to_vec();
    let mut ss = spoof.to_vec();
    ls.sort_by(f64::total_cmp);
    ss.sort_by(f64::total_cmp);
    let mut thetas = [ls.as_slice(), ss.as_slice()].concat();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let (nl, ns) = (ls.len() as f64, ss.len() as f64);
    Ok(thetas
        .into_iter()
        .map(|t| {
            let accepted = ss.len() - ss.partition_point(|&s| s < t);
            let rejected = ls.partition_point(|&s| s < t);
            CurvePoint {
                threshold: t,
                far: accepted as f64 / ns,
                frr: rejected as f64 / nl,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("no values to aggregate"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

impl std::fmt::Display for MeanStd {
    /// Percentages, `mean±std`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub folds: usize,
    pub apcer: MeanStd,
    pub bpcer: MeanStd,
    pub acer: MeanStd,
}

pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<FoldSummary> {
    let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(FoldSummary {
        folds: reports.len(),
        apcer: pick(|r| r.apcer)?,
        bpcer: pick(|r| r.bpcer)?,
        acer: pick(|r| r.acer)?,
    })
}

/// Plain-text table of one report.
pub fn format_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "threshold  {:.6}", r.threshold);
    for (t, v) in &r.per_attack_apcer {
        let _ = writeln!(
            s,
            "APCER[{t}]  {:6.2}%  ({} of {})",
            100.0 * v,
            r.counts.accepted[t],
            r.counts.presentation_attacks[t]
        );
    }
    let _ = writeln!(s, "APCER      {:6.2}%", 100.0 * r.apcer);
    let _ = writeln!(
        s,
        "BPCER      {:6.2}%  ({} of {})",
        100.0 * r.bpcer,
        r.counts.rejected,
        r.counts.bona_fide
    );
    let _ = writeln!(s, "ACER       {:6.2}%", 100.0 * r.acer);
    s
}

/// Static SVG of FAR and FRR against the threshold, with the operating
/// threshold marked.
pub fn curve_svg(curve: &[CurvePoint], threshold: f64) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let (lo, hi) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.threshold), b.max(p.threshold))
    });
    let (lo, hi) = if curve.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let x = |t: f64| M + (t - lo) / (hi - lo) * (W - 2.0 * M);
    let y = |r: f64| H - M - r * (H - 2.0 * M);
    let line = |f: fn(&CurvePoint) -> f64| {
        curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.threshold), y(f(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M},{} V{} H{}" fill="none" stroke="black"/>"#,
        M,
        H - M,
        W - M
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="firebrick" stroke-width="1.5"/>"#,
        line(|p| p.far)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        line(|p| p.frr)
    );
    if threshold.is_finite() {
        let tx = x(threshold.clamp(lo, hi));
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{M}" x2="{tx:.2}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
            H - M
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="12" fill="firebrick">FAR</text>"#, W - 110.0);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="12" fill="steelblue">FRR</text>"#, W - 70.0);
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="{}" font-size="11">{lo:.3}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{hi:.3}</text>"#,
        H - 22.0,
        W - M,
        H - 22.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(label: Label, attack: AttackType, score: f64) -> ScoredSample {
        ScoredSample {
            sample_id: String::new(),
            label,
            attack,
            score,
            nearest_reference: String::new(),
            degenerate: false,
        }
    }

    #[test]
    fn worked_example() {
        // θ = 0.5. Print: 1 of 4 accepted; display: 1 of 5; live: 2 of 10 rejected.
        let mut v = Vec::new();
        for i in 0..4 {
            v.push(scored(Label::Spoof, AttackType::Print, if i == 0 { 0.9 } else { 0.1 }));
        }
        for i in 0..5 {
            v.push(scored(Label::Spoof, AttackType::Display, if i == 0 { 0.7 } else { 0.2 }));
        }
        for i in 0..10 {
            v.push(scored(Label::Live, AttackType::None, if i < 2 { 0.3 } else { 0.8 }));
        }
        let r = compute_metrics(&v, 0.5).unwrap();
        assert_eq!(r.per_attack_apcer[&AttackType::Print], 0.25);
        assert_eq!(r.per_attack_apcer[&AttackType::Display], 0.20);
        assert_eq!(r.apcer, 0.25);
        assert_eq!(r.bpcer, 0.20);
        assert_eq!(r.acer, 0.225);
    }

    #[test]
    fn perfect_classifier() {
        let v = [
            scored(Label::Live, AttackType::None, 1.0),
            scored(Label::Spoof, AttackType::Print, 0.0),
        ];
        let r = compute_metrics(&v, 0.5).unwrap();
        assert_eq!((r.apcer, r.bpcer, r.acer), (0.0, 0.0, 0.0));
    }

    #[test]
    fn inconsistent_and_empty_inputs() {
        let bad = [
            scored(Label::Live, AttackType::None, 1.0),
            scored(Label::Spoof, AttackType::None, 0.0),
        ];
        assert!(matches!(compute_metrics(&bad, 0.5), Err(Error::Contract(_))));
        let live_only = [scored(Label::Live, AttackType::None, 1.0)];
        assert!(matches!(compute_metrics(&live_only, 0.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn acer_arithmetic() {
        assert_eq!((0.02f64 + 0.04) / 2.0, 0.03);
    }

    #[test]
    fn curve_crosses_between_scores() {
        let c = far_frr_curve(&[0.8], &[0.2]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].far, c[0].frr), (1.0, 0.0));
        assert_eq!((c[1].far, c[1].frr), (0.0, 0.0));
    }

    #[test]
    fn fold_aggregation() {
        let one = MeanStd::of(&[0.3]).unwrap();
        assert_eq!(one.std, 0.0);
        // 0.1, 0.2, 0.3: mean 0.2, population variance 0.02/3.
        let m = MeanStd::of(&[0.1, 0.2, 0.3]).unwrap();
        assert!((m.mean - 0.2).abs() < 1e-15);
        assert!((m.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(format!("{m}"), "20.00±8.16");
    }

    #[test]
    fn svg_is_well_formed() {
        let c = far_frr_curve(&[0.8, 0.6], &[0.2, 0.4]).unwrap();
        let s = curve_svg(&c, 0.5);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 2);
    }
}
