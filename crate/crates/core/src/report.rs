//! File renderings of evaluation reports: JSON, CSV tables and grouped-bar
//! SVG composition charts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::metrics::{ClusterComposition, EvaluationReport};

/// Which target a composition chart shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetVariable {
    Modality,
    BodyPart,
}

impl TargetVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetVariable::Modality => "modality",
            TargetVariable::BodyPart => "body_part",
        }
    }

    fn mix(self, c: &ClusterComposition) -> &std::collections::BTreeMap<String, f64> {
        match self {
            TargetVariable::Modality => &c.modality,
            TargetVariable::BodyPart => &c.body_part,
        }
    }
}

pub const SUMMARY_HEADER: [&str; 16] = [
    "run", "k", "n", "nmi_modality", "nmi_body_part", "hs_modality", "hs_body_part", "s", "d_image_mean", "d_image_std",
    "d_diagnosis_mean", "d_diagnosis_std", "d_score", "empty_clusters", "small_clusters", "largest_cluster",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per named report.
pub fn write_summary_csv<W: Write>(w: W, rows: &[(String, &EvaluationReport)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for (name, r) in rows {
        out.write_record([
            name.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.nmi_modality.to_string(),
            r.nmi_body_part.to_string(),
            r.hs_modality.to_string(),
            r.hs_body_part.to_string(),
            r.s.to_string(),
            opt(r.d_image.as_ref().map(|d| d.mean)),
            opt(r.d_image.as_ref().map(|d| d.std)),
            opt(r.d_diagnosis.as_ref().map(|d| d.mean)),
            opt(r.d_diagnosis.as_ref().map(|d| d.std)),
            opt(r.d_score),
            r.empty_clusters.to_string(),
            r.small_clusters.to_string(),
            r.composition.iter().map(|c| c.size).max().unwrap_or(0).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Long format: `cluster, size, target, category, proportion`.
pub fn write_composition_csv<W: Write>(w: W, composition: &[ClusterComposition]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "size", "target", "category", "proportion"])?;
    for c in composition {
        for t in [TargetVariable::Modality, TargetVariable::BodyPart] {
            for (cat, p) in t.mix(c) {
                out.write_record([c.cluster.to_string(), c.size.to_string(), t.as_str().to_owned(), cat.clone(), p.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `cluster, size` for every cluster, empty ones included.
pub fn write_size_histogram<W: Write>(w: W, composition: &[ClusterComposition]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "size"])?;
    for c in composition {
        out.write_record([c.cluster.to_string(), c.size.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bars: one group per cluster, one bar per category showing its
/// share of the cluster. Empty clusters keep their slot with no bars.
pub fn composition_svg(composition: &[ClusterComposition], target: TargetVariable, title: &str) -> String {
    let categories: Vec<&String> = composition.iter().flat_map(|c| target.mix(c).keys()).collect::<BTreeSet<_>>().into_iter().collect();
    let bar_w = 8.0;
    let gap = 12.0;
    let group_w = bar_w * categories.len().max(1) as f64 + gap;
    let (left, top, plot_h) = (50.0, 40.0, 240.0);
    let legend_h = 18.0 * categories.len() as f64;
    let width = (left + group_w * composition.len() as f64 + 20.0).max(320.0);
    let height = top + plot_h + 40.0 + legend_h + 10.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    for tick in 0..=4 {
        let v = f64::from(tick) * 0.25;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, width - 10.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, left - 4.0, y + 4.0);
    }
    for (g, c) in composition.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        let mix = target.mix(c);
        for (k, cat) in categories.iter().enumerate() {
            if let Some(&p) = mix.get(*cat) {
                let h = plot_h * p;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{bar_w}" height="{:.1}" fill="{}"><title>{}: {:.3}</title></rect>"#,
                    x0 + k as f64 * bar_w,
                    top + plot_h - h,
                    h,
                    PALETTE[k % PALETTE.len()],
                    escape(cat),
                    p
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{} (n={})</text>"#,
            x0 + (group_w - gap) / 2.0,
            top + plot_h + 14.0,
            c.cluster,
            c.size
        );
    }
    for (k, cat) in categories.iter().enumerate() {
        let y = top + plot_h + 32.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{left}" y="{y}" width="12" height="12" fill="{}"/>"#, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, left + 18.0, y + 10.0, escape(cat));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{composition_report, MeanStd};

    fn report() -> EvaluationReport {
        let composition = composition_report(&[0, 0, 1, 1], 3, &["CT", "MR", "CT", "CT"], &["HEAD", "HEAD", "CHEST", "A&B"]).unwrap();
        EvaluationReport {
            k: 3,
            n: 4,
            nmi_modality: 0.2,
            nmi_body_part: 0.9,
            hs_modality: 0.3,
            hs_body_part: 1.0,
            s: 0.5,
            d_image: Some(MeanStd { mean: 0.1, std: 0.01 }),
            d_diagnosis: None,
            d_score: None,
            empty_clusters: 1,
            small_clusters: 1,
            composition,
        }
    }

    #[test]
    fn summary_has_one_row_per_run() {
        let r = report();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[("a".into(), &r), ("b".into(), &r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,3,4,0.2,0.9,0.3,1,0.5,0.1,0.01,,,,1,1,2"));
    }

    #[test]
    fn composition_csv_lists_every_share() {
        let mut buf = Vec::new();
        write_composition_csv(&mut buf, &report().composition).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("0,2,modality,CT,0.5"));
        assert!(text.contains("1,2,body_part,A&B,0.5"));
        // header + 2 modality + 1 body part for cluster 0, 1 + 2 for cluster 1
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn svg_has_a_bar_per_share_and_escapes_labels() {
        let svg = composition_svg(&report().composition, TargetVariable::BodyPart, "body part <k=3>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("body part &lt;k=3&gt;"));
        assert!(svg.contains("A&amp;B"));
        assert_eq!(svg.matches("<title>").count(), 3);
        assert!(svg.contains("2 (n=0)"));
    }
}
