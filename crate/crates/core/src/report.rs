//! Scaling tables and report artifacts built from an [`ExperimentResult`].
//!
//! Markdown tables use three decimals. The long-format CSV writes each value
//! with Rust's shortest round-trip formatting, so parsing it back gives the
//! aggregate bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::ExperimentResult;
use crate::fsutil::write_atomic;
use crate::metrics::SentenceScores;
use crate::prompting::PromptStyle;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported report format `{0}` (expected markdown, csv, svg-lines or all)")]
    UnsupportedFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    SvgLines,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::SvgLines];
}

impl FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "svg-lines" | "svg" => Ok(Self::SvgLines),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub subset_size: usize,
    pub means: SentenceScores,
}

/// Rows are sorted by subset size, one per size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub style: PromptStyle,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn sizes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.subset_size).collect()
    }
}

/// One table per style present in the aggregates, in style order.
pub fn build_scaling_tables(result: &ExperimentResult) -> Vec<ScalingTable> {
    let mut tables: Vec<ScalingTable> = Vec::new();
    let mut aggs: Vec<_> = result.aggregates.iter().collect();
    aggs.sort_by_key(|a| (a.style, a.subset_size));
    for a in aggs {
        let row = ScalingRow {
            subset_size: a.subset_size,
            means: a.means,
        };
        match tables.last_mut() {
            Some(t) if t.style == a.style => {
                if t.rows.last().map(|r| r.subset_size) != Some(a.subset_size) {
                    t.rows.push(row);
                }
            }
            _ => tables.push(ScalingTable {
                style: a.style,
                rows: vec![row],
            }),
        }
    }
    tables
}

/// Column headings used in tables and charts, same order as
/// [`SentenceScores::values`].
pub const METRIC_LABELS: [&str; 6] = ["BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "TER score", "METEOR"];

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// A rendered output file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

pub fn render_report(result: &ExperimentResult, format: ReportFormat) -> Vec<Artifact> {
    let tables = build_scaling_tables(result);
    match format {
        ReportFormat::Markdown => vec![Artifact {
            file_name: "report.md".into(),
            bytes: markdown(result, &tables).into_bytes(),
        }],
        ReportFormat::Csv => vec![Artifact {
            file_name: "scaling.csv".into(),
            bytes: long_csv(&tables).into_bytes(),
        }],
        ReportFormat::SvgLines => tables
            .iter()
            .map(|t| Artifact {
                file_name: format!("scaling_{}.svg", t.style),
                bytes: svg_chart(t).into_bytes(),
            })
            .collect(),
    }
}

/// Renders each format and writes the files into `dir`; returns their paths.
pub fn write_report(
    result: &ExperimentResult,
    formats: &[ReportFormat],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for &f in formats {
        for a in render_report(result, f) {
            let path = dir.join(&a.file_name);
            write_atomic(&path, &a.bytes).map_err(|source| ReportError::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

fn style_title(style: PromptStyle) -> &'static str {
    match style {
        PromptStyle::ChainOfReasoning => "Chain-of-reasoning prompting",
        PromptStyle::Direct => "Direct prompting",
    }
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn markdown(result: &ExperimentResult, tables: &[ScalingTable]) -> String {
    let mut out = String::new();
    let c = &result.config;
    let _ = writeln!(out, "# Translation results\n");
    let _ = writeln!(out, "- backend: {} (model `{}`, temperature {})", c.backend.kind, c.backend.model_name, c.backend.temperature);
    let _ = writeln!(out, "- seed: {}", c.seed);
    let _ = writeln!(out, "- metrics: {}", result.metrics_version);
    let _ = writeln!(out, "- prompt templates: {}", result.prompt_fingerprint);
    let _ = writeln!(out, "- records: {} ({} failed)", result.records.len(), result.failed_count());
    let _ = writeln!(out, "- TER is reported as a similarity: max(0, 1 - TER)\n");

    for t in tables {
        let _ = writeln!(out, "## {}\n", style_title(t.style));
        let _ = writeln!(out, "| Subset size | {} |", METRIC_LABELS.join(" | "));
        let _ = writeln!(out, "|---:|{}", "---:|".repeat(6));
        for r in &t.rows {
            let vals: Vec<String> = r.means.values().iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "| {} | {} |", r.subset_size, vals.join(" | "));
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Translation outputs\n");
    for a in &result.aggregates {
        let _ = writeln!(
            out,
            "### {} ({} phrases)\n",
            style_title(a.style),
            a.subset_size
        );
        let _ = writeln!(out, "| Original Phrase | Translation |");
        let _ = writeln!(out, "|---|---|");
        for r in result
            .records
            .iter()
            .filter(|r| r.style == a.style && r.subset_size == a.subset_size)
        {
            let cand = match &r.error {
                Some(e) => format!("*(failed: {})*", cell(e)),
                None => cell(&r.candidate),
            };
            let _ = writeln!(out, "| {} | {} |", cell(&r.reference), cand);
        }
        let m = &a.means;
        let _ = writeln!(
            out,
            "\nMetrics: BLEU: {:.3}, ROUGE-1: {:.3}, ROUGE-2: {:.3}, ROUGE-L: {:.3}, TER: {:.3}, METEOR: {:.3}\n",
            m.bleu, m.rouge1_f, m.rouge2_f, m.rouge_l_f, m.ter_score, m.meteor
        );
    }
    out
}

fn long_csv(tables: &[ScalingTable]) -> String {
    let mut out = String::from("style,subset_size,metric,value\n");
    for t in tables {
        for r in &t.rows {
            for (name, v) in SentenceScores::NAMES.iter().zip(r.means.values()) {
                let _ = writeln!(out, "{},{},{},{}", t.style, r.subset_size, name, v);
            }
        }
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn svg_chart(t: &ScalingTable) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sizes = t.sizes();
    let (lo, hi) = match (sizes.first(), sizes.last()) {
        (Some(&a), Some(&b)) => (a as f64, b as f64),
        _ => (0.0, 1.0),
    };
    let x = |s: usize| {
        if hi > lo {
            LEFT + (s as f64 - lo) / (hi - lo) * pw
        } else {
            LEFT + pw / 2.0
        }
    };
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} by subset size</text>"#,
        LEFT + pw / 2.0,
        style_title(t.style)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{v:.2}</text>"##,
            y(v),
            LEFT + pw,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    for &sz in &sizes {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{sz}</text>"#,
            x(sz),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">subset size</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (m, (label, color)) in METRIC_LABELS.iter().zip(COLORS).enumerate() {
        let points: Vec<String> = t
            .rows
            .iter()
            .map(|r| format!("{:.1},{:.1}", x(r.subset_size), y(r.means.values()[m])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{label}</title></polyline>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + m as f64 * 20.0;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
