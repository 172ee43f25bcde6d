//! Static renderings of attributions and metrics: XHTML heatmaps, word
//! importance lists and SVG charts. Every output is well-formed XML.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, PaddingStats, Target};
use crate::eval::RocCurve;
use crate::textpipe::PAD_SYMBOL;

/// Glyph shown for padding positions.
pub const PAD_GLYPH: &str = "*";

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// JSON that can sit inside a `<script>` element of an XHTML document.
fn embeddable_json(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value)
        .expect("json value serializes")
        .replace('&', "\\u0026")
        .replace('<', "\\u003c")
        .replace('>', "\\u003e")
}

/// Linear-interpolation quantile of `sorted` (ascending), `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOptions {
    /// Render smoothed rather than raw position values.
    pub smoothed: bool,
    /// Values with `|v|` at or below this quantile of `|values|` are gray.
    pub neutral_quantile: f64,
    /// Quantile of `|values|` at which color intensity saturates.
    pub clamp_quantile: f64,
    pub title: Option<String>,
    /// Embedded verbatim as a JSON script block.
    pub provenance: Option<serde_json::Value>,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        HeatmapOptions {
            smoothed: true,
            neutral_quantile: 0.5,
            clamp_quantile: 0.99,
            title: None,
            provenance: None,
        }
    }
}

/// Background of one token span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpanColor {
    Neutral,
    /// Evidence for death.
    Red(f64),
    /// Evidence for survival.
    Blue(f64),
}

impl SpanColor {
    fn css(self) -> String {
        match self {
            SpanColor::Neutral => "background-color:rgb(229,229,229)".into(),
            SpanColor::Red(a) => format!("background-color:rgba(214,39,40,{a:.3})"),
            SpanColor::Blue(a) => format!("background-color:rgba(31,119,180,{a:.3})"),
        }
    }

    fn class(self) -> &'static str {
        match self {
            SpanColor::Neutral => "n",
            SpanColor::Red(_) => "d",
            SpanColor::Blue(_) => "s",
        }
    }
}

/// Neutral cutoff and saturation level for a set of values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub neutral: f64,
    pub cap: f64,
}

impl ColorScale {
    pub fn fit(values: &[f64], neutral_quantile: f64, clamp_quantile: f64) -> Self {
        let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let neutral = quantile(&mags, neutral_quantile);
        let mut cap = quantile(&mags, clamp_quantile);
        if cap <= neutral {
            cap = mags.last().copied().unwrap_or(0.0);
        }
        ColorScale { neutral, cap }
    }

    pub fn color(&self, v: f64) -> SpanColor {
        if !(v.abs() > self.neutral) {
            return SpanColor::Neutral;
        }
        let alpha = if self.cap > 0.0 { (v.abs() / self.cap).min(1.0) } else { 1.0 };
        if v > 0.0 {
            SpanColor::Red(alpha)
        } else {
            SpanColor::Blue(alpha)
        }
    }
}

const STYLE: &str = "body{font-family:Georgia,serif;max-width:60em;margin:2em auto;line-height:1.9}\
.t{padding:0.1em 0.15em;border-radius:0.2em}\
.legend span{padding:0.1em 0.5em;margin-right:0.6em}\
.meta{color:#555;font-size:0.9em}";

fn display_token(map: &AttributionMap, i: usize) -> &str {
    if map.ids[i] == 0 || map.tokens[i] == PAD_SYMBOL {
        PAD_GLYPH
    } else {
        &map.tokens[i]
    }
}

fn probability(map: &AttributionMap) -> f64 {
    match map.target {
        Target::Probability => map.f_actual,
        Target::Logit => 1.0 / (1.0 + (-map.f_actual).exp()),
    }
}

/// A self-contained XHTML page with one colored span per token.
pub fn heatmap_html(map: &AttributionMap, opts: &HeatmapOptions) -> String {
    let values = if opts.smoothed { &map.smoothed_values } else { &map.position_values };
    let scale = ColorScale::fit(values, opts.neutral_quantile, opts.clamp_quantile);
    let title = opts
        .title
        .clone()
        .unwrap_or_else(|| format!("Patient {}", map.patient_id));
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n");
    h.push_str("<meta charset=\"utf-8\"/>\n");
    let _ = writeln!(h, "<title>{}</title>", escape(&title));
    let _ = writeln!(h, "<style>{STYLE}</style>\n</head>\n<body>");
    let _ = writeln!(h, "<h1>{}</h1>", escape(&title));
    let _ = writeln!(
        h,
        "<p class=\"prob\">Predicted probability of death: <strong>{:.4}</strong></p>",
        probability(map)
    );
    let _ = writeln!(
        h,
        "<p class=\"meta\">{} values; attribution target: {}; gray below |v| = {:.3e}; saturation at |v| = {:.3e}</p>",
        if opts.smoothed { "smoothed" } else { "raw" },
        match map.target {
            Target::Probability => "probability",
            Target::Logit => "logit",
        },
        scale.neutral,
        scale.cap
    );
    let _ = writeln!(
        h,
        "<p class=\"legend\"><span style=\"{}\">evidence for death</span><span style=\"{}\">evidence for survival</span><span style=\"{}\">not important</span><span>{PAD_GLYPH} padding</span></p>",
        SpanColor::Red(0.8).css(),
        SpanColor::Blue(0.8).css(),
        SpanColor::Neutral.css()
    );
    h.push_str("<p class=\"note\">\n");
    for (i, &v) in values.iter().enumerate() {
        let c = scale.color(v);
        let _ = writeln!(
            h,
            "<span class=\"t {}\" style=\"{}\" title=\"{:.6e}\">{}</span>",
            c.class(),
            c.css(),
            v,
            escape(display_token(map, i))
        );
    }
    h.push_str("</p>\n");
    if let Some(p) = &opts.provenance {
        let _ = writeln!(
            h,
            "<script type=\"application/json\" id=\"provenance\">{}</script>",
            embeddable_json(p)
        );
    }
    h.push_str("</body>\n</html>\n");
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub value: f64,
    pub count: usize,
}

/// Words ranked by aggregate attribution, split by sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordImportance {
    pub death: Vec<WordScore>,
    pub survival: Vec<WordScore>,
}

/// Sums raw position values per word over every occurrence in `maps`.
/// Padding is left out; words whose total is exactly zero appear in neither list.
pub fn wordcloud_data(maps: &[AttributionMap]) -> WordImportance {
    let mut agg: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for m in maps {
        for ((&id, tok), &v) in m.ids.iter().zip(&m.tokens).zip(&m.position_values) {
            if id == 0 || tok == PAD_SYMBOL {
                continue;
            }
            let e = agg.entry(tok.as_str()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let (mut death, mut survival): (Vec<WordScore>, Vec<WordScore>) = agg
        .into_iter()
        .filter(|(_, (v, _))| *v != 0.0)
        .map(|(w, (value, count))| WordScore {
            word: w.to_owned(),
            value,
            count,
        })
        .partition(|s| s.value > 0.0);
    let rank = |a: &WordScore, b: &WordScore| b.value.abs().total_cmp(&a.value.abs()).then_with(|| a.word.cmp(&b.word));
    death.sort_by(rank);
    survival.sort_by(rank);
    WordImportance { death, survival }
}

/// Two ranked columns with font size proportional to `|value|`.
pub fn wordcloud_html(words: &WordImportance, top: usize, provenance: Option<&serde_json::Value>) -> String {
    let max = words
        .death
        .iter()
        .chain(&words.survival)
        .map(|w| w.value.abs())
        .fold(0.0, f64::max);
    let size = |v: f64| if max > 0.0 { 12.0 + 28.0 * v.abs() / max } else { 12.0 };
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>Word importance</title>\n");
    h.push_str("<style>body{font-family:Georgia,serif;margin:2em}.col{display:inline-block;vertical-align:top;width:45%}li{list-style:none}</style>\n</head>\n<body>\n");
    for (name, list, color) in [
        ("Survival", &words.survival, "rgb(31,119,180)"),
        ("Death", &words.death, "rgb(214,39,40)"),
    ] {
        let _ = writeln!(h, "<div class=\"col\">\n<h2>{name}</h2>\n<ul>");
        for w in list.iter().take(top) {
            let _ = writeln!(
                h,
                "<li style=\"font-size:{:.1}px;color:{color}\" title=\"{:.6e} over {} occurrences\">{}</li>",
                size(w.value),
                w.value,
                w.count,
                escape(&w.word)
            );
        }
        h.push_str("</ul>\n</div>\n");
    }
    if let Some(p) = provenance {
        let _ = writeln!(
            h,
            "<script type=\"application/json\" id=\"provenance\">{}</script>",
            embeddable_json(p)
        );
    }
    h.push_str("</body>\n</html>\n");
    h
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
}

fn svg_comment_json(out: &mut String, provenance: Option<&serde_json::Value>) {
    if let Some(p) = provenance {
        let _ = writeln!(out, "<desc id=\"provenance\">{}</desc>", escape(&embeddable_json(p)));
    }
}

/// Bar chart of padding attributions.
pub fn histogram_svg(stats: &PaddingStats, provenance: Option<&serde_json::Value>) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let bins = stats.counts.len().max(1);
    let max = stats.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = pw / bins as f64;
    let mut s = String::new();
    svg_open(&mut s, "Attributions at padding positions");
    svg_comment_json(&mut s, provenance);
    for (i, &c) in stats.counts.iter().enumerate() {
        let bh = ph * c as f64 / max;
        let x = LEFT + bw * i as f64;
        let mid = (stats.edges[i] + stats.edges[i + 1]) / 2.0;
        let fill = if mid < 0.0 { "rgb(31,119,180)" } else { "rgb(214,39,40)" };
        let _ = writeln!(
            s,
            "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{fill}\"><title>{c}</title></rect>",
            TOP + ph - bh,
            bw.max(0.5)
        );
    }
    let base = TOP + ph;
    let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>", LEFT + pw);
    let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{base}\" stroke=\"black\"/>");
    let every = stats.edges.len().div_ceil(16).max(1);
    for (i, e) in stats.edges.iter().enumerate() {
        if i % every != 0 && i + 1 != stats.edges.len() {
            continue;
        }
        let x = LEFT + bw * i as f64;
        let _ = writeln!(
            s,
            "<text class=\"edge\" transform=\"translate({x:.2},{:.2}) rotate(45)\">{e:.2e}</text>",
            base + 12.0
        );
    }
    for frac in [0.0, 0.5, 1.0] {
        let y = TOP + ph * (1.0 - frac);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            (max * frac).round()
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">Attribution at padding positions</text>",
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text transform=\"translate(16,{:.2}) rotate(-90)\" text-anchor=\"middle\">Count</text>",
        TOP + ph / 2.0
    );
    let _ = writeln!(
        s,
        "<text class=\"share\" x=\"{:.2}\" y=\"24\" text-anchor=\"end\">share negative (survival): {:.3} of {}</text>",
        W - RIGHT,
        stats.share_negative,
        stats.n_values
    );
    s.push_str("</svg>\n");
    s
}

/// ROC curves, one polyline per labelled curve, with the chance diagonal.
pub fn roc_svg(curves: &[(String, RocCurve)], provenance: Option<&serde_json::Value>) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let side = (H - TOP - BOTTOM).min(W - LEFT - RIGHT - 200.0);
    let px = |x: f64| LEFT + side * x;
    let py = |y: f64| TOP + side * (1.0 - y);
    let mut s = String::new();
    svg_open(&mut s, "ROC curves");
    svg_comment_json(&mut s, provenance);
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{side}\" height=\"{side}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline class=\"roc\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{} (AUC {:.4})</text>",
            px(1.0) + 12.0,
            TOP + 14.0 + 16.0 * i as f64,
            escape(label),
            c.auc
        );
    }
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{t:.1}</text>", px(t), py(0.0) + 16.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{t:.1}</text>", px(0.0) - 6.0, py(t) + 4.0);
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">False positive rate</text>",
        px(0.5),
        py(0.0) + 36.0
    );
    let _ = writeln!(
        s,
        "<text transform=\"translate(24,{:.2}) rotate(-90)\" text-anchor=\"middle\">True positive rate</text>",
        py(0.5)
    );
    s.push_str("</svg>\n");
    s
}
