//! Synthetic nursing-note corpora with planted outcome markers.
//!
//! Each patient gets one nursing note whose word count is log-normal with a
//! class-dependent mean (notes of patients who die are longer). With
//! probability `marker_strength` a note is "marked": a fraction `marker_rate`
//! of its words are replaced by class-specific marker words. The remaining
//! words are English stop-words (rate `stopword_rate`) or noise words drawn
//! uniformly from the generator vocabulary, markers included, so markers also
//! occur at a background rate of `1/vocab_size` per noise word.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, so a configuration
//! always produces the same bytes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{Category, Note, NoteStore, PatientRecord};
use crate::error::{Error, Result};
use crate::textpipe::StopwordList;

/// Words planted in notes of patients who die.
pub const DEATH_MARKERS: [&str; 5] = ["pressors", "asystole", "cmo", "anuric", "mottled"];
/// Words planted in notes of patients who survive.
pub const SURVIVAL_MARKERS: [&str; 5] = ["ambulating", "extubated", "tolerating", "oob", "transfer"];

// 2100-01-01T00:00:00Z, in keeping with date-shifted clinical exports.
const BASE_TIME: i64 = 4_102_444_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub positive_rate: f64,
    pub vocab_size: usize,
    pub mean_len_pos: f64,
    pub mean_len_neg: f64,
    pub marker_strength: f64,
    pub seed: u64,
    /// Log-scale standard deviation of note lengths.
    pub length_sigma: f64,
    /// Share of words that are English stop-words.
    pub stopword_rate: f64,
    /// Share of words replaced by markers in a marked note.
    pub marker_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 2000,
            positive_rate: 0.0978,
            vocab_size: 2000,
            mean_len_pos: 1430.6,
            mean_len_neg: 1233.3,
            marker_strength: 0.8,
            seed: 0,
            length_sigma: 0.45,
            stopword_rate: 0.35,
            marker_rate: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must lie in (0, 1)");
        }
        if self.vocab_size < DEATH_MARKERS.len() + SURVIVAL_MARKERS.len() {
            return bad("vocab_size must be at least 10 to hold the marker words");
        }
        if !(self.mean_len_pos >= 10.0 && self.mean_len_neg >= 10.0) {
            return bad("mean note lengths must be at least 10 words");
        }
        if !(0.0..=1.0).contains(&self.marker_strength) {
            return bad("marker_strength must lie in [0, 1]");
        }
        if !(self.length_sigma > 0.0 && self.length_sigma.is_finite()) {
            return bad("length_sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.stopword_rate) {
            return bad("stopword_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.marker_rate) {
            return bad("marker_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerToken {
    pub word: String,
    /// Index in the generator vocabulary.
    pub id: usize,
}

/// Ground truth for a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerReport {
    pub config: SynthConfig,
    pub death_markers: Vec<MarkerToken>,
    pub survival_markers: Vec<MarkerToken>,
    pub positives: usize,
    pub negatives: usize,
    pub marked_positive_notes: usize,
    pub marked_negative_notes: usize,
    pub planted_marker_words: usize,
}

/// Generates `cfg.n_patients` first-admission stays, each with one nursing
/// note charted within the first 48 hours.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(NoteStore, MarkerReport)> {
    cfg.validate()?;
    let stopwords = stopword_pool();
    let words = generator_vocabulary(cfg.vocab_size, &stopwords);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let log_mean = |mean: f64| mean.ln() - cfg.length_sigma * cfg.length_sigma / 2.0;
    let len_pos = LogNormal::new(log_mean(cfg.mean_len_pos), cfg.length_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let len_neg = LogNormal::new(log_mean(cfg.mean_len_neg), cfg.length_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;

    let n_markers = DEATH_MARKERS.len();
    let mut report = MarkerReport {
        config: cfg.clone(),
        death_markers: (0..n_markers)
            .map(|i| MarkerToken { word: words[i].clone(), id: i })
            .collect(),
        survival_markers: (0..n_markers)
            .map(|i| MarkerToken { word: words[n_markers + i].clone(), id: n_markers + i })
            .collect(),
        positives: 0,
        negatives: 0,
        marked_positive_notes: 0,
        marked_negative_notes: 0,
        planted_marker_words: 0,
    };

    let mut store = NoteStore::default();
    for i in 0..cfg.n_patients {
        let outcome = u8::from(rng.random_bool(cfg.positive_rate));
        let admit_time = BASE_TIME + rng.random_range(0..365 * 86_400);
        let los_hours = (rng.random_range(49.0..240.0f64) * 10.0).round() / 10.0;
        let age_years = f64::from(rng.random_range(18u32..=90));
        let dist = if outcome == 1 { &len_pos } else { &len_neg };
        let n_words = (dist.sample(&mut rng).round() as usize).max(5);
        let marked = rng.random_bool(cfg.marker_strength);
        let marker_base = if outcome == 1 { 0 } else { n_markers };
        if outcome == 1 {
            report.positives += 1;
            report.marked_positive_notes += usize::from(marked);
        } else {
            report.negatives += 1;
            report.marked_negative_notes += usize::from(marked);
        }

        let mut text = String::with_capacity(n_words * 8);
        let mut sentence_left = 0usize;
        for w in 0..n_words {
            let word: &str = if marked && rng.random_bool(cfg.marker_rate) {
                report.planted_marker_words += 1;
                &words[marker_base + rng.random_range(0..n_markers)]
            } else if rng.random_bool(cfg.stopword_rate) {
                stopwords.choose(&mut rng).expect("non-empty")
            } else {
                &words[rng.random_range(0..words.len())]
            };
            if w > 0 {
                text.push(' ');
            }
            if sentence_left == 0 {
                sentence_left = rng.random_range(6..15);
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    text.extend(first.to_uppercase());
                    text.push_str(chars.as_str());
                }
            } else {
                text.push_str(word);
            }
            sentence_left -= 1;
            if sentence_left == 0 || w + 1 == n_words {
                text.push('.');
            } else if rng.random_bool(0.05) {
                text.push(',');
            }
        }

        let chart_time = admit_time + rng.random_range(3600..47 * 3600);
        let category = if rng.random_bool(0.6) {
            Category::NursingOther
        } else {
            Category::Nursing
        };
        let patient_id = format!("P{:06}", i + 1);
        let stay_id = format!("S{:06}", i + 1);
        store.stays.push(PatientRecord {
            patient_id: patient_id.clone(),
            stay_id: stay_id.clone(),
            admit_time,
            los_hours,
            age_years,
            outcome,
            admission_ordinal: 1,
        });
        store.notes.push(Note {
            patient_id,
            stay_id,
            admit_time,
            chart_time,
            category,
            text,
        });
    }
    store.rows_read = store.notes.len();
    Ok((store, report))
}

fn stopword_pool() -> Vec<String> {
    let list = StopwordList::english();
    let mut words: Vec<String> = include_str!("../../data/stopwords_en.txt")
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && list.contains(w))
        .map(str::to_owned)
        .collect();
    words.sort();
    words
}

/// Marker words first (death, then survival), followed by pronounceable
/// noise words that collide with neither markers nor stop-words.
fn generator_vocabulary(size: usize, stopwords: &[String]) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "tr",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut words: Vec<String> = DEATH_MARKERS
        .iter()
        .chain(SURVIVAL_MARKERS.iter())
        .map(|w| w.to_string())
        .collect();
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
    seen.extend(stopwords.iter().cloned());
    let base = syllables.len();
    let mut n = 0usize;
    while words.len() < size {
        // three syllables, then four once the 3-syllable space is exhausted
        let mut k = n;
        let mut w = String::new();
        let parts = if n < base.pow(3) { 3 } else { 4 };
        for _ in 0..parts {
            w.push_str(&syllables[k % base]);
            k /= base;
        }
        n += 1;
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words.truncate(size);
    words
}
