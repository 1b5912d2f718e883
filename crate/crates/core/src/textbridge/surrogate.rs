//! Deterministic stand-ins for the describer and the reasoner. Every word
//! they can emit is listed here so the vocabulary is closed.

use rand::Rng;

use crate::datasynth::record::NumericRecord;
use crate::numerics::RngStream;
use crate::perception::ExtractedStats;

pub const SPREAD_TIGHT: f64 = 2.2;
pub const SPREAD_WIDE: f64 = 2.9;
pub const ANISO_LOW: f64 = 0.85;
pub const ANISO_HIGH: f64 = 1.18;
/// Offsets shorter than this are described as centered.
pub const CENTER_RADIUS: f64 = 1.0;
/// Typical per-axis std of a well-placed pattern.
pub const REFERENCE_STD: f64 = 1.9;
/// Radius splitting core from mid and mid from outer ring groups.
pub const RING_GROUPS: [f64; 2] = [2.0, 4.0];

const OPENERS: &[&str] = &["the image shows", "the picture contains", "we can see"];
const NOUNS: &[&str] = &["cluster", "cloud", "group"];
const SHIFTS: &[&str] = &["shifted toward the", "offset to the", "displaced to the"];
const COMPASS: [&str; 8] = [
    "east",
    "northeast",
    "north",
    "northwest",
    "west",
    "southwest",
    "south",
    "southeast",
];
const STRAGGLERS: &[&str] = &["few stragglers", "some stragglers", "many stragglers"];
const CENTER_WORDS: &[&str] = &["center", "mean"];
const SPREAD_WORDS: &[&str] = &["spread", "deviation"];
const VERDICT_WORDS: &[&str] = &["verdict", "assessment", "conclusion"];
const VERDICTS: [&str; 4] = [
    "low deviation close to reference",
    "low deviation but center drift",
    "high deviation around center",
    "high deviation with center drift",
];

/// Every word either surrogate can emit, for vocabulary building.
pub fn grammar_words() -> Vec<&'static str> {
    let fixed: &[&str] = &[
        "a", "of", "dots", "with", "centered", "tight", "moderate", "wide", "round", "elongated",
        "horizontally", "vertically", "x", "y", "rings", "core", "mid", "outer",
    ];
    let mut words: Vec<&'static str> = Vec::new();
    let pools: [&[&'static str]; 8] = [
        OPENERS,
        NOUNS,
        SHIFTS,
        &COMPASS,
        STRAGGLERS,
        CENTER_WORDS,
        SPREAD_WORDS,
        VERDICT_WORDS,
    ];
    for phrase in pools.iter().flat_map(|p| p.iter()).chain(VERDICTS.iter()).chain(fixed.iter()) {
        words.extend(phrase.split_whitespace());
    }
    words.sort_unstable();
    words.dedup();
    words
}

fn pick<'a>(rng: &mut RngStream, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

pub fn spread_bucket(std: [f64; 2]) -> &'static str {
    let s = 0.5 * (std[0] + std[1]);
    if s < SPREAD_TIGHT {
        "tight"
    } else if s < SPREAD_WIDE {
        "moderate"
    } else {
        "wide"
    }
}

pub fn shape_bucket(std: [f64; 2]) -> &'static str {
    let ratio = if std[1] > 0.0 { std[0] / std[1] } else { f64::INFINITY };
    if std[0] == 0.0 && std[1] == 0.0 {
        "round"
    } else if ratio < ANISO_LOW {
        "elongated vertically"
    } else if ratio > ANISO_HIGH {
        "elongated horizontally"
    } else {
        "round"
    }
}

/// `None` when the center lies within [`CENTER_RADIUS`].
pub fn compass(mean: [f64; 2]) -> Option<&'static str> {
    if mean[0].hypot(mean[1]) < CENTER_RADIUS {
        return None;
    }
    let turns = mean[1].atan2(mean[0]) / std::f64::consts::TAU;
    let sector = (turns * 8.0).round().rem_euclid(8.0) as usize;
    Some(COMPASS[sector])
}

pub fn surrogate_vlm_text(stats: &ExtractedStats, rng: &mut RngStream) -> String {
    let offset = match compass(stats.mean) {
        None => "centered".to_string(),
        Some(dir) => format!("{} {dir}", pick(rng, SHIFTS)),
    };
    let far: u32 = stats.ring_counts.iter().skip(8).sum::<u32>() + stats.out_of_range;
    let share = far as f64 / stats.detected.max(1) as f64;
    let stragglers = STRAGGLERS[if share < 0.01 {
        0
    } else if share < 0.05 {
        1
    } else {
        2
    }];
    format!(
        "{} a {} {} {} of dots {}, with {}.",
        pick(rng, OPENERS),
        spread_bucket(stats.std),
        shape_bucket(stats.std),
        pick(rng, NOUNS),
        offset,
        stragglers
    )
}

/// One decimal, never "-0.0".
pub fn numeral(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

pub fn count_bucket(c: u32) -> u32 {
    (c + 5) / 10 * 10
}

pub fn verdict(record_mean: [f64; 2], record_std: [f64; 2]) -> &'static str {
    let high = 0.5 * (record_std[0] + record_std[1]) > 1.2 * REFERENCE_STD;
    let drift = record_mean[0].hypot(record_mean[1]) >= CENTER_RADIUS;
    VERDICTS[2 * high as usize + drift as usize]
}

/// Ring counts summed into core, mid and outer groups; the outer group
/// includes points past the last edge.
pub fn ring_groups(record: &NumericRecord, edges: &[f64]) -> [u32; 3] {
    let mut g = [0u32; 3];
    for (k, &c) in record.ring_counts.iter().enumerate() {
        let lo = edges.get(k).copied().unwrap_or(f64::INFINITY);
        let idx = RING_GROUPS.iter().filter(|&&r| lo >= r).count();
        g[idx] += c;
    }
    g[2] += record.out_of_range;
    g
}

pub fn surrogate_llm_text(record: &NumericRecord, edges: &[f64], rng: &mut RngStream) -> String {
    let [core, mid, outer] = ring_groups(record, edges);
    format!(
        "{} x {} y {}, {} x {} y {}, rings core {} mid {} outer {}. {}: {}.",
        pick(rng, CENTER_WORDS),
        numeral(record.mean[0]),
        numeral(record.mean[1]),
        pick(rng, SPREAD_WORDS),
        numeral(record.std[0]),
        numeral(record.std[1]),
        count_bucket(core),
        count_bucket(mid),
        count_bucket(outer),
        pick(rng, VERDICT_WORDS),
        verdict(record.mean, record.std)
    )
}
