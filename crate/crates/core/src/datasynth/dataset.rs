use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{validate_catalog, ClassSpec};
use super::raster::{apply_dropout, dropout_mask, rasterize, RasterImage};
use super::record::{summarize, NumericRecord, RingEdges};
use crate::error::{Error, Result};
use crate::numerics::rng::fnv1a64;
use crate::numerics::{Gaussian2, RngStream};
use crate::perception::{extract_stats, ExtractedStats};
use crate::textbridge::{generate_all, PromptTemplate, TextRequest, TextRole, TextSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dots_per_image: u32,
    /// Per-sample dot count varies uniformly by up to this many.
    pub dots_jitter: u32,
    pub extent: f64,
    pub canvas: usize,
    pub dot_radius: usize,
    pub ring_bands: usize,
    pub ring_outer: f64,
    pub dropout: f64,
    pub record_noise: f64,
    pub test_fraction: f64,
    pub augment: bool,
    /// Per-class axis correlation; empty means uncorrelated.
    pub correlation: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dots_per_image: 500,
            dots_jitter: 0,
            extent: 16.0,
            canvas: 128,
            dot_radius: 0,
            ring_bands: 16,
            ring_outer: 16.0,
            dropout: 0.15,
            record_noise: 0.1,
            test_fraction: 130.0 / 455.0,
            augment: true,
            correlation: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn rings(&self) -> Result<RingEdges> {
        RingEdges::uniform(self.ring_bands, self.ring_outer)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dots_per_image < 2 || self.dots_jitter + 2 > self.dots_per_image {
            return bad(format!("dots_per_image {} with jitter {}", self.dots_per_image, self.dots_jitter));
        }
        if self.canvas < 16 || !(self.extent > 0.0) {
            return bad(format!("canvas {} / extent {}", self.canvas, self.extent));
        }
        if self.ring_bands == 0 || !(self.ring_outer > 0.0) || self.ring_outer > self.extent * std::f64::consts::SQRT_2 {
            return bad(format!("ring edges up to {} do not fit extent {}", self.ring_outer, self.extent));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.record_noise >= 0.0) {
            return bad(format!("dropout {} / record_noise {}", self.dropout, self.record_noise));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {}", self.test_fraction));
        }
        if !self.correlation.is_empty() && self.correlation.len() != classes {
            return bad(format!("{} correlations for {classes} classes", self.correlation.len()));
        }
        if self.correlation.iter().any(|r| !(r.abs() <= 1.0)) {
            return bad("correlations must lie in [-1, 1]".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u32,
    pub label: usize,
    pub split: Split,
    pub provenance: Provenance,
    pub image: RasterImage,
    pub record: NumericRecord,
    pub vlm_text: String,
    pub llm_text: String,
}

impl Sample {
    pub fn image_path(&self) -> String {
        format!("images/{:05}.pgm", self.id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: Vec<ClassSpec>,
    pub seed: u64,
    pub config: SynthConfig,
    pub text_source: String,
    pub samples: Vec<Sample>,
}

/// How sample texts get produced.
pub struct TextPlan<'a> {
    pub source: &'a dyn TextSource,
    pub vlm_prompt: PromptTemplate,
    pub llm_prompt: PromptTemplate,
    pub max_in_flight: usize,
}

impl<'a> TextPlan<'a> {
    pub fn new(source: &'a dyn TextSource) -> Self {
        TextPlan {
            source,
            vlm_prompt: PromptTemplate::default_for(TextRole::Vlm),
            llm_prompt: PromptTemplate::default_for(TextRole::Llm),
            max_in_flight: 4,
        }
    }
}

pub fn sample_points(rng: &mut RngStream, spec: &ClassSpec, n: usize) -> Result<Vec<[f64; 2]>> {
    let g = Gaussian2::new(spec.mu, spec.sigma)?;
    Ok((0..n).map(|_| g.sample(rng)).collect())
}

/// Per-class test counts: floors of `count·fraction` topped up by largest
/// remainder so the total equals `round(Σcount·fraction)`. Ties go to the
/// lower class index.
pub fn stratified_test_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.partial_cmp(&fa).expect("finite quotas").then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(out.iter().sum());
    for &c in order.iter().cycle().take(counts.len() * 2) {
        if missing == 0 {
            break;
        }
        if out[c] < counts[c] {
            out[c] += 1;
            missing -= 1;
        }
    }
    out
}

struct Drawn {
    image: RasterImage,
    record: NumericRecord,
}

fn draw_sample(spec: &ClassSpec, seed: u64, id: u32, cfg: &SynthConfig, rings: &RingEdges) -> Result<Drawn> {
    let id = id as u64;
    let mut n = cfg.dots_per_image as i64;
    if cfg.dots_jitter > 0 {
        let j = cfg.dots_jitter as i64;
        n += RngStream::labeled(seed, "jitter", id).gen_range(-j..=j);
    }
    let points = sample_points(&mut RngStream::labeled(seed, "points", id), spec, n as usize)?;
    let mut record = summarize(&points, rings)?;
    if cfg.record_noise > 0.0 {
        let mut rng = RngStream::labeled(seed, "record-noise", id);
        let (a, b) = rng.standard_normal_pair();
        let (c, d) = rng.standard_normal_pair();
        record.mean[0] += cfg.record_noise * a;
        record.mean[1] += cfg.record_noise * b;
        record.std[0] = (record.std[0] + cfg.record_noise * c).abs();
        record.std[1] = (record.std[1] + cfg.record_noise * d).abs();
    }
    let erased = dropout_mask(&mut RngStream::labeled(seed, "dropout", id), points.len(), cfg.dropout);
    let kept = apply_dropout(&points, &erased);
    let (image, _) = rasterize(&kept, cfg.extent, cfg.canvas, cfg.canvas, cfg.dot_radius)?;
    Ok(Drawn { image, record })
}

/// Generates the full dataset; a pure function of its inputs.
pub fn build_dataset(catalog: &[ClassSpec], seed: u64, cfg: &SynthConfig, text: &TextPlan<'_>) -> Result<Dataset> {
    validate_catalog(catalog)?;
    cfg.validate(catalog.len())?;
    let rings = cfg.rings()?;
    let specs: Vec<ClassSpec> = catalog
        .iter()
        .map(|s| match cfg.correlation.get(s.class_id) {
            Some(&rho) => s.clone().with_correlation(rho),
            None => s.clone(),
        })
        .collect();

    let counts: Vec<usize> = {
        let mut c = vec![0; specs.len()];
        for s in &specs {
            c[s.class_id] = s.nominal_count;
        }
        c
    };
    let test_counts = stratified_test_counts(&counts, cfg.test_fraction);

    let mut samples = Vec::new();
    let mut next_id = 0u32;
    for spec in &specs {
        let ids: Vec<u32> = (next_id..next_id + spec.nominal_count as u32).collect();
        next_id += spec.nominal_count as u32;
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut RngStream::labeled(seed, "split", spec.class_id as u64));
        let test: Vec<u32> = shuffled[..test_counts[spec.class_id]].to_vec();
        for id in ids {
            let d = draw_sample(spec, seed, id, cfg, &rings)?;
            samples.push(Sample {
                id,
                label: spec.class_id,
                split: if test.contains(&id) { Split::Test } else { Split::Train },
                provenance: Provenance::Original,
                image: d.image,
                record: d.record,
                vlm_text: String::new(),
                llm_text: String::new(),
            });
        }
    }
    if cfg.augment {
        let train: Vec<(usize, usize)> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == Split::Train)
            .map(|(i, s)| (i, s.label))
            .collect();
        for (_, label) in train {
            let spec = specs.iter().find(|s| s.class_id == label).expect("label from catalog");
            let d = draw_sample(spec, seed, next_id, cfg, &rings)?;
            samples.push(Sample {
                id: next_id,
                label,
                split: Split::Train,
                provenance: Provenance::Augmented,
                image: d.image,
                record: d.record,
                vlm_text: String::new(),
                llm_text: String::new(),
            });
            next_id += 1;
        }
    }
    fill_texts(&mut samples, &rings, text)?;
    Ok(Dataset {
        catalog: specs,
        seed,
        config: cfg.clone(),
        text_source: text.source.identity(),
        samples,
    })
}

fn prompt_values(record: &NumericRecord, stats: &ExtractedStats) -> BTreeMap<&'static str, String> {
    let counts: Vec<String> = record.ring_counts.iter().map(|c| c.to_string()).collect();
    BTreeMap::from([
        ("mean_x", format!("{:.2}", record.mean[0])),
        ("mean_y", format!("{:.2}", record.mean[1])),
        ("std_x", format!("{:.2}", record.std[0])),
        ("std_y", format!("{:.2}", record.std[1])),
        ("ring_counts", counts.join(" ")),
        ("total_points", record.total_points.to_string()),
        ("lit_pixels", stats.lit_pixels.to_string()),
    ])
}

/// Generates describer and reasoner texts for every sample.
pub fn fill_texts(samples: &mut [Sample], rings: &RingEdges, plan: &TextPlan<'_>) -> Result<()> {
    let stats: Vec<ExtractedStats> = samples
        .iter()
        .map(|s| extract_stats(&s.image, rings))
        .collect::<Result<_>>()?;
    let mut prompts = Vec::with_capacity(samples.len() * 2);
    for (s, st) in samples.iter().zip(&stats) {
        let values = prompt_values(&s.record, st);
        prompts.push(plan.vlm_prompt.render(&values)?);
        prompts.push(plan.llm_prompt.render(&values)?);
    }
    let requests: Vec<TextRequest<'_>> = samples
        .iter()
        .zip(&stats)
        .enumerate()
        .flat_map(|(i, (s, st))| {
            [TextRole::Vlm, TextRole::Llm].into_iter().enumerate().map(move |(k, role)| (i, k, s, st, role))
        })
        .map(|(i, k, s, st, role)| TextRequest {
            role,
            prompt: &prompts[2 * i + k],
            sample_id: s.id,
            stats: st,
            record: &s.record,
            ring_edges: rings.edges(),
        })
        .collect();
    let texts = generate_all(plan.source, &requests, plan.max_in_flight)?;
    drop(requests);
    for (s, pair) in samples.iter_mut().zip(texts.chunks(2)) {
        s.vlm_text = pair[0].clone();
        s.llm_text = pair[1].clone();
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: u32,
    label: usize,
    split: Split,
    provenance: Provenance,
    image: String,
    ring_counts: Vec<u32>,
    out_of_range: u32,
    mean: [f64; 2],
    std: [f64; 2],
    total_points: u32,
    vlm_text: String,
    llm_text: String,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    classes: Vec<ClassSpec>,
    seed: u64,
    config: SynthConfig,
    config_hash: String,
    text_source: String,
}

impl Dataset {
    pub fn config_hash(&self) -> String {
        format!("{:016x}", self.config.hash())
    }

    pub fn rings(&self) -> Result<RingEdges> {
        self.config.rings()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn class_count(&self) -> usize {
        self.catalog.len()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let manifest_path = dir.join("manifest.jsonl");
        let mut manifest = Vec::new();
        for s in &self.samples {
            s.image.write_pgm(&dir.join(s.image_path()))?;
            let entry = ManifestEntry {
                id: s.id,
                label: s.label,
                split: s.split,
                provenance: s.provenance,
                image: s.image_path(),
                ring_counts: s.record.ring_counts.clone(),
                out_of_range: s.record.out_of_range,
                mean: s.record.mean,
                std: s.record.std,
                total_points: s.record.total_points,
                vlm_text: s.vlm_text.clone(),
                llm_text: s.llm_text.clone(),
            };
            serde_json::to_writer(&mut manifest, &entry)?;
            manifest.push(b'\n');
        }
        std::fs::File::create(&manifest_path)
            .and_then(|mut f| f.write_all(&manifest))
            .map_err(|e| Error::io(&manifest_path, e))?;
        let catalog = CatalogFile {
            classes: self.catalog.clone(),
            seed: self.seed,
            config: self.config.clone(),
            config_hash: self.config_hash(),
            text_source: self.text_source.clone(),
        };
        let path = dir.join("catalog.json");
        let text = serde_json::to_string_pretty(&catalog)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("catalog.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cat: CatalogFile =
            serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if cat.config_hash != format!("{:016x}", cat.config.hash()) {
            return Err(Error::Dataset(format!("{}: config hash mismatch", path.display())));
        }
        let path = dir.join("manifest.jsonl");
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut samples = Vec::new();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| Error::Dataset(format!("{}:{}: {err}", path.display(), line_no + 1)))?;
            if e.label >= cat.classes.len() {
                return Err(Error::Dataset(format!("sample {} has unknown label {}", e.id, e.label)));
            }
            let image = RasterImage::read_pgm(&dir.join(&e.image), cat.config.extent, cat.config.dot_radius)?;
            samples.push(Sample {
                id: e.id,
                label: e.label,
                split: e.split,
                provenance: e.provenance,
                image,
                record: NumericRecord {
                    ring_counts: e.ring_counts,
                    out_of_range: e.out_of_range,
                    mean: e.mean,
                    std: e.std,
                    total_points: e.total_points,
                },
                vlm_text: e.vlm_text,
                llm_text: e.llm_text,
            });
        }
        Ok(Dataset {
            catalog: cat.classes,
            seed: cat.seed,
            config: cat.config,
            text_source: cat.text_source,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_split_counts() {
        assert_eq!(stratified_test_counts(&[225, 92, 44, 50, 44], 130.0 / 455.0), vec![64, 26, 13, 14, 13]);
        assert_eq!(stratified_test_counts(&[4], 0.5), vec![2]);
        assert_eq!(stratified_test_counts(&[3, 3, 3], 0.5), vec![2, 2, 1]);
    }
}
