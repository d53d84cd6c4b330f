//! End-to-end orchestration: seed, encode, transfer, decode, agglomerate,
//! and write results, processing the stack in a sliding z-window.
//!
//! The pipeline never materializes a whole stack. Sections stream through
//! bounded windows (at most 2W+2 resident sections per kind: elevation,
//! seeds, ground truth, in-flight predictions), so peak section residency is
//! independent of stack depth. An instrumented meter records those peaks and
//! the run report exposes them.
//!
//! Output layout under `output_dir`: `seeds.vol`, `segmentation.vol`,
//! `codebook.txt`, `edges.tsv`, `report.json`, plus `gt.vol` and
//! `elevation.vol` when the input is synthesized inline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::agglomeration::{merge_components, overlap_edges, resolve_orphans, MergeConfig, OverlapEdge};
use crate::encoding::{build_codebook, min_digits, DecodePolicy};
use crate::error::{Error, Result};
use crate::seeding::{seed_section, SeedConfig};
use crate::synthgen::{GenConfig, SynthModel};
use crate::transfer::{
    cross_classify, CountingClassifier, DigitClassifier, GeodesicClassifier, OracleClassifier,
    TransferContext,
};
use crate::volume::{Dims, Dtype, Grid, StackReader, StackWriter};

// ── Configuration ─────────────────────────────────────────────────────────────

/// Input selection: exactly one of an elevation file or an inline generator.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<GenConfig>,
}

/// Codebook parameters; k defaults to min_digits(N, l) + redundancy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub alphabet_size: u8,
    pub redundancy: u8,
    /// Explicit codeword length override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<u8>,
    pub rng_seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            alphabet_size: 4,
            redundancy: 1,
            digits: None,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicParams {
    pub cutoff: f64,
}

fn default_workers() -> usize {
    1
}

fn default_decode() -> DecodePolicy {
    DecodePolicy::Strict
}

/// Full pipeline configuration (JSON; unknown keys are errors).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    /// Optional precomputed seed labels (VOL1); bypasses the seeding stage
    /// and admits 3-D masks whose labels span sections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<PathBuf>,
    #[serde(default)]
    pub seed_config: SeedConfig,
    #[serde(default)]
    pub codebook: CodebookConfig,
    /// "oracle" or "geodesic".
    pub classifier: String,
    #[serde(default)]
    pub classifier_params: serde_json::Value,
    #[serde(default = "default_decode")]
    pub decode: DecodePolicy,
    #[serde(default)]
    pub merge: MergeConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad pipeline config: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        PipelineConfig::from_json(&text)
    }

    fn validate(&self) -> Result<ParsedClassifier> {
        match (&self.input.elevation, &self.input.synth) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "input must name exactly one of `elevation` or `synth`".into(),
                ))
            }
        }
        self.seed_config.validate()?;
        self.merge.validate()?;
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.codebook.alphabet_size < 2 {
            return Err(Error::Config("alphabet size must be >= 2".into()));
        }
        let parsed = match self.classifier.as_str() {
            "oracle" => {
                if self.input.synth.is_none() {
                    return Err(Error::Config(
                        "oracle classifier requires synth input (it needs ground truth)".into(),
                    ));
                }
                let params: OracleParams = if self.classifier_params.is_null() {
                    OracleParams::default()
                } else {
                    parse_params(&self.classifier_params)?
                };
                ParsedClassifier::Oracle(params)
            }
            "geodesic" => {
                let params: GeodesicParams = parse_params(&self.classifier_params)?;
                if params.cutoff < 0.0 {
                    return Err(Error::Config("geodesic cutoff must be >= 0".into()));
                }
                ParsedClassifier::Geodesic(params)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown classifier `{other}` (expected oracle or geodesic)"
                )))
            }
        };
        Ok(parsed)
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(value: &serde_json::Value) -> Result<T> {
    serde_json::from_value(value.clone())
        .map_err(|e| Error::Config(format!("bad classifier params: {e}")))
}

#[derive(Debug, Clone, Copy)]
enum ParsedClassifier {
    Oracle(OracleParams),
    Geodesic(GeodesicParams),
}

// ── Residency accounting ──────────────────────────────────────────────────────

/// Kinds of section-sized buffers the pipeline keeps resident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Elevation = 0,
    Seeds = 1,
    GroundTruth = 2,
    Prediction = 3,
}

/// Counts live section buffers per kind and records the peaks.
#[derive(Debug, Default)]
pub struct ResidencyMeter {
    live: [AtomicI64; 4],
    peak: [AtomicI64; 4],
}

impl ResidencyMeter {
    pub fn acquire(self: &Arc<Self>, kind: SectionKind) -> SectionLease {
        let i = kind as usize;
        let now = self.live[i].fetch_add(1, Ordering::SeqCst) + 1;
        self.peak[i].fetch_max(now, Ordering::SeqCst);
        SectionLease {
            meter: Arc::clone(self),
            kind,
        }
    }

    pub fn peak(&self, kind: SectionKind) -> usize {
        self.peak[kind as usize].load(Ordering::SeqCst).max(0) as usize
    }
}

/// RAII guard for one resident section buffer.
pub struct SectionLease {
    meter: Arc<ResidencyMeter>,
    kind: SectionKind,
}

impl Drop for SectionLease {
    fn drop(&mut self) {
        self.meter.live[self.kind as usize].fetch_sub(1, Ordering::SeqCst);
    }
}

struct Leased<T> {
    grid: Grid<T>,
    _lease: SectionLease,
}

/// Sliding cache of consecutive sections; entries are metered.
struct Window<T> {
    kind: SectionKind,
    meter: Arc<ResidencyMeter>,
    entries: VecDeque<(usize, Arc<Leased<T>>)>,
}

impl<T: Copy> Window<T> {
    fn new(kind: SectionKind, meter: Arc<ResidencyMeter>) -> Window<T> {
        Window {
            kind,
            meter,
            entries: VecDeque::new(),
        }
    }

    fn evict_below(&mut self, z_lo: usize) {
        while self.entries.front().is_some_and(|(z, _)| *z < z_lo) {
            self.entries.pop_front();
        }
    }

    fn get(
        &mut self,
        z: usize,
        mut load: impl FnMut(usize) -> Result<Grid<T>>,
    ) -> Result<Arc<Leased<T>>> {
        if let Some((_, entry)) = self.entries.iter().find(|(ez, _)| *ez == z) {
            return Ok(Arc::clone(entry));
        }
        let lease = self.meter.acquire(self.kind);
        let grid = load(z)?;
        let entry = Arc::new(Leased {
            grid,
            _lease: lease,
        });
        self.entries.push_back((z, Arc::clone(&entry)));
        Ok(entry)
    }
}

// ── Sources ───────────────────────────────────────────────────────────────────

enum ElevSource {
    File(StackReader),
    Synth(Arc<SynthModel>),
}

impl ElevSource {
    fn load(&mut self, z: usize) -> Result<Grid<f32>> {
        match self {
            ElevSource::File(reader) => reader.read_scalar_section(z),
            ElevSource::Synth(model) => Ok(model.elev_section(z)),
        }
    }
}

// ── Run report ────────────────────────────────────────────────────────────────

/// Flat summary written to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub n_seeds: u32,
    pub k: u8,
    pub l: u8,
    pub classifier_calls: u64,
    pub n_components: u32,
    pub wall_ms: u64,
    /// Maximum resident section buffers over all kinds.
    pub peak_resident_sections: usize,
    pub peak_elevation_sections: usize,
    pub peak_seed_sections: usize,
    pub peak_gt_sections: usize,
    pub peak_prediction_sections: usize,
}

// ── Pipeline ──────────────────────────────────────────────────────────────────

/// Execute the full pipeline described by `cfg`. Returns the run report
/// (also written to `output_dir/report.json`).
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let classifier = cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, classifier))
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn run_inner(cfg: &PipelineConfig, classifier: ParsedClassifier) -> Result<RunReport> {
    let started = Instant::now();
    let meter = Arc::new(ResidencyMeter::default());

    let synth: Option<Arc<SynthModel>> = match &cfg.input.synth {
        Some(gen) => Some(Arc::new(stage("synth", SynthModel::build(gen))?)),
        None => None,
    };
    let mut elev_source = match (&cfg.input.elevation, &synth) {
        (Some(path), None) => ElevSource::File(stage(
            "input",
            StackReader::open(path).and_then(|r| {
                if r.dtype() != Dtype::F32 {
                    Err(Error::Config("elevation input must be an f32 stack".into()))
                } else {
                    Ok(r)
                }
            }),
        )?),
        (None, Some(model)) => ElevSource::Synth(Arc::clone(model)),
        _ => unreachable!("validated"),
    };
    let dims = match &elev_source {
        ElevSource::File(r) => r.dims(),
        ElevSource::Synth(m) => m.dims(),
    };

    std::fs::create_dir_all(&cfg.output_dir)?;
    let out = |name: &str| cfg.output_dir.join(name);

    // Stage 1: seeding (or normalization of precomputed seeds), streamed in
    // z order into seeds.vol. Also dumps gt/elevation for synth inputs.
    let mut seeds_writer = StackWriter::create(out("seeds.vol"), dims, Dtype::U32)?;
    let mut synth_writers = match &synth {
        Some(_) => Some((
            StackWriter::create(out("gt.vol"), dims, Dtype::U32)?,
            StackWriter::create(out("elevation.vol"), dims, Dtype::F32)?,
        )),
        None => None,
    };
    let mut precomputed = match &cfg.seeds {
        Some(path) => {
            let reader = stage("seeds", StackReader::open(path))?;
            if reader.dims() != dims {
                return Err(Error::ShapeMismatch(format!(
                    "precomputed seeds dims {:?} do not match input dims {:?}",
                    reader.dims(),
                    dims
                ))
                .in_stage("seeds"));
            }
            Some(reader)
        }
        None => None,
    };

    let mut section_of: Vec<usize> = Vec::new();
    let mut sizes: Vec<u64> = Vec::new();
    let mut compact: HashMap<u32, u32> = HashMap::new();
    let mut next_label = 0u32;
    for z in 0..dims.z {
        let seed_grid = match &mut precomputed {
            Some(reader) => {
                let _lease = meter.acquire(SectionKind::Seeds);
                let mut grid = stage("seeds", reader.read_label_section(z))?;
                for v in grid.values_mut() {
                    if *v == 0 {
                        continue;
                    }
                    let new = *compact.entry(*v).or_insert_with(|| {
                        next_label += 1;
                        section_of.push(z);
                        sizes.push(0);
                        next_label
                    });
                    sizes[new as usize - 1] += 1;
                    *v = new;
                }
                grid
            }
            None => {
                let _lease = meter.acquire(SectionKind::Elevation);
                let elev = stage("input", elev_source.load(z))?;
                let (mut grid, count) = seed_section(&elev, &cfg.seed_config);
                let mut local_sizes = vec![0u64; count as usize];
                for v in grid.values_mut() {
                    if *v != 0 {
                        local_sizes[*v as usize - 1] += 1;
                        *v += next_label;
                    }
                }
                for size in local_sizes {
                    section_of.push(z);
                    sizes.push(size);
                }
                next_label += count;
                grid
            }
        };
        stage("seeds", seeds_writer.append_label_section(&seed_grid))?;
        if let Some((gt_w, elev_w)) = &mut synth_writers {
            let model = synth.as_ref().expect("writers exist only for synth");
            let _lease = meter.acquire(SectionKind::GroundTruth);
            stage("synth", gt_w.append_label_section(&model.gt_section(z)))?;
            let _lease2 = meter.acquire(SectionKind::Elevation);
            stage("synth", elev_w.append_scalar_section(&model.elev_section(z)))?;
        }
    }
    stage("seeds", seeds_writer.finish())?;
    if let Some((gt_w, elev_w)) = synth_writers {
        stage("synth", gt_w.finish())?;
        stage("synth", elev_w.finish())?;
    }
    let n_seeds = next_label;
    let _ = section_of;

    // Stage 2: codebook.
    let l = cfg.codebook.alphabet_size;
    let (codebook, k) = if n_seeds == 0 {
        (None, 0u8)
    } else {
        let k = match cfg.codebook.digits {
            Some(k) => k,
            None => min_digits(n_seeds, l).saturating_add(cfg.codebook.redundancy),
        };
        let cb = stage(
            "codebook",
            build_codebook(n_seeds, l, k, cfg.codebook.rng_seed),
        )?;
        stage("codebook", cb.save(out("codebook.txt")))?;
        (Some(cb), k)
    };
    if codebook.is_none() {
        let mut f = std::fs::File::create(out("codebook.txt"))?;
        writeln!(f, "3C-CODEBOOK 0 {l} 0 {}", cfg.codebook.rng_seed)?;
    }

    // Stage 3: transfers and overlap edges, windowed over targets.
    let clf: CountingClassifier<Box<dyn DigitClassifier + Send + Sync>> = match classifier {
        ParsedClassifier::Oracle(p) => {
            CountingClassifier::new(Box::new(OracleClassifier::new(l, p.eta, p.rng_seed)))
        }
        ParsedClassifier::Geodesic(p) => {
            CountingClassifier::new(Box::new(GeodesicClassifier::new(p.cutoff)))
        }
    };
    let window = cfg.merge.window;
    let mut edges: Vec<OverlapEdge> = Vec::new();
    let mut n_pairs = 0u64;
    if let Some(cb) = &codebook {
        let mut seeds_reader = stage("transfer", StackReader::open(out("seeds.vol")))?;
        let mut seed_window: Window<u32> = Window::new(SectionKind::Seeds, Arc::clone(&meter));
        let mut gt_window: Window<u32> = Window::new(SectionKind::GroundTruth, Arc::clone(&meter));
        let mut elev_window: Window<f32> =
            Window::new(SectionKind::Elevation, Arc::clone(&meter));
        let needs_gt = matches!(classifier, ParsedClassifier::Oracle(_));
        let needs_elev = matches!(classifier, ParsedClassifier::Geodesic(_));

        for target_z in 0..dims.z {
            let lo = target_z.saturating_sub(window);
            let hi = (target_z + window).min(dims.z - 1);
            seed_window.evict_below(lo);
            gt_window.evict_below(lo);
            elev_window.evict_below(lo);

            let mut seed_sections: HashMap<usize, Arc<Leased<u32>>> = HashMap::new();
            let mut gt_sections: HashMap<usize, Arc<Leased<u32>>> = HashMap::new();
            for z in lo..=hi {
                seed_sections.insert(
                    z,
                    seed_window.get(z, |z| seeds_reader.read_label_section(z))?,
                );
                if needs_gt {
                    let model = synth.as_ref().expect("oracle requires synth");
                    gt_sections.insert(z, gt_window.get(z, |z| Ok(model.gt_section(z)))?);
                }
            }
            let elev_target = if needs_elev {
                Some(elev_window.get(target_z, |z| elev_source.load(z))?)
            } else {
                None
            };

            let sources: Vec<usize> = (lo..=hi).filter(|&z| z != target_z).collect();
            n_pairs += sources.len() as u64;
            let seeds_tgt = &seed_sections[&target_z];
            let pair_edges: Result<Vec<Vec<OverlapEdge>>> = sources
                .par_iter()
                .map(|&source_z| {
                    let ctx = TransferContext {
                        source_z,
                        target_z,
                        raw: None,
                        elev_target: elev_target.as_ref().map(|e| &e.grid),
                        gt_source: gt_sections.get(&source_z).map(|g| &g.grid),
                        gt_target: gt_sections.get(&target_z).map(|g| &g.grid),
                    };
                    let _lease = meter.acquire(SectionKind::Prediction);
                    let pred = cross_classify(
                        &seed_sections[&source_z].grid,
                        &ctx,
                        cb,
                        &clf,
                        cfg.decode,
                    )?;
                    overlap_edges(&pred, source_z, &seeds_tgt.grid, target_z)
                })
                .collect();
            for chunk in stage("transfer", pair_edges)? {
                edges.extend(chunk);
            }
        }
    }
    let classifier_calls = clf.calls();
    if classifier_calls != k as u64 * n_pairs {
        return Err(Error::InvariantViolation(format!(
            "classifier calls {classifier_calls} != k * pairs = {}",
            k as u64 * n_pairs
        )));
    }

    // Stage 4: agglomeration.
    let mut partition = merge_components(&sizes, &edges, cfg.merge.threshold);
    resolve_orphans(&mut partition, &edges, cfg.merge.min_component_size);
    let n_components = if n_seeds == 0 {
        0
    } else {
        partition.n_components()
    };

    // Stage 5: edge dump, deterministic order.
    {
        let mut sorted: Vec<&OverlapEdge> = edges.iter().collect();
        sorted.sort_unstable_by_key(|e| (e.src_z, e.dst_z, e.src_seed, e.dst_seed));
        let mut f = std::io::BufWriter::new(std::fs::File::create(out("edges.tsv"))?);
        for e in sorted {
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.src_z, e.src_seed, e.dst_z, e.dst_seed, e.overlap_pixels, e.weight
            )?;
        }
        f.flush()?;
    }

    // Stage 6: final segmentation, streamed through the partition map.
    {
        let ids = if n_seeds == 0 {
            Vec::new()
        } else {
            partition.compact_component_ids()
        };
        let mut seeds_reader = stage("finalize", StackReader::open(out("seeds.vol")))?;
        let mut writer = StackWriter::create(out("segmentation.vol"), dims, Dtype::U32)?;
        for z in 0..dims.z {
            let _lease = meter.acquire(SectionKind::Seeds);
            let mut grid = stage("finalize", seeds_reader.read_label_section(z))?;
            for v in grid.values_mut() {
                if *v != 0 {
                    *v = ids[*v as usize - 1];
                }
            }
            stage("finalize", writer.append_label_section(&grid))?;
        }
        stage("finalize", writer.finish())?;
    }

    let peaks = [
        meter.peak(SectionKind::Elevation),
        meter.peak(SectionKind::Seeds),
        meter.peak(SectionKind::GroundTruth),
        meter.peak(SectionKind::Prediction),
    ];
    let report = RunReport {
        n_seeds,
        k,
        l,
        classifier_calls,
        n_components,
        wall_ms: started.elapsed().as_millis() as u64,
        peak_resident_sections: peaks.iter().copied().max().unwrap_or(0),
        peak_elevation_sections: peaks[0],
        peak_seed_sections: peaks[1],
        peak_gt_sections: peaks[2],
        peak_prediction_sections: peaks[3],
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    std::fs::write(out("report.json"), json)?;
    Ok(report)
}
