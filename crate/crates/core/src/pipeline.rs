//! Dataset-scale synthesis: for every (image, mask) sample, draw a series of
//! random region motions, smooth them, warp the image and mask, and write
//! frames, masks, `.flo` files and flow visualizations plus a manifest.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! <sample_id>/frame_0000.png   original image
//! <sample_id>/mask_0000.png    original mask
//! <sample_id>/frame_XXXX.png   synthesized frame, XXXX = 0001..=frames_per_image
//! <sample_id>/mask_XXXX.png    warped mask
//! <sample_id>/flow_XXXX.flo    flow that produced frame XXXX from frame 0000
//! <sample_id>/flowvis_XXXX.png color rendering of the flow
//! manifest.json
//! ```
//!
//! Every output is a pure function of the inputs and the configuration; the
//! thread count only changes wall time.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flowio::{flow_to_color, write_flo};
use crate::flowsynth::{
    assemble_energy, init_region_motion, rasterize_flow, solve_flow, PixelFlowField, RegionFlowField,
    RegionFlowInit, SolverConfig,
};
use crate::imgcore::{
    load_image, load_mask, rgb_to_lab, save_image, save_mask, GrayMask, RasterImage, DEFAULT_MASK_THRESHOLD,
};
use crate::metrics::images_by_stem;
use crate::superpix::{
    boundary_overlay, build_adjacency, classify_regions, oversegment, region_stats, save_label_map,
    RegionClass, RegionGraph, RegionStats, Segmentation, SlicParams,
};
use crate::warp::{warp_image, warp_mask};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub frames_per_image: usize,
    pub seed_fraction: f64,
    pub superpixels: SlicParams,
    /// σ in `exp(-‖ΔC‖² / σ²)`.
    pub color_scale: f64,
    pub solver: SolverConfig,
    pub mask_threshold: u8,
    /// Worker threads; 0 means one per available core.
    pub thread_count: usize,
    pub output_dir: PathBuf,
    /// Also write `superpixels.png` (16-bit labels) and `boundaries.png`.
    pub debug_superpixels: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            frames_per_image: 10,
            seed_fraction: 0.1,
            superpixels: SlicParams::default(),
            color_scale: 1.0,
            solver: SolverConfig::default(),
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            thread_count: 0,
            output_dir: PathBuf::from("out"),
            debug_superpixels: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_image < 1 {
            return Err(Error::InvalidArgument("frames_per_image must be at least 1".into()));
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "seed_fraction {} outside (0, 1]",
                self.seed_fraction
            )));
        }
        if !(self.color_scale > 0.0) {
            return Err(Error::InvalidArgument("color_scale must be positive".into()));
        }
        if self.superpixels.target_regions < 2 || !(self.superpixels.compactness > 0.0) {
            return Err(Error::InvalidArgument(
                "superpixel target must be >= 2 and compactness positive".into(),
            ));
        }
        if !(self.solver.tolerance > 0.0) || self.solver.max_iter_factor == 0 {
            return Err(Error::InvalidArgument("invalid solver settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    #[serde(alias = "sample_id")]
    pub id: String,
    #[serde(alias = "image_path")]
    pub image: PathBuf,
    #[serde(alias = "mask_path")]
    pub mask: PathBuf,
}

fn validate_ids(samples: &[SampleSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in samples {
        if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
            return Err(Error::Dataset(format!("invalid sample id {:?}", s.id)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Dataset(format!("duplicate sample id {:?}", s.id)));
        }
    }
    Ok(())
}

/// Reads a dataset index. `.json` files hold an array of
/// `{"id", "image", "mask"}` objects; anything else is plain text with one
/// `id image mask` row per line (tab-separated if the line has tabs,
/// whitespace-separated otherwise; `#` starts a comment). Relative paths are
/// resolved against the index file's directory.
pub fn load_index(path: impl AsRef<Path>) -> Result<Vec<SampleSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut samples: Vec<SampleSpec> = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?
    } else {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = if line.contains('\t') {
                line.split('\t').map(str::trim).collect()
            } else {
                line.split_whitespace().collect()
            };
            if fields.len() != 3 {
                return Err(Error::Dataset(format!(
                    "{}:{}: expected `id image mask`, got {} fields",
                    path.display(),
                    n + 1,
                    fields.len()
                )));
            }
            rows.push(SampleSpec {
                id: fields[0].to_string(),
                image: PathBuf::from(fields[1]),
                mask: PathBuf::from(fields[2]),
            });
        }
        rows
    };
    for s in &mut samples {
        if s.image.is_relative() {
            s.image = base.join(&s.image);
        }
        if s.mask.is_relative() {
            s.mask = base.join(&s.mask);
        }
    }
    validate_ids(&samples)?;
    Ok(samples)
}

/// Pairs `<root>/images/<stem>.*` with `<root>/masks/<stem>.*`. Images
/// without a mask are left out with a warning.
pub fn scan_dataset_dir(root: impl AsRef<Path>) -> Result<Vec<SampleSpec>> {
    let root = root.as_ref();
    let images = images_by_stem(&root.join("images"))?;
    let masks = images_by_stem(&root.join("masks"))?;
    let mut samples = Vec::new();
    for (stem, image) in images {
        match masks.get(&stem) {
            Some(mask) => samples.push(SampleSpec {
                id: stem,
                image,
                mask: mask.clone(),
            }),
            None => log::warn!("{}: no mask for image {stem}", root.display()),
        }
    }
    validate_ids(&samples)?;
    Ok(samples)
}

/// Per-frame RNG seed: the first 8 bytes (little-endian) of
/// SHA-256(master_seed ‖ len(sample_id) ‖ sample_id ‖ frame_index).
pub fn frame_seed(master_seed: u64, sample_id: &str, frame_index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((sample_id.len() as u64).to_le_bytes());
    hasher.update(sample_id.as_bytes());
    hasher.update((frame_index as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Everything about a sample that does not depend on the frame seed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub image: RasterImage,
    pub mask: GrayMask,
    pub segmentation: Segmentation,
    pub stats: RegionStats,
    pub graph: RegionGraph,
    pub classes: RegionClass,
}

impl PreparedSample {
    pub fn new(image: RasterImage, mask: GrayMask, params: &SlicParams) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::dims(image.dims(), mask.dims()));
        }
        let (h, w) = image.dims();
        let lab = rgb_to_lab(&image);
        let target = params.target_regions.clamp(2, (h * w).max(2));
        let segmentation = oversegment(&lab, target, params.compactness, params.max_iters)?;
        let stats = region_stats(&segmentation, &lab)?;
        let graph = build_adjacency(&segmentation);
        let classes = classify_regions(&segmentation, &mask)?;
        Ok(Self {
            image,
            mask,
            segmentation,
            stats,
            graph,
            classes,
        })
    }
}

/// One synthesized frame, held in memory.
#[derive(Debug, Clone)]
pub struct FrameSynthesis {
    pub init: RegionFlowInit,
    pub graph: RegionGraph,
    pub field: RegionFlowField,
    pub flow: PixelFlowField,
    pub frame: RasterImage,
    pub mask: GrayMask,
}

pub fn synthesize_frame(prep: &PreparedSample, seed: u64, config: &PipelineConfig) -> Result<FrameSynthesis> {
    let (init, graph) = init_region_motion(
        &prep.classes,
        &prep.graph,
        prep.image.height(),
        config.seed_fraction,
        seed,
    )?;
    let system = assemble_energy(&init, &prep.classes, &graph, &prep.stats, config.color_scale)?;
    let field = solve_flow(&system, &init, &config.solver)?;
    let flow = rasterize_flow(&field, &prep.segmentation)?;
    let frame = warp_image(&prep.image, &flow)?;
    let mask = warp_mask(&prep.mask, &flow)?;
    Ok(FrameSynthesis {
        init,
        graph,
        field,
        flow,
        frame,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub seed: u64,
    pub region_count: usize,
    pub foreground_regions: usize,
    pub seed_regions: usize,
    pub main_motion: [f64; 2],
    pub initial_energy: f64,
    pub achieved_energy: f64,
    pub solver_iterations: usize,
    pub wall_time_ms: f64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub height: usize,
    pub width: usize,
    pub region_count: usize,
    pub foreground_regions: usize,
    pub files: Vec<FileEntry>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub samples: usize,
    pub skipped: usize,
    /// Synthesized frame pairs (one per frame index ≥ 1).
    pub pairs: usize,
    /// Frames written, originals included.
    pub frames: usize,
    pub elapsed_seconds: f64,
    pub frames_per_second: f64,
    pub pairs_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub flow: String,
    pub flow_storage: String,
    pub seed_derivation: String,
    pub layout: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            flow: "backward: frame_XXXX(x) = frame_0000(x + flow_XXXX(x)); u horizontal (columns), v vertical (rows)"
                .into(),
            flow_storage: "Middlebury .flo, float32 little-endian; solved in float64 and narrowed on write".into(),
            seed_derivation: "first 8 bytes LE of SHA-256(master_seed u64 LE | len(sample_id) u64 LE | sample_id | frame_index u64 LE), ChaCha8 stream".into(),
            layout: "<sample_id>/{frame,mask}_0000.png originals; frame_XXXX.png, mask_XXXX.png, flow_XXXX.flo, flowvis_XXXX.png for XXXX = 0001..frames_per_image".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub format_version: u32,
    pub generator: String,
    pub config: PipelineConfig,
    pub conventions: Conventions,
    pub samples: Vec<SampleRecord>,
    pub skipped: Vec<SkippedSample>,
    pub totals: Totals,
}

impl GenerationManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Every file the manifest lists, with its recorded byte length.
    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.samples.iter().flat_map(|s| {
            s.files
                .iter()
                .chain(s.frames.iter().flat_map(|f| f.files.iter()))
        })
    }

    /// Checks that every listed file exists under `root` with the recorded
    /// length, and that no other files sit in the sample directories.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let mut listed = BTreeSet::new();
        for entry in self.files() {
            let path = root.join(&entry.path);
            let len = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
            if len != entry.bytes {
                return Err(Error::Dataset(format!(
                    "{}: manifest says {} bytes, found {len}",
                    entry.path, entry.bytes
                )));
            }
            listed.insert(path);
        }
        for sample in &self.samples {
            let dir = root.join(&sample.sample_id);
            for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if !listed.contains(&path) {
                    return Err(Error::Dataset(format!("unlisted file {}", path.display())));
                }
            }
        }
        Ok(())
    }
}

fn relative(sample_id: &str, name: &str) -> String {
    format!("{sample_id}/{name}")
}

fn file_entry(dir: &Path, sample_id: &str, name: &str) -> Result<FileEntry> {
    let path = dir.join(name);
    let bytes = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
    Ok(FileEntry {
        path: relative(sample_id, name),
        bytes,
    })
}

fn write_frame(dir: &Path, spec: &SampleSpec, prep: &PreparedSample, index: usize, config: &PipelineConfig) -> Result<FrameRecord> {
    let start = Instant::now();
    let seed = frame_seed(config.master_seed, &spec.id, index);
    let synth = synthesize_frame(prep, seed, config)?;
    let names = [
        format!("frame_{index:04}.png"),
        format!("mask_{index:04}.png"),
        format!("flow_{index:04}.flo"),
        format!("flowvis_{index:04}.png"),
    ];
    save_image(&synth.frame, dir.join(&names[0]))?;
    save_mask(&synth.mask, dir.join(&names[1]))?;
    write_flo(&synth.flow, dir.join(&names[2]))?;
    save_image(&flow_to_color(&synth.flow, None), dir.join(&names[3]))?;
    let files = names
        .iter()
        .map(|n| file_entry(dir, &spec.id, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameRecord {
        frame_index: index,
        seed,
        region_count: prep.segmentation.region_count(),
        foreground_regions: prep.classes.foreground().count(),
        seed_regions: synth.init.seed_set.len(),
        main_motion: synth.init.main_motion,
        initial_energy: synth.field.initial_energy,
        achieved_energy: synth.field.achieved_energy,
        solver_iterations: synth.field.iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        files,
    })
}

/// Runs the full synthesis for one sample and writes its directory.
pub fn generate_sample(spec: &SampleSpec, config: &PipelineConfig) -> Result<SampleRecord> {
    config.validate()?;
    let image = load_image(&spec.image)?;
    let mask = load_mask(&spec.mask, config.mask_threshold)?;
    let prep = PreparedSample::new(image, mask, &config.superpixels)?;

    let dir = config.output_dir.join(&spec.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let result = (|| {
        save_image(&prep.image, dir.join("frame_0000.png"))?;
        save_mask(&prep.mask, dir.join("mask_0000.png"))?;
        let mut names = vec!["frame_0000.png", "mask_0000.png"];
        if config.debug_superpixels {
            save_label_map(&prep.segmentation, dir.join("superpixels.png"))?;
            save_image(
                &boundary_overlay(&prep.image, &prep.segmentation, [255, 0, 0])?,
                dir.join("boundaries.png"),
            )?;
            names.extend(["superpixels.png", "boundaries.png"]);
        }
        let files = names
            .iter()
            .map(|n| file_entry(&dir, &spec.id, n))
            .collect::<Result<Vec<_>>>()?;
        let frames = (1..=config.frames_per_image)
            .into_par_iter()
            .map(|k| write_frame(&dir, spec, &prep, k, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleRecord {
            sample_id: spec.id.clone(),
            image: spec.image.clone(),
            mask: spec.mask.clone(),
            height: prep.image.height(),
            width: prep.image.width(),
            region_count: prep.segmentation.region_count(),
            foreground_regions: prep.classes.foreground().count(),
            files,
            frames,
        })
    })();
    if result.is_err() {
        // Leave no partial sample behind; the manifest would not list it.
        let _ = fs::remove_dir_all(&dir);
    }
    result
}

fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".saliencyforge-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Processes every sample on a pool of `config.thread_count` workers and
/// writes `manifest.json`. Samples that fail are skipped and reported in the
/// manifest; the run itself only fails on configuration or output-directory
/// problems.
pub fn run_dataset(samples: &[SampleSpec], config: &PipelineConfig) -> Result<GenerationManifest> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to process".into()));
    }
    config.validate()?;
    validate_ids(samples)?;
    check_writable(&config.output_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.thread_count)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;

    let start = Instant::now();
    let results: Vec<(String, Result<SampleRecord>)> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| (s.id.clone(), generate_sample(s, config)))
            .collect()
    });
    let elapsed = start.elapsed().as_secs_f64();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (id, result) in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("skipping sample {id}: {e}");
                skipped.push(SkippedSample {
                    sample_id: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    skipped.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let pairs: usize = records.iter().map(|r| r.frames.len()).sum();
    let frames = pairs + records.len();
    let rate = |n: usize| if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 };
    let manifest = GenerationManifest {
        format_version: MANIFEST_VERSION,
        generator: format!("saliencyforge {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        conventions: Conventions::default(),
        totals: Totals {
            samples: records.len(),
            skipped: skipped.len(),
            pairs,
            frames,
            elapsed_seconds: elapsed,
            frames_per_second: rate(frames),
            pairs_per_second: rate(pairs),
        },
        samples: records,
        skipped,
    };
    manifest.write(config.output_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
