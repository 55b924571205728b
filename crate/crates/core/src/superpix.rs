//! SLIC oversegmentation, per-region statistics, the region adjacency graph
//! and the foreground/background split of regions.

use std::collections::BTreeSet;
use std::path::Path;

use image::ExtendedColorType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{write_png, GrayMask, LabImage, RasterImage};

/// Superpixel label map. Every label in `0..region_count` is used and every
/// region is 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl Segmentation {
    /// Builds a segmentation from an arbitrary label map. Labels are
    /// compacted to `0..K` in raster order of first appearance; regions are
    /// not required to be connected here (see [`Segmentation::is_connected`]).
    pub fn from_labels(height: usize, width: usize, labels: &[u32]) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "label map of {} entries does not match {height}x{width}",
                labels.len()
            )));
        }
        let max = *labels.iter().max().unwrap() as usize;
        let mut remap = vec![u32::MAX; max + 1];
        let mut next = 0u32;
        let labels = labels
            .iter()
            .map(|&l| {
                let slot = &mut remap[l as usize];
                if *slot == u32::MAX {
                    *slot = next;
                    next += 1;
                }
                *slot
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            region_count: next as usize,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col] as usize
    }

    /// True when every region forms a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let (_, sizes) = connected_components(self.height, self.width, &self.labels);
        sizes.len() == self.region_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub pixel_count: Vec<usize>,
    /// (row, col)
    pub centroid: Vec<[f64; 2]>,
    pub mean_color: Vec<[f64; 3]>,
}

impl RegionStats {
    pub fn len(&self) -> usize {
        self.pixel_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count.is_empty()
    }
}

/// Region adjacency graph over unordered pairs `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionGraph {
    pub region_count: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub clique_augmented: bool,
}

impl RegionGraph {
    pub fn new(region_count: usize) -> Self {
        Self {
            region_count,
            ..Default::default()
        }
    }

    /// Inserts the unordered edge {a, b}; self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Foreground,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionClass {
    pub classes: Vec<Class>,
}

impl RegionClass {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn is_foreground(&self, region: usize) -> bool {
        self.classes[region] == Class::Foreground
    }

    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(Class::Foreground)
    }

    pub fn background(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(Class::Background)
    }

    fn indices(&self, class: Class) -> impl Iterator<Item = usize> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == class)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub target_regions: usize,
    pub compactness: f64,
    pub max_iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            target_regions: 300,
            compactness: 10.0,
            max_iters: 10,
        }
    }
}

/// Grid dimensions (rows, cols) of the seed lattice. The product never
/// exceeds `target`.
fn seed_grid(height: usize, width: usize, target: usize) -> (usize, usize) {
    let step = ((height * width) as f64 / target as f64).sqrt();
    let mut nx = ((width as f64 / step).round() as usize).clamp(1, width);
    let mut ny = ((height as f64 / step).round() as usize).clamp(1, height);
    while nx * ny > target {
        if (nx >= ny && nx > 1) || ny == 1 {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    (ny, nx)
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    row: f64,
    col: f64,
}

/// SLIC superpixels: grid-seeded k-means in Lab+xy space, followed by a
/// connectivity pass that merges stray fragments into their largest
/// neighboring region. Deterministic; ties go to the lower cluster index.
pub fn oversegment(
    lab: &LabImage,
    target_regions: usize,
    compactness: f64,
    max_iters: usize,
) -> Result<Segmentation> {
    let (h, w) = lab.dims();
    let n = h * w;
    if target_regions < 2 || target_regions > n {
        return Err(Error::InvalidArgument(format!(
            "target_regions {target_regions} outside [2, {n}]"
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "compactness must be positive, got {compactness}"
        )));
    }

    let (ny, nx) = seed_grid(h, w, target_regions);
    let seeds = nx * ny;
    let step = (n as f64 / seeds as f64).sqrt();
    let spatial = (compactness / step).powi(2);
    let radius = step.ceil() as isize;

    let pixels = lab.data();
    let mut centers: Vec<Center> = Vec::with_capacity(seeds);
    for j in 0..ny {
        for i in 0..nx {
            let row = (j as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let col = (i as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let r = (row.round() as usize).min(h - 1);
            let c = (col.round() as usize).min(w - 1);
            centers.push(Center {
                lab: pixels[r * w + c],
                row,
                col,
            });
        }
    }

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..max_iters.max(1) {
        labels.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let r0 = (c.row.round() as isize - radius).max(0) as usize;
            let r1 = ((c.row.round() as isize + radius).min(h as isize - 1)).max(0) as usize;
            let c0 = (c.col.round() as isize - radius).max(0) as usize;
            let c1 = ((c.col.round() as isize + radius).min(w as isize - 1)).max(0) as usize;
            for r in r0..=r1 {
                let dr = r as f64 - c.row;
                let base = r * w;
                for col in c0..=c1 {
                    let p = pixels[base + col];
                    let dl = p[0] - c.lab[0];
                    let da = p[1] - c.lab[1];
                    let db = p[2] - c.lab[2];
                    let dc = col as f64 - c.col;
                    let d = dl * dl + da * da + db * db + (dr * dr + dc * dc) * spatial;
                    if d < dist[base + col] {
                        dist[base + col] = d;
                        labels[base + col] = k as u32;
                    }
                }
            }
        }
        // Pixels outside every search window fall back to a global search.
        for idx in 0..n {
            if labels[idx] == u32::MAX {
                let (r, col) = ((idx / w) as f64, (idx % w) as f64);
                let p = pixels[idx];
                let mut best = (f64::INFINITY, 0u32);
                for (k, c) in centers.iter().enumerate() {
                    let d = (0..3).map(|q| (p[q] - c.lab[q]).powi(2)).sum::<f64>()
                        + ((r - c.row).powi(2) + (col - c.col).powi(2)) * spatial;
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
                labels[idx] = best.1;
            }
        }

        let mut sums = vec![[0.0f64; 6]; seeds];
        for (idx, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            let p = pixels[idx];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (idx / w) as f64;
            s[4] += (idx % w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.row = s[3] / s[5];
                c.col = s[4] / s[5];
            }
        }
    }

    let min_size = (n / seeds / 4).max(1);
    let merged = enforce_connectivity(h, w, &labels, min_size);
    Segmentation::from_labels(h, w, &merged)
}

/// 4-connected components of a label map. Returns the component id per
/// pixel and the pixel count per component, ids in raster discovery order.
fn connected_components(h: usize, w: usize, labels: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let mut comp = vec![u32::MAX; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == label {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Keeps the largest fragment of each cluster and merges every other
/// fragment, and any fragment smaller than `min_size`, into the largest
/// adjacent region. Merged regions stay connected because only adjacent
/// groups are joined.
fn enforce_connectivity(h: usize, w: usize, labels: &[u32], min_size: usize) -> Vec<u32> {
    let (comp, sizes) = connected_components(h, w, labels);
    let ncomp = sizes.len();

    let mut comp_label = vec![0u32; ncomp];
    for (p, &c) in comp.iter().enumerate() {
        comp_label[c as usize] = labels[p];
    }
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut primary = vec![usize::MAX; max_label + 1];
    for c in 0..ncomp {
        let slot = &mut primary[comp_label[c] as usize];
        if *slot == usize::MAX || sizes[c] > sizes[*slot] {
            *slot = c;
        }
    }

    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
    for r in 0..h {
        for c in 0..w {
            let a = comp[r * w + c] as usize;
            if c + 1 < w {
                let b = comp[r * w + c + 1] as usize;
                if a != b {
                    adjacency[a].insert(b);
                    adjacency[b].insert(a);
                }
            }
            if r + 1 < h {
                let b = comp[(r + 1) * w + c] as usize;
                if a != b {
                    adjacency[a].insert(b);
                    adjacency[b].insert(a);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut group_size = sizes.clone();
    let mut members: Vec<Vec<usize>> = (0..ncomp).map(|c| vec![c]).collect();
    for c in 0..ncomp {
        let orphan = primary[comp_label[c] as usize] != c || sizes[c] < min_size;
        if !orphan || find(&mut parent, c) != c {
            continue;
        }
        let mut best: Option<usize> = None;
        for &m in &members[c] {
            for &nb in &adjacency[m] {
                let root = find(&mut parent, nb);
                if root == c {
                    continue;
                }
                best = match best {
                    Some(b)
                        if group_size[b] > group_size[root]
                            || (group_size[b] == group_size[root] && b < root) =>
                    {
                        Some(b)
                    }
                    _ => Some(root),
                };
            }
        }
        if let Some(target) = best {
            parent[c] = target;
            group_size[target] += group_size[c];
            let moved = std::mem::take(&mut members[c]);
            members[target].extend(moved);
        }
    }

    comp.iter()
        .map(|&c| find(&mut parent, c as usize) as u32)
        .collect()
}

pub fn region_stats(seg: &Segmentation, lab: &LabImage) -> Result<RegionStats> {
    if seg.dims() != lab.dims() {
        return Err(Error::dims(seg.dims(), lab.dims()));
    }
    let k = seg.region_count;
    let w = seg.width;
    let mut count = vec![0usize; k];
    let mut pos = vec![[0.0f64; 2]; k];
    let mut color = vec![[0.0f64; 3]; k];
    for (idx, (&l, p)) in seg.labels.iter().zip(lab.data()).enumerate() {
        let l = l as usize;
        count[l] += 1;
        pos[l][0] += (idx / w) as f64;
        pos[l][1] += (idx % w) as f64;
        for q in 0..3 {
            color[l][q] += p[q];
        }
    }
    for l in 0..k {
        let n = count[l] as f64;
        pos[l] = pos[l].map(|v| v / n);
        color[l] = color[l].map(|v| v / n);
    }
    Ok(RegionStats {
        pixel_count: count,
        centroid: pos,
        mean_color: color,
    })
}

/// Regions are adjacent iff some pair of 4-neighboring pixels carries their
/// two labels.
pub fn build_adjacency(seg: &Segmentation) -> RegionGraph {
    let (h, w) = seg.dims();
    let mut graph = RegionGraph::new(seg.region_count);
    for r in 0..h {
        for c in 0..w {
            let a = seg.label(r, c);
            if c + 1 < w {
                graph.add_edge(a, seg.label(r, c + 1));
            }
            if r + 1 < h {
                graph.add_edge(a, seg.label(r + 1, c));
            }
        }
    }
    graph
}

/// A region is foreground iff strictly more than half of its pixels are
/// salient.
pub fn classify_regions(seg: &Segmentation, mask: &GrayMask) -> Result<RegionClass> {
    if seg.dims() != mask.dims() {
        return Err(Error::dims(seg.dims(), mask.dims()));
    }
    let mut total = vec![0usize; seg.region_count];
    let mut salient = vec![0usize; seg.region_count];
    for (&l, &m) in seg.labels.iter().zip(mask.data()) {
        total[l as usize] += 1;
        salient[l as usize] += m as usize;
    }
    let classes = total
        .iter()
        .zip(&salient)
        .map(|(&t, &s)| {
            if 2 * s > t {
                Class::Foreground
            } else {
                Class::Background
            }
        })
        .collect();
    Ok(RegionClass { classes })
}

/// Debug output: labels as a 16-bit grayscale PNG.
pub fn save_label_map(seg: &Segmentation, path: impl AsRef<Path>) -> Result<()> {
    if seg.region_count > u16::MAX as usize + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} regions do not fit a 16-bit label map",
            seg.region_count
        )));
    }
    let bytes: Vec<u8> = seg
        .labels
        .iter()
        .flat_map(|&l| (l as u16).to_be_bytes())
        .collect();
    write_png(
        path.as_ref(),
        seg.width,
        seg.height,
        &bytes,
        ExtendedColorType::L16,
    )
}

/// Copy of `img` with region boundary pixels painted in `color`.
pub fn boundary_overlay(img: &RasterImage, seg: &Segmentation, color: [u8; 3]) -> Result<RasterImage> {
    if img.dims() != seg.dims() {
        return Err(Error::dims(img.dims(), seg.dims()));
    }
    let (h, w) = seg.dims();
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            let l = seg.label(r, c);
            let edge = (c + 1 < w && seg.label(r, c + 1) != l)
                || (r + 1 < h && seg.label(r + 1, c) != l);
            if edge {
                out.set_pixel(r, c, color);
            }
        }
    }
    Ok(out)
}
