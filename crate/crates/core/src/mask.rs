//! Binary masks, connected-component labeling, and boundary tracing.
//!
//! Foreground regions use 8-connectivity and boundaries are traced with
//! Moore neighborhood following, a pairing that guarantees a closed cycle
//! on every 8-connected region. Arc length between consecutive boundary
//! pixels is the inter-pixel chord (1 for axial steps, sqrt(2) for
//! diagonal steps).

use std::f64::consts::SQRT_2;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    /// Region has fewer than 3 pixels or its traced boundary has fewer
    /// than 3 distinct pixels, so no closed contour exists.
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
}

/// Immutable H x W boolean grid; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask data must be height*width");
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Foreground pixels in raster order.
    pub fn foreground_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// One connected foreground region; `pixels` are in BFS discovery order
/// seeded from the raster-first pixel, so `pixels[0]` is the topmost,
/// then leftmost pixel of the region.
#[derive(Debug, Clone)]
pub struct Component {
    pub label: u32,
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// Labeling of a mask: a label grid (0 = background, labels are 1-based in
/// raster discovery order) plus the component list sorted by descending
/// pixel count (ties broken by smaller label).
#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per label, indexed by `label - 1`.
    pub fn sizes_by_label(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.components.len()];
        for comp in &self.components {
            sizes[(comp.label - 1) as usize] = comp.pixels.len();
        }
        sizes
    }
}

const NEIGHBORS_4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const NEIGHBORS_8: [(i64, i64); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Label connected foreground components.
///
/// Deterministic: seeds are discovered in raster order and each component
/// is flooded breadth-first with a fixed neighbor order. An empty mask
/// yields an empty component list.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut components: Vec<Component> = Vec::new();
    let neighbors: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &NEIGHBORS_4,
        Connectivity::Eight => &NEIGHBORS_8,
    };

    let mut queue = std::collections::VecDeque::new();
    for seed_r in 0..h {
        for seed_c in 0..w {
            if !mask.get(seed_r, seed_c) || labels[seed_r * w + seed_c] != 0 {
                continue;
            }
            let label = components.len() as u32 + 1;
            let mut pixels = Vec::new();
            labels[seed_r * w + seed_c] = label;
            queue.push_back((seed_r, seed_c));
            while let Some((r, c)) = queue.pop_front() {
                pixels.push((r, c));
                for &(dr, dc) in neighbors {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask.get(nr, nc) && labels[nr * w + nc] == 0 {
                        labels[nr * w + nc] = label;
                        queue.push_back((nr, nc));
                    }
                }
            }
            components.push(Component { label, pixels });
        }
    }

    components.sort_by(|a, b| {
        b.pixels.len().cmp(&a.pixels.len()).then(a.label.cmp(&b.label))
    });
    ComponentSet { height: h, width: w, labels, components }
}

/// Closed boundary of a region together with its arc-length
/// parameterization and radial (distance-to-centroid) samples.
///
/// Invariants, established by [`trace_contour`]:
/// * at least 3 points, consecutive points (and last to first) 8-adjacent;
/// * `arc_lengths[0] == 0`, strictly increasing, increments are the
///   inter-pixel chords;
/// * `total_length` = last arc length + closing chord;
/// * `radial[t]` = Euclidean distance from `centroid` to `points[t]`;
/// * `centroid` is the mean coordinate over all region pixels, not just
///   boundary pixels.
#[derive(Debug, Clone)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    pub arc_lengths: Vec<f64>,
    pub total_length: f64,
    pub centroid: (f64, f64),
    pub radial: Vec<f64>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The same cycle re-anchored so traversal starts at `offset`, with arc
    /// lengths re-accumulated from the new start. Radial samples rotate
    /// with the points; the centroid is unchanged.
    pub fn rotate_start(&self, offset: usize) -> Contour {
        let t = self.points.len();
        let offset = offset % t;
        let points: Vec<_> = (0..t).map(|i| self.points[(i + offset) % t]).collect();
        let radial: Vec<_> = (0..t).map(|i| self.radial[(i + offset) % t]).collect();
        let mut arc_lengths = Vec::with_capacity(t);
        arc_lengths.push(0.0);
        for i in 1..t {
            arc_lengths.push(arc_lengths[i - 1] + chord(points[i - 1], points[i]));
        }
        let total_length = arc_lengths[t - 1] + chord(points[t - 1], points[0]);
        Contour { points, arc_lengths, total_length, centroid: self.centroid, radial }
    }
}

#[inline]
fn chord(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    debug_assert!(dr <= 1 && dc <= 1 && dr + dc > 0, "chord between non-neighbors");
    if dr == 1 && dc == 1 {
        SQRT_2
    } else {
        1.0
    }
}

/// Local bitmap of a component over its bounding box with a 1-pixel
/// background margin, so neighbor tests never index out of bounds.
struct RegionBitmap {
    r0: i64,
    c0: i64,
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl RegionBitmap {
    fn new(pixels: &[(usize, usize)]) -> Self {
        let rmin = pixels.iter().map(|p| p.0).min().unwrap();
        let rmax = pixels.iter().map(|p| p.0).max().unwrap();
        let cmin = pixels.iter().map(|p| p.1).min().unwrap();
        let cmax = pixels.iter().map(|p| p.1).max().unwrap();
        let h = rmax - rmin + 3;
        let w = cmax - cmin + 3;
        let mut data = vec![false; h * w];
        for &(r, c) in pixels {
            data[(r - rmin + 1) * w + (c - cmin + 1)] = true;
        }
        Self { r0: rmin as i64 - 1, c0: cmin as i64 - 1, h, w, data }
    }

    #[inline]
    fn contains(&self, r: i64, c: i64) -> bool {
        let lr = r - self.r0;
        let lc = c - self.c0;
        if lr < 0 || lc < 0 || lr >= self.h as i64 || lc >= self.w as i64 {
            return false;
        }
        self.data[lr as usize * self.w + lc as usize]
    }
}

/// Moore neighborhood in clockwise order starting at north, in
/// row-down/column-right coordinates. Scanning clockwise from the
/// backtrack pixel yields a counterclockwise cycle in conventional
/// (y-up) orientation.
const MOORE: [(i64, i64); 8] =
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Trace the outer boundary of a component with Moore neighborhood
/// following, starting at its topmost-then-leftmost pixel.
///
/// Returns the boundary cycle (thin structures revisit pixels, which is
/// fine: consecutive points are always distinct 8-neighbors), the chord
/// arc lengths, the region centroid over all component pixels, and the
/// radial distance of every traced point from that centroid.
pub fn trace_contour(component: &Component) -> Result<Contour, GeometryError> {
    let pixels = &component.pixels;
    if pixels.len() < 3 {
        return Err(GeometryError::DegenerateRegion(format!(
            "component has {} pixel(s), need at least 3",
            pixels.len()
        )));
    }

    let bitmap = RegionBitmap::new(pixels);
    let start = *pixels
        .iter()
        .min_by_key(|&&(r, c)| (r, c))
        .expect("nonempty component");

    let points = moore_trace(&bitmap, (start.0 as i64, start.1 as i64));
    let distinct = {
        let mut seen = vec![false; bitmap.h * bitmap.w];
        let mut n = 0usize;
        for &(r, c) in &points {
            let idx = (r as i64 - bitmap.r0) as usize * bitmap.w + (c as i64 - bitmap.c0) as usize;
            if !seen[idx] {
                seen[idx] = true;
                n += 1;
            }
        }
        n
    };
    if points.len() < 3 || distinct < 3 {
        return Err(GeometryError::DegenerateRegion(format!(
            "traced boundary has {distinct} distinct pixel(s), need at least 3"
        )));
    }

    // Region centroid from exact integer coordinate sums.
    let n = pixels.len() as i64;
    let sum_r: i64 = pixels.iter().map(|p| p.0 as i64).sum();
    let sum_c: i64 = pixels.iter().map(|p| p.1 as i64).sum();
    let centroid = (sum_r as f64 / n as f64, sum_c as f64 / n as f64);

    // Radial samples via integer differences (n*r - sum_r is exact and
    // translation-invariant, so translated masks give bit-identical values).
    let radial: Vec<f64> = points
        .iter()
        .map(|&(r, c)| {
            let dr = (n * r as i64 - sum_r) as f64;
            let dc = (n * c as i64 - sum_c) as f64;
            (dr * dr + dc * dc).sqrt() / n as f64
        })
        .collect();

    let t = points.len();
    let mut arc_lengths = Vec::with_capacity(t);
    arc_lengths.push(0.0);
    for i in 1..t {
        arc_lengths.push(arc_lengths[i - 1] + chord(points[i - 1], points[i]));
    }
    let total_length = arc_lengths[t - 1] + chord(points[t - 1], points[0]);

    Ok(Contour { points, arc_lengths, total_length, centroid, radial })
}

/// Moore boundary following with the modified Jacob stopping criterion:
/// stop when the trace is at the start pixel and the next move would
/// repeat the initial move.
fn moore_trace(bitmap: &RegionBitmap, start: (i64, i64)) -> Vec<(usize, usize)> {
    let scan = |p: (i64, i64), back: (i64, i64)| -> Option<((i64, i64), (i64, i64))> {
        let db = (back.0 - p.0, back.1 - p.1);
        let i0 = MOORE.iter().position(|&d| d == db).expect("backtrack not adjacent");
        let mut prev = back;
        for k in 1..=8 {
            let d = MOORE[(i0 + k) % 8];
            let q = (p.0 + d.0, p.1 + d.1);
            if bitmap.contains(q.0, q.1) {
                return Some((q, prev));
            }
            prev = q;
        }
        None
    };

    let as_pt = |p: (i64, i64)| (p.0 as usize, p.1 as usize);
    let back0 = (start.0 - 1, start.1); // background: start is topmost-leftmost
    let mut points = vec![as_pt(start)];
    let Some((second, b1)) = scan(start, back0) else {
        return points; // isolated pixel
    };

    let mut p = second;
    let mut back = b1;
    let limit = 4 * bitmap.data.iter().filter(|&&v| v).count() + 8;
    loop {
        if p == start {
            let (next, _) = scan(p, back).expect("trace continues");
            if next == second {
                break;
            }
        }
        points.push(as_pt(p));
        let (next, nb) = scan(p, back).expect("trace continues");
        p = next;
        back = nb;
        assert!(points.len() <= limit, "boundary trace failed to close");
    }
    points
}

/// Connected pixel groups (8-connectivity) within an arbitrary pixel set,
/// each in deterministic discovery order. Used when peeling splits a
/// region into several parts.
pub fn partition_pixels(pixels: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    if pixels.is_empty() {
        return Vec::new();
    }
    let bitmap = RegionBitmap::new(pixels);
    let mut seen = vec![false; bitmap.h * bitmap.w];
    let local =
        |r: usize, c: usize| (r as i64 - bitmap.r0) as usize * bitmap.w + (c as i64 - bitmap.c0) as usize;

    let mut sorted: Vec<(usize, usize)> = pixels.to_vec();
    sorted.sort_unstable();

    let mut groups = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for &(sr, sc) in &sorted {
        if seen[local(sr, sc)] {
            continue;
        }
        seen[local(sr, sc)] = true;
        queue.push_back((sr as i64, sc as i64));
        let mut group = Vec::new();
        while let Some((r, c)) = queue.pop_front() {
            group.push((r as usize, c as usize));
            for &(dr, dc) in &NEIGHBORS_8 {
                let (nr, nc) = (r + dr, c + dc);
                if bitmap.contains(nr, nc) {
                    let idx = (nr - bitmap.r0) as usize * bitmap.w + (nc - bitmap.c0) as usize;
                    if !seen[idx] {
                        seen[idx] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
        groups.push(group);
    }
    groups
}
