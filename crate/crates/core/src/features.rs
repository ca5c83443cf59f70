//! Harris corners, normalized patch descriptors and exact k-d tree
//! matching between consecutive frames.

use std::cmp::Ordering;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scene::PinholeCamera;

pub const HARRIS_K: f64 = 0.04;
pub const PATCH_SIZE: usize = 9;
pub const DESCRIPTOR_DIM: usize = PATCH_SIZE * PATCH_SIZE;

/// Corner location in pixel-index coordinates (pixel `(u, v)` covers
/// `[u, u+1) × [v, v+1)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub response: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub max_keypoints: usize,
    pub nms_radius: usize,
    pub ratio: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_keypoints: 200,
            nms_radius: 3,
            ratio: 0.8,
        }
    }
}

fn at(img: &Image, u: isize, v: isize) -> f64 {
    let u = u.clamp(0, img.width as isize - 1) as usize;
    let v = v.clamp(0, img.height as isize - 1) as usize;
    img.get(u, v, 0)
}

/// Harris response map with replicated borders.
pub fn harris_response(gray: &Image) -> Vec<f64> {
    let (w, h) = (gray.width, gray.height);
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for v in 0..h as isize {
        for u in 0..w as isize {
            let p = |du: isize, dv: isize| at(gray, u + du, v + dv);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = v as usize * w + u as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    const G: [f64; 3] = [0.25, 0.5, 0.25];
    let smooth = |m: &[f64], u: usize, v: usize| {
        let mut acc = 0.0;
        for (j, gj) in G.iter().enumerate() {
            for (i, gi) in G.iter().enumerate() {
                let uu = (u as isize + i as isize - 1).clamp(0, w as isize - 1) as usize;
                let vv = (v as isize + j as isize - 1).clamp(0, h as isize - 1) as usize;
                acc += gi * gj * m[vv * w + uu];
            }
        }
        acc
    };
    let mut r = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let (a, b, c) = (smooth(&ixx, u, v), smooth(&iyy, u, v), smooth(&ixy, u, v));
            r[v * w + u] = a * b - c * c - HARRIS_K * (a + b) * (a + b);
        }
    }
    r
}

/// `p` beats `q` on response, then on smaller `(v, u)`.
fn beats(rp: f64, p: (usize, usize), rq: f64, q: (usize, usize)) -> bool {
    match rp.partial_cmp(&rq) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => (p.1, p.0) < (q.1, q.0),
        _ => false,
    }
}

/// Quadratic peak offset from three samples, clamped to half a pixel.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    }
}

/// Harris corners after non-maximum suppression, strongest first
/// (ties by `(v, u)`), at most `max_k`, refined to sub-pixel accuracy.
pub fn detect_keypoints(image: &Image, max_k: usize, nms_radius: usize) -> Vec<Keypoint> {
    let gray = image.to_gray();
    let (w, h) = (gray.width, gray.height);
    if w < 3 || h < 3 || max_k == 0 {
        return Vec::new();
    }
    let r = harris_response(&gray);
    let peak = r.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-3 * peak).max(1e-12);
    let rad = nms_radius as isize;
    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let rp = r[v * w + u];
            if !(rp > floor) {
                continue;
            }
            let mut is_max = true;
            'nb: for dv in -rad..=rad {
                for du in -rad..=rad {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (uu, vv) = (u as isize + du, v as isize + dv);
                    if uu < 0 || vv < 0 || uu >= w as isize || vv >= h as isize {
                        continue;
                    }
                    let q = (uu as usize, vv as usize);
                    if !beats(rp, (u, v), r[q.1 * w + q.0], q) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                found.push((rp, u, v));
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    found.truncate(max_k);
    found
        .into_iter()
        .map(|(rp, u, v)| {
            let du = parabolic_offset(r[v * w + u - 1], rp, r[v * w + u + 1]);
            let dv = parabolic_offset(r[(v - 1) * w + u], rp, r[(v + 1) * w + u]);
            Keypoint {
                u: u as f64 + du,
                v: v as f64 + dv,
                response: rp,
            }
        })
        .collect()
}

fn bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0, 0) * (1.0 - fx) + img.get(x1, y0, 0) * fx;
    let bottom = img.get(x0, y1, 0) * (1.0 - fx) + img.get(x1, y1, 0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// 9×9 bilinear patch around the keypoint, mean-subtracted and
/// L2-normalized. Flat patches map to the constant unit vector.
pub fn describe(image: &Image, kp: &Keypoint) -> Descriptor {
    let gray = image.to_gray();
    let half = (PATCH_SIZE / 2) as f64;
    let mut values = Vec::with_capacity(DESCRIPTOR_DIM);
    for j in 0..PATCH_SIZE {
        for i in 0..PATCH_SIZE {
            values.push(bilinear(&gray, kp.u + i as f64 - half, kp.v + j as f64 - half));
        }
    }
    let mean = values.iter().sum::<f64>() / DESCRIPTOR_DIM as f64;
    values.iter_mut().for_each(|x| *x -= mean);
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        let c = 1.0 / (DESCRIPTOR_DIM as f64).sqrt();
        values.iter_mut().for_each(|x| *x = c);
    } else {
        values.iter_mut().for_each(|x| *x /= norm);
    }
    Descriptor { values }
}

pub fn extract(image: &Image, cfg: &FeatureConfig) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let kps = detect_keypoints(image, cfg.max_keypoints, cfg.nms_radius);
    let desc = kps.iter().map(|k| describe(image, k)).collect();
    (kps, desc)
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(usize),
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact nearest-neighbour index over fixed-dimension points.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    root: usize,
    dim: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn build(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return invalid("k-d tree needs at least one point");
        };
        let dim = first.len();
        if points.iter().any(|p| p.len() != dim) {
            return invalid("k-d tree points have ragged dimensions");
        }
        let mut tree = KdTree {
            points,
            nodes: Vec::new(),
            root: 0,
            dim,
        };
        let mut idx: Vec<usize> = (0..tree.points.len()).collect();
        tree.root = tree.build_node(&mut idx);
        Ok(tree)
    }

    fn build_node(&mut self, idx: &mut [usize]) -> usize {
        if idx.len() == 1 {
            self.nodes.push(Node::Leaf(idx[0]));
            return self.nodes.len() - 1;
        }
        let mut axis = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for a in 0..self.dim {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let x = self.points[i][a];
                (lo.min(x), hi.max(x))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = a;
            }
        }
        let pts = &self.points;
        idx.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let m = (idx.len() - 1) / 2;
        let value = pts[idx[m]][axis];
        let (l, r) = idx.split_at_mut(m + 1);
        let left = self.build_node(l);
        let right = self.build_node(r);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of node levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], n: usize) -> usize {
            match nodes[n] {
                Node::Leaf(_) => 1,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, self.root)
    }

    /// The `count` nearest stored points as `(index, distance)`, nearest
    /// first, ties by lower index.
    pub fn nearest(&self, query: &[f64], count: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return invalid(format!("query has dimension {}, tree {}", query.len(), self.dim));
        }
        if count == 0 {
            return invalid("neighbour count must be at least 1");
        }
        let k = count.min(self.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, &mut best);
        Ok(best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect())
    }

    fn search(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf(i) => {
                let cand = (sq_dist(q, &self.points[i]), i);
                let pos = best.partition_point(|b| b.0 < cand.0 || (b.0 == cand.0 && b.1 < cand.1));
                if pos < k {
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub frame_a: usize,
    pub frame_b: usize,
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_frames(mut self, frame_a: usize, frame_b: usize) -> Self {
        self.frame_a = frame_a;
        self.frame_b = frame_b;
        self
    }
}

fn tree_of(desc: &[Descriptor]) -> Result<KdTree> {
    KdTree::build(desc.iter().map(|d| d.values.clone()).collect())
}

/// Best match in `tree` for every query that passes the ratio test.
fn best_matches(queries: &[Descriptor], tree: &KdTree, ratio: f64) -> Result<Vec<Option<(usize, f64)>>> {
    queries
        .iter()
        .map(|d| {
            let nn = tree.nearest(&d.values, 2)?;
            let keep = nn.len() == 1 || ratio >= 1.0 || (nn[1].1 > 0.0 && nn[0].1 / nn[1].1 < ratio);
            Ok(keep.then_some(nn[0]))
        })
        .collect()
}

/// Ratio-tested, mutually best matches. The ratio test is applied in both
/// directions so that swapping the inputs swaps the pairs.
pub fn match_frames(desc_a: &[Descriptor], desc_b: &[Descriptor], ratio: f64) -> Result<MatchSet> {
    if !(ratio > 0.0) {
        return invalid("ratio must be positive");
    }
    if desc_a.is_empty() || desc_b.is_empty() {
        return Ok(MatchSet::default());
    }
    let forward = best_matches(desc_a, &tree_of(desc_b)?, ratio)?;
    let backward = best_matches(desc_b, &tree_of(desc_a)?, ratio)?;
    let pairs = forward
        .iter()
        .enumerate()
        .filter_map(|(a, m)| {
            let (b, distance) = (*m)?;
            matches!(backward[b], Some((back, _)) if back == a).then_some(MatchPair {
                index_a: a,
                index_b: b,
                distance,
            })
        })
        .collect();
    Ok(MatchSet {
        frame_a: 0,
        frame_b: 1,
        pairs,
    })
}

/// `((u + 0.5 − cx)/fx, (v + 0.5 − cy)/fy)`.
pub fn normalize_coords(kps: &[Keypoint], camera: &PinholeCamera) -> Vec<Vector2<f64>> {
    kps.iter()
        .map(|k| {
            Vector2::new(
                (k.u + 0.5 - camera.cx) / camera.fx,
                (k.v + 0.5 - camera.cy) / camera.fy,
            )
        })
        .collect()
}

pub fn denormalize(x: &Vector2<f64>, camera: &PinholeCamera) -> (f64, f64) {
    (x.x * camera.fx + camera.cx - 0.5, x.y * camera.fy + camera.cy - 0.5)
}

/// Debug dump: one object per pair with both pixel positions.
pub fn match_dump(kps_a: &[Keypoint], kps_b: &[Keypoint], matches: &MatchSet) -> serde_json::Value {
    serde_json::Value::Array(
        matches
            .pairs
            .iter()
            .map(|p| {
                let (a, b) = (kps_a[p.index_a], kps_b[p.index_b]);
                serde_json::json!({
                    "u_a": a.u, "v_a": a.v, "u_b": b.u, "v_b": b.v, "distance": p.distance
                })
            })
            .collect(),
    )
}
