//! Keypoint selection and ordering along a thin segmented structure.
//!
//! Reliable pixels are grouped by breadth-first search into small clusters
//! whose 3D centroids become keypoints. Clusters are then grown ("solidified")
//! across the full stroke width so that a second, 8-connected BFS over the
//! segmentation can tell which clusters touch. The resulting adjacency graph
//! is walked by a nearest-neighbor DFS from a degree-1 keypoint to get a
//! linear ordering, and the two terminal keypoints are pushed out to the
//! physical ends of the stroke when a long unclustered tail remains.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::raster::{Pixel, PixelMask, NEIGHBORS_8};
use crate::stereo::{DepthField, MatchParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeypointError {
    #[error("no reliable pixels")]
    NoReliablePixels,
    #[error("no keypoints")]
    NoKeypoints,
    #[error("no endpoint found")]
    NoEndpoint,
    #[error("fragmented thread")]
    FragmentedThread,
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub max_cluster_size: usize,
    pub min_cluster_size: usize,
    /// Reliable pixels within this Manhattan distance are BFS neighbors.
    pub neighbor_manhattan_radius: i32,
    /// Chebyshev radius used when growing clusters over the segmentation.
    pub solidify_radius: i32,
    /// Minimum tail size (pixels) that triggers an extra endpoint keypoint.
    pub endpoint_unreached_min: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            max_cluster_size: 50,
            min_cluster_size: 5,
            neighbor_manhattan_radius: 2,
            solidify_radius: 2,
            endpoint_unreached_min: 10,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), KeypointError> {
        if self.min_cluster_size < 1 || self.max_cluster_size < self.min_cluster_size {
            return Err(KeypointError::Config("need max_cluster_size >= min_cluster_size >= 1".into()));
        }
        if self.neighbor_manhattan_radius < 1 || self.solidify_radius < 0 {
            return Err(KeypointError::Config("invalid neighbor or solidify radius".into()));
        }
        Ok(())
    }
}

/// A group of left-image pixels promoted to a keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Member pixels in row-major order; grows during solidification.
    pub pixels: Vec<Pixel>,
    /// `(x, y, depth)` of the reliable pixels the cluster was formed from.
    pub points3d: Vec<[f64; 3]>,
    /// Mean of `points3d`.
    pub centroid: [f64; 3],
}

fn mean3(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut acc = [0.0; 3];
    for p in points {
        for c in 0..3 {
            acc[c] += p[c];
        }
    }
    acc.map(|v| v / n)
}

/// Valid pixels whose reliability is strictly above the threshold, in
/// row-major order.
pub fn prune_reliable(field: &DepthField, params: &MatchParams) -> Result<Vec<Pixel>, KeypointError> {
    let out: Vec<Pixel> = field
        .samples()
        .iter()
        .filter(|s| s.valid && s.reliability > params.reliability_threshold)
        .map(|s| s.pixel)
        .collect();
    if out.is_empty() {
        return Err(KeypointError::NoReliablePixels);
    }
    Ok(out)
}

fn manhattan_offsets(r: i32) -> Vec<(i32, i32)> {
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) != (0, 0) && dx.abs() + dy.abs() <= r {
                v.push((dx, dy));
            }
        }
    }
    v
}

struct Grid<T> {
    width: usize,
    height: usize,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    fn new(width: usize, height: usize, fill: T) -> Self {
        Self { width, height, cells: vec![fill; width * height] }
    }

    fn idx(&self, p: Pixel) -> Option<usize> {
        (p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height)
            .then(|| p.y as usize * self.width + p.x as usize)
    }

    fn get(&self, p: Pixel) -> Option<&T> {
        self.idx(p).map(|i| &self.cells[i])
    }

    fn set(&mut self, p: Pixel, v: T) {
        let i = self.idx(p).expect("pixel in grid");
        self.cells[i] = v;
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Seen {
    NotReliable,
    Unexplored,
    Queued,
    Explored,
}

/// BFS clustering of reliable pixels. Seeds are taken in row-major order;
/// growth stops when the frontier empties or `max_cluster_size` pixels are
/// collected (queued-but-unvisited pixels are released for later seeds).
/// Explored sets below `min_cluster_size` are dropped but stay explored.
pub fn cluster(reliable: &[Pixel], field: &DepthField, params: &ClusterParams) -> Result<Vec<Cluster>, KeypointError> {
    params.validate()?;
    if reliable.is_empty() {
        return Err(KeypointError::NoReliablePixels);
    }
    let mut seen = Grid::new(field.width(), field.height(), Seen::NotReliable);
    for &p in reliable {
        seen.set(p, Seen::Unexplored);
    }
    let mut seeds = reliable.to_vec();
    seeds.sort();
    let offsets = manhattan_offsets(params.neighbor_manhattan_radius);
    let mut clusters = Vec::new();
    for seed in seeds {
        if seen.get(seed) != Some(&Seen::Unexplored) {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = VecDeque::from([seed]);
        seen.set(seed, Seen::Queued);
        while members.len() < params.max_cluster_size {
            let Some(p) = queue.pop_front() else { break };
            seen.set(p, Seen::Explored);
            members.push(p);
            for &(dx, dy) in &offsets {
                let q = Pixel::new(p.x + dx, p.y + dy);
                if seen.get(q) == Some(&Seen::Unexplored) {
                    seen.set(q, Seen::Queued);
                    queue.push_back(q);
                }
            }
        }
        for q in queue {
            seen.set(q, Seen::Unexplored);
        }
        if members.len() < params.min_cluster_size {
            continue;
        }
        members.sort();
        let points3d: Vec<[f64; 3]> = members
            .iter()
            .map(|&p| {
                let d = field.depth(p).expect("reliable pixels carry a valid depth");
                [p.x as f64, p.y as f64, d]
            })
            .collect();
        let centroid = mean3(&points3d);
        clusters.push(Cluster { id: clusters.len(), pixels: members, points3d, centroid });
    }
    if clusters.is_empty() {
        return Err(KeypointError::NoKeypoints);
    }
    Ok(clusters)
}

const UNLABELED: usize = usize::MAX;

fn label_grid(clusters: &[Cluster], width: usize, height: usize) -> Grid<usize> {
    let mut g = Grid::new(width, height, UNLABELED);
    for (i, c) in clusters.iter().enumerate() {
        for &p in &c.pixels {
            g.set(p, i);
        }
    }
    g
}

/// Grows each cluster by the segmented pixels within Chebyshev distance
/// `solidify_radius` of its original pixels. Pixels already owned by a
/// cluster are never moved; a contested pixel goes to the nearest cluster,
/// ties to the smaller id. Keypoints (centroids) are unchanged.
pub fn solidify(clusters: &[Cluster], mask: &PixelMask, params: &ClusterParams) -> Vec<Cluster> {
    let labels = label_grid(clusters, mask.width(), mask.height());
    let r = params.solidify_radius;
    // (distance, cluster index) of the best claim on each free pixel
    let mut claims: Grid<(i32, usize)> = Grid::new(mask.width(), mask.height(), (i32::MAX, UNLABELED));
    for (ci, c) in clusters.iter().enumerate() {
        for &p in &c.pixels {
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = Pixel::new(p.x + dx, p.y + dy);
                    if !mask.contains(q) || labels.get(q) != Some(&UNLABELED) {
                        continue;
                    }
                    let d = dx.abs().max(dy.abs());
                    let cur = *claims.get(q).expect("in bounds");
                    if (d, ci) < cur {
                        claims.set(q, (d, ci));
                    }
                }
            }
        }
    }
    let mut out: Vec<Cluster> = clusters.to_vec();
    for q in mask.pixels() {
        let (_, ci) = *claims.get(q).expect("in bounds");
        if ci != UNLABELED {
            out[ci].pixels.push(q);
        }
    }
    for c in &mut out {
        c.pixels.sort();
    }
    out
}

/// Undirected keypoint adjacency graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adjacency {
    neighbors: Vec<BTreeSet<usize>>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self { neighbors: vec![BTreeSet::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn add_node(&mut self) -> usize {
        self.neighbors.push(BTreeSet::new());
        self.neighbors.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.neighbors[a].insert(b);
            self.neighbors[b].insert(a);
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].contains(&b)
    }

    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[k].iter().copied()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ns) in self.neighbors.iter().enumerate() {
            out.extend(ns.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.neighbors.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for n in self.neighbors(k) {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// 8-connected BFS over the segmentation from the pixels of `start`,
/// never entering pixels owned by another cluster. Returns the visited
/// unclustered pixels and the set of foreign clusters touched.
fn explore_from(
    start: usize,
    clusters: &[Cluster],
    labels: &Grid<usize>,
    mask: &PixelMask,
) -> (Vec<Pixel>, BTreeSet<usize>) {
    let mut visited = Grid::new(mask.width(), mask.height(), false);
    let mut queue: VecDeque<Pixel> = VecDeque::new();
    for &p in &clusters[start].pixels {
        visited.set(p, true);
        queue.push_back(p);
    }
    let mut free = Vec::new();
    let mut touched = BTreeSet::new();
    while let Some(p) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS_8 {
            let q = Pixel::new(p.x + dx, p.y + dy);
            if !mask.contains(q) || *visited.get(q).expect("in bounds") {
                continue;
            }
            let owner = *labels.get(q).expect("in bounds");
            if owner != UNLABELED && owner != start {
                touched.insert(owner);
                continue;
            }
            visited.set(q, true);
            if owner == UNLABELED {
                free.push(q);
            }
            queue.push_back(q);
        }
    }
    (free, touched)
}

/// Connects keypoints whose clusters are linked by a path of segmented
/// pixels that does not pass through a third cluster.
pub fn build_adjacency(clusters: &[Cluster], mask: &PixelMask) -> Adjacency {
    let labels = label_grid(clusters, mask.width(), mask.height());
    let mut adj = Adjacency::new(clusters.len());
    for i in 0..clusters.len() {
        let (_, touched) = explore_from(i, clusters, &labels, mask);
        for j in touched {
            adj.add_edge(i, j);
        }
    }
    adj
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Nearest-neighbor DFS over the adjacency graph starting from the
/// lowest-index degree-1 keypoint. Returns keypoint indices in visit order.
///
/// At every step the walk moves to the closest unexplored neighbor of the
/// current keypoint; edges back to explored keypoints (cycles) are ignored
/// and dead ends backtrack to the most recent keypoint that still has
/// unexplored neighbors.
pub fn order_keypoints(adj: &Adjacency, keypoints: &[[f64; 3]]) -> Result<Vec<usize>, KeypointError> {
    assert_eq!(adj.len(), keypoints.len());
    match keypoints.len() {
        0 => return Err(KeypointError::NoKeypoints),
        1 => return Ok(vec![0]),
        _ => {}
    }
    if !adj.is_connected() {
        return Err(KeypointError::FragmentedThread);
    }
    let start = (0..adj.len()).find(|&k| adj.degree(k) == 1).ok_or(KeypointError::NoEndpoint)?;
    let mut explored = vec![false; adj.len()];
    let mut order = vec![start];
    let mut stack = vec![start];
    explored[start] = true;
    while let Some(&cur) = stack.last() {
        let next = adj
            .neighbors(cur)
            .filter(|&n| !explored[n])
            .map(|n| (dist3(&keypoints[cur], &keypoints[n]), n))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match next {
            Some((_, n)) => {
                explored[n] = true;
                order.push(n);
                stack.push(n);
            }
            None => {
                stack.pop();
            }
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// `(x, y, depth)` in the left image.
    pub position: [f64; 3],
    /// Owning cluster; `None` for endpoint-extension keypoints.
    pub cluster: Option<usize>,
}

/// Clusters, keypoints, their adjacency and the topological ordering.
#[derive(Debug, Clone)]
pub struct KeypointChain {
    pub keypoints: Vec<Keypoint>,
    /// Solidified clusters, indexed by cluster id.
    pub clusters: Vec<Cluster>,
    pub adjacency: Adjacency,
    /// Keypoint indices in ordering sequence: `order[i]` has rank `i + 1`.
    pub order: Vec<usize>,
}

impl KeypointChain {
    /// Keypoint positions in ordering sequence.
    pub fn ordered_positions(&self) -> Vec<[f64; 3]> {
        self.order.iter().map(|&k| self.keypoints[k].position).collect()
    }

    /// 1-based rank of keypoint `k` in the ordering.
    pub fn rank(&self, k: usize) -> Option<usize> {
        self.order.iter().position(|&o| o == k).map(|i| i + 1)
    }

    /// Diagnostic dump: `{"clusters": [{"id", "pixels": [[x, y], ..]}],
    /// "keypoints": [[x, y, depth, order], ..]}`.
    pub fn debug_json(&self) -> serde_json::Value {
        let clusters: Vec<_> = self
            .clusters
            .iter()
            .map(|c| json!({"id": c.id, "pixels": c.pixels.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()}))
            .collect();
        let keypoints: Vec<_> = self
            .keypoints
            .iter()
            .enumerate()
            .map(|(k, kp)| {
                let rank = self.rank(k).unwrap_or(0) as f64;
                [kp.position[0], kp.position[1], kp.position[2], rank]
            })
            .collect();
        json!({"clusters": clusters, "keypoints": keypoints})
    }
}

/// Adds an extra keypoint beyond each terminal keypoint whose cluster can
/// reach at least `endpoint_unreached_min` unclustered segmented pixels
/// that no adjacent cluster reaches. The new keypoint sits on the tail pixel
/// farthest (in the image plane) from the terminal keypoint and copies its
/// depth.
pub fn extend_endpoints(chain: &KeypointChain, mask: &PixelMask, params: &ClusterParams) -> KeypointChain {
    let mut out = chain.clone();
    if chain.order.len() < 2 {
        return out;
    }
    let labels = label_grid(&chain.clusters, mask.width(), mask.height());
    let reach = |ci: usize| -> BTreeSet<Pixel> { explore_from(ci, &chain.clusters, &labels, mask).0.into_iter().collect() };
    let terminals = [(chain.order[0], true), (*chain.order.last().expect("nonempty"), false)];
    for (k, at_front) in terminals {
        let Some(ci) = chain.keypoints[k].cluster else { continue };
        let mut tail = reach(ci);
        for n in chain.adjacency.neighbors(k) {
            if let Some(cn) = chain.keypoints[n].cluster {
                for p in reach(cn) {
                    tail.remove(&p);
                }
            }
        }
        if tail.len() < params.endpoint_unreached_min {
            continue;
        }
        let kp = chain.keypoints[k].position;
        let origin = (kp[0], kp[1]);
        let far = tail
            .iter()
            .map(|p| (((p.x as f64 - origin.0).powi(2) + (p.y as f64 - origin.1).powi(2)).sqrt(), *p))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("nonempty tail")
            .1;
        out.keypoints.push(Keypoint { position: [far.x as f64, far.y as f64, kp[2]], cluster: None });
        let new = out.adjacency.add_node();
        out.adjacency.add_edge(new, k);
        if at_front {
            out.order.insert(0, new);
        } else {
            out.order.push(new);
        }
    }
    out
}

/// Full keypoint stage: prune, cluster, solidify, connect, order, extend.
pub fn select_keypoints(
    field: &DepthField,
    mask: &PixelMask,
    match_params: &MatchParams,
    params: &ClusterParams,
) -> Result<KeypointChain, KeypointError> {
    let reliable = prune_reliable(field, match_params)?;
    let raw = cluster(&reliable, field, params)?;
    let solid = solidify(&raw, mask, params);
    let adjacency = build_adjacency(&solid, mask);
    let keypoints: Vec<Keypoint> =
        solid.iter().map(|c| Keypoint { position: c.centroid, cluster: Some(c.id) }).collect();
    let positions: Vec<[f64; 3]> = keypoints.iter().map(|k| k.position).collect();
    let order = order_keypoints(&adjacency, &positions)?;
    let chain = KeypointChain { keypoints, clusters: solid, adjacency, order };
    Ok(extend_endpoints(&chain, mask, params))
}
