//! Medial-axis extraction from a skeleton and arc-length sampling.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{thin, ImagingError, MedialAxis, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisParams {
    /// Skeleton pixels closer than this (Euclidean) but far apart along the
    /// skeleton are fused before the longest-path search.
    pub merge_distance: f64,
    /// Endpoint branches with fewer pixels than this are pruned.
    pub min_branch_length: usize,
}

impl Default for AxisParams {
    fn default() -> Self {
        Self {
            merge_distance: 2.0,
            min_branch_length: 8,
        }
    }
}

struct Graph {
    nodes: Vec<(usize, usize)>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    fn build(sk: &Skeleton) -> Self {
        let nodes = sk.pixels();
        let index: HashMap<(usize, usize), usize> =
            nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let adj = nodes
            .iter()
            .map(|&(r, c)| {
                sk.neighbors(r, c)
                    .into_iter()
                    .map(|q| {
                        let w = if q.0 != r && q.1 != c {
                            std::f64::consts::SQRT_2
                        } else {
                            1.0
                        };
                        (index[&q], w)
                    })
                    .collect()
            })
            .collect();
        Self { nodes, adj }
    }

    fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Hop-bounded BFS; returns nodes within `max_hops`.
    fn within_hops(&self, start: usize, max_hops: usize) -> Vec<usize> {
        let mut seen = vec![usize::MAX; self.nodes.len()];
        let mut out = vec![start];
        let mut queue = VecDeque::from([start]);
        seen[start] = 0;
        while let Some(u) = queue.pop_front() {
            if seen[u] == max_hops {
                continue;
            }
            for &(v, _) in &self.adj[u] {
                if seen[v] == usize::MAX {
                    seen[v] = seen[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out
    }

    fn dijkstra(&self, start: usize) -> (Vec<f64>, Vec<usize>) {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
            }
        }
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Item(0.0, start));
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(Item(nd, v));
                }
            }
        }
        (dist, prev)
    }

    fn farthest(dist: &[f64]) -> usize {
        let mut best = 0;
        for (i, &d) in dist.iter().enumerate() {
            if d.is_finite() && d > dist[best] {
                best = i;
            }
        }
        best
    }
}

/// True when some pair of pixels is within `distance` in the plane but not
/// within a short walk along the skeleton (or the skeleton is not thin).
fn needs_merge(sk: &Skeleton, g: &Graph, distance: f64) -> bool {
    if distance <= 0.0 {
        return false;
    }
    if !sk.is_one_pixel_wide() {
        return true;
    }
    let reach = distance.ceil() as i64;
    let max_hops = (2.0 * distance).ceil() as usize + 2;
    let index: HashMap<(usize, usize), usize> =
        g.nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    for (i, &(r, c)) in g.nodes.iter().enumerate() {
        let near: std::collections::HashSet<usize> =
            g.within_hops(i, max_hops).into_iter().collect();
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                if ((dr * dr + dc * dc) as f64).sqrt() > distance {
                    continue;
                }
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 {
                    continue;
                }
                if let Some(&j) = index.get(&(rr as usize, cc as usize)) {
                    if !near.contains(&j) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Removes the shortest endpoint branch below `min_len` pixels, one at a
/// time, while more than two endpoints remain.
fn prune(sk: &Skeleton, min_len: usize) -> Skeleton {
    let mut mask = sk.mask().clone();
    loop {
        let current = Skeleton::from_mask(mask.clone());
        let g = Graph::build(&current);
        let endpoints: Vec<usize> = (0..g.nodes.len()).filter(|&i| g.degree(i) == 1).collect();
        if endpoints.len() <= 2 {
            break;
        }
        let mut shortest: Option<Vec<usize>> = None;
        for &e in &endpoints {
            let mut branch = vec![e];
            let mut prev = usize::MAX;
            let mut cur = e;
            let mut reached_junction = false;
            loop {
                let next: Vec<usize> = g.adj[cur]
                    .iter()
                    .map(|&(v, _)| v)
                    .filter(|&v| v != prev)
                    .collect();
                if next.len() != 1 {
                    break;
                }
                let nxt = next[0];
                if g.degree(nxt) >= 3 {
                    reached_junction = true;
                    break;
                }
                if g.degree(nxt) == 1 {
                    break;
                }
                prev = cur;
                cur = nxt;
                branch.push(cur);
            }
            if reached_junction
                && branch.len() < min_len
                && shortest.as_ref().is_none_or(|s| branch.len() < s.len())
            {
                shortest = Some(branch);
            }
        }
        match shortest {
            Some(branch) => {
                for i in branch {
                    let (r, c) = g.nodes[i];
                    mask.set(r, c, false);
                }
            }
            None => break,
        }
    }
    Skeleton::from_mask(mask)
}

/// Longest simple path through the (merged, pruned) skeleton, ordered from
/// the topmost endpoint (smallest row, then smallest column).
pub fn extract_axis(skeleton: &Skeleton, params: &AxisParams) -> Result<MedialAxis, ImagingError> {
    if skeleton.is_empty() {
        return Err(ImagingError::EmptyMask);
    }
    let mut sk = skeleton.clone();
    let g = Graph::build(&sk);
    if needs_merge(&sk, &g, params.merge_distance) {
        let radius = (params.merge_distance / 2.0).ceil().max(1.0) as usize;
        let fused = sk.mask().dilate(radius);
        // dilation of a connected set stays connected; several far-apart
        // pieces keep the original skeleton
        if fused.component_count() == 1 {
            sk = thin(&fused)?;
        }
    }
    let sk = prune(&sk, params.min_branch_length);
    let g = Graph::build(&sk);

    // longest path per component via double Dijkstra; keep the best
    let mut visited = vec![false; g.nodes.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 0..g.nodes.len() {
        if visited[start] {
            continue;
        }
        let (d0, _) = g.dijkstra(start);
        for (i, d) in d0.iter().enumerate() {
            if d.is_finite() {
                visited[i] = true;
            }
        }
        let u = Graph::farthest(&d0);
        let (d1, prev) = g.dijkstra(u);
        let v = Graph::farthest(&d1);
        let mut path = vec![v];
        let mut cur = v;
        while cur != u {
            cur = prev[cur];
            path.push(cur);
        }
        if best.as_ref().is_none_or(|(len, _)| d1[v] > *len) {
            best = Some((d1[v], path));
        }
    }
    let (_, path) = best.expect("non-empty skeleton has a component");
    if path.len() < 2 {
        return Err(ImagingError::DegenerateSkeleton);
    }
    let mut points: Vec<(f64, f64)> = path
        .iter()
        .map(|&i| (g.nodes[i].0 as f64, g.nodes[i].1 as f64))
        .collect();
    let (a, b) = (points[0], *points.last().unwrap());
    if (b.0, b.1) < (a.0, a.1) {
        points.reverse();
    }
    MedialAxis::new(points)
}

/// Centres spaced `interval` apart in arc length, starting at the first axis
/// point. A trailing remainder shorter than `interval` is dropped.
pub fn sample_axis(axis: &MedialAxis, interval: f64) -> Result<Vec<(f64, f64)>, ImagingError> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(ImagingError::InvalidInterval(interval));
    }
    let length = axis.arc_length();
    if length + 1e-9 < interval {
        return Err(ImagingError::AxisTooShort { length, interval });
    }
    let n = (length / interval + 1e-9).floor() as usize + 1;
    let positions: Vec<f64> = (0..n).map(|k| k as f64 * interval).collect();
    Ok(axis.points_at(&positions))
}
