use crate::kdtree::KdTree;
use crate::manifold::Vec3;
use crate::sensor_sim::{LidarPoint, LidarScan};

/// A connected group of points in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid_body: Vec3,
    /// Axis-aligned bounding-box size.
    pub extent: Vec3,
    pub point_count: usize,
    /// Indices into the clustered point list, ascending.
    pub members: Vec<usize>,
    /// Mean time from the members' sampling to the scan end, s.
    pub lag: f64,
}

impl Cluster {
    pub fn from_members(points: &[Vec3], mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut sum = Vec3::zeros();
        for &i in &members {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
            sum += points[i];
        }
        Cluster {
            centroid_body: sum / members.len() as f64,
            extent: hi - lo,
            point_count: members.len(),
            members,
            lag: 0.0,
        }
    }
}

/// Points with reflectivity strictly above `threshold`, in scan order.
pub fn reflectivity_filter(scan: &LidarScan, threshold: u8) -> Vec<Vec3> {
    bright_points(scan, threshold).map(|p| p.pos_body).collect()
}

pub(crate) fn bright_points(scan: &LidarScan, threshold: u8) -> impl Iterator<Item = &LidarPoint> {
    scan.points
        .iter()
        .filter(move |p| p.reflectivity > threshold)
}

/// Connected components of the "within `tol` of some member" relation.
/// Components are ordered by their smallest member index.
pub fn connected_components(tree: &KdTree, tol: f64) -> Vec<Vec<usize>> {
    let n = tree.len();
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    let mut queue = Vec::new();
    let mut nbrs = Vec::new();
    for seed in 0..n {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut head = 0;
        while head < queue.len() {
            let cur = queue[head];
            head += 1;
            tree.radius_search(tree.point(cur), tol, &mut nbrs);
            for &j in &nbrs {
                if !assigned[j] {
                    assigned[j] = true;
                    queue.push(j);
                }
            }
        }
        out.push(queue.clone());
    }
    out
}

/// Euclidean cluster extraction; components with fewer than `min_pts` or
/// more than `max_pts` members are discarded.
pub fn euclidean_cluster(points: &[Vec3], dist_tol: f64, min_pts: usize, max_pts: usize) -> Vec<Cluster> {
    assert!(dist_tol > 0.0, "dist_tol must be positive");
    if points.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::build(points.to_vec());
    connected_components(&tree, dist_tol)
        .into_iter()
        .filter(|c| (min_pts..=max_pts).contains(&c.len()))
        .map(|c| Cluster::from_members(points, c))
        .collect()
}

/// Keeps clusters whose extent lies within `[size_min, size_max]` on every axis.
pub fn reject_invalid(clusters: Vec<Cluster>, size_min: &Vec3, size_max: &Vec3) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| (0..3).all(|i| c.extent[i] >= size_min[i] && c.extent[i] <= size_max[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor_sim::{LidarPoint, LidarScan};

    fn scan(refl: &[u8]) -> LidarScan {
        LidarScan {
            points: refl
                .iter()
                .enumerate()
                .map(|(i, &r)| LidarPoint { pos_body: Vec3::new(i as f64, 0.0, 0.0), reflectivity: r, t_offset: 0.0 })
                .collect(),
            scan_end_time: 1.0,
            scan_period: 0.1,
            drone_id: 0,
        }
    }

    #[test]
    fn reflectivity_filter_semantics() {
        let s = scan(&[10, 200, 201, 255, 50, 255]);
        assert!(reflectivity_filter(&scan(&[10, 200, 150]), 200).is_empty());
        let hi = reflectivity_filter(&s, 200);
        assert_eq!(hi.iter().map(|p| p.x as usize).collect::<Vec<_>>(), vec![2, 3, 5]);
        assert_eq!(reflectivity_filter(&scan(&[1, 2, 3]), 0).len(), 3);
    }

    #[test]
    fn two_groups_far_apart() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let d = Vec3::new(0.05 * (i % 3) as f64, 0.05 * (i / 3) as f64, 0.0);
            pts.push(Vec3::new(1.0, 1.0, 1.0) + d);
            pts.push(Vec3::new(6.0, 1.0, 1.0) + d);
        }
        let cs = euclidean_cluster(&pts, 0.5, 3, 100);
        assert_eq!(cs.len(), 2);
        let c0 = pts.iter().step_by(2).sum::<Vec3>() / 10.0;
        assert!((cs[0].centroid_body - c0).norm() < 1e-12);
        assert!((cs[1].centroid_body - c0 - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lone_point_is_dropped() {
        assert!(euclidean_cluster(&[Vec3::zeros()], 0.3, 3, 100).is_empty());
    }

    #[test]
    fn dense_line_is_one_cluster() {
        let pts: Vec<Vec3> = (0..200).map(|i| Vec3::new(0.1 * i as f64, 0.0, 0.0)).collect();
        let cs = euclidean_cluster(&pts, 0.15, 3, 1000);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].point_count, 200);
        assert!(euclidean_cluster(&pts, 0.15, 3, 100).is_empty());
    }

    fn with_extent(e: Vec3) -> Cluster {
        Cluster { centroid_body: Vec3::zeros(), extent: e, point_count: 10, members: vec![], lag: 0.0 }
    }

    #[test]
    fn size_rejection() {
        let lo = Vec3::repeat(0.05);
        let hi = Vec3::repeat(0.8);
        let kept = reject_invalid(
            vec![
                with_extent(Vec3::new(4.0, 3.0, 0.1)),
                with_extent(Vec3::new(0.3, 0.3, 0.15)),
                with_extent(Vec3::zeros()),
            ],
            &lo,
            &hi,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].extent, Vec3::new(0.3, 0.3, 0.15));
    }
}
