//! Quantitative proxies for segmentation and layout quality. All metrics
//! read class ids only, never colours.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legend::{Legend, Role};
use crate::raster::{class_histogram, ClassMap};

fn same_shape(a: &ClassMap, b: &ClassMap) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::structural(format!(
            "map sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn same_legend(a: &ClassMap, b: &ClassMap) -> Result<()> {
    if a.legend() != b.legend() {
        return Err(Error::structural(format!(
            "legends differ: `{}` vs `{}`",
            a.legend().name,
            b.legend().name
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][pred]`.
    pub counts: Vec<Vec<u64>>,
    #[serde(skip)]
    pub legend: Option<Arc<Legend>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes()).map(|k| self.counts[k][k]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// `None` when class `k` is absent from both truth and prediction.
    pub fn iou(&self, k: usize) -> Option<f64> {
        let tp = self.counts[k][k];
        let fn_: u64 = self.counts[k].iter().sum::<u64>() - tp;
        let fp: u64 = self.counts.iter().map(|row| row[k]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn mean_iou(&self) -> Option<f64> {
        let ious: Vec<f64> = (0..self.classes()).filter_map(|k| self.iou(k)).collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Share of pixels whose truth is the most frequent class.
    pub fn majority_baseline(&self) -> f64 {
        let best = self.counts.iter().map(|r| r.iter().sum::<u64>()).max().unwrap_or(0);
        best as f64 / self.total().max(1) as f64
    }

    /// Largest off-diagonal cell as `(truth, pred, fraction of all pixels)`.
    pub fn worst_confusion(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, u64)> = None;
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                if t != p && n > 0 && best.map_or(true, |b| n > b.2) {
                    best = Some((t, p, n));
                }
            }
        }
        best.map(|(t, p, n)| (t, p, n as f64 / self.total() as f64))
    }

    /// Accumulates another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::structural("confusion matrices have different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn confusion(pred: &ClassMap, truth: &ClassMap) -> Result<ConfusionMatrix> {
    same_shape(pred, truth)?;
    same_legend(pred, truth)?;
    let k = truth.legend().len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        counts[t as usize][p as usize] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        legend: Some(truth.legend().clone()),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(0, -1), (0, 1), (-1, 0), (1, 0)],
            Connectivity::Eight => &[
                (0, -1),
                (0, 1),
                (-1, 0),
                (1, 0),
                (-1, -1),
                (1, -1),
                (-1, 1),
                (1, 1),
            ],
        }
    }
}

fn neighbours(
    w: usize,
    h: usize,
    i: usize,
    conn: Connectivity,
) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as i64, (i / w) as i64);
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then(|| ny as usize * w + nx as usize)
    })
}

/// Sizes of connected components of pixels where `mask` holds.
fn component_sizes(w: usize, h: usize, mask: &[bool], conn: Connectivity) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for j in neighbours(w, h, i, conn) {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

fn roads_id(legend: &Legend) -> Option<u8> {
    legend.id_of("Roads").or_else(|| legend.id_of("Urban road"))
}

/// Fraction of road pixels in the largest connected road component, or
/// `None` when the map holds no roads.
pub fn road_connectivity(map: &ClassMap) -> Option<f64> {
    road_connectivity_with(map, Connectivity::Four)
}

pub fn road_connectivity_with(map: &ClassMap, conn: Connectivity) -> Option<f64> {
    let road = roads_id(map.legend())?;
    let mask: Vec<bool> = map.data().iter().map(|&c| c == road).collect();
    let sizes = component_sizes(map.width(), map.height(), &mask, conn);
    let total: usize = sizes.iter().sum();
    (total > 0).then(|| *sizes.iter().max().unwrap() as f64 / total as f64)
}

/// Fraction of pixels whose 3×3 neighbourhood (clipped at the border)
/// holds at least three distinct classes.
pub fn boundary_noise(map: &ClassMap) -> f64 {
    let (w, h) = (map.width(), map.height());
    let mut noisy = 0usize;
    for y in 0..h {
        for x in 0..w {
            let mut seen = [0u8; 3];
            let mut n = 0;
            'scan: for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let c = map.get(nx, ny);
                    if !seen[..n].contains(&c) {
                        seen[n] = c;
                        n += 1;
                        if n == 3 {
                            noisy += 1;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    noisy as f64 / (w * h) as f64
}

/// Total-variation distance between the class-fraction vectors.
pub fn histogram_distance(a: &ClassMap, b: &ClassMap) -> Result<f64> {
    same_legend(a, b)?;
    let (ha, hb) = (class_histogram(a)?, class_histogram(b)?);
    Ok(0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Counts entrances: connected runs of layout road pixels on the site
/// boundary that touch an urban road in the environment map.
///
/// A site pixel lies on the boundary when one of its 4-neighbours is outside
/// the site or off the canvas.
pub fn entrance_count(layout: &ClassMap, environment: &ClassMap) -> Result<usize> {
    same_shape(layout, environment)?;
    let (w, h) = (layout.width(), layout.height());
    let env_legend = environment.legend();
    let site = *env_legend
        .ids_with_role(Role::Mask)
        .first()
        .ok_or_else(|| Error::structural(format!("legend `{}` has no site mask class", env_legend.name)))?;
    let urban = env_legend
        .id_of("Urban road")
        .ok_or_else(|| Error::structural(format!("legend `{}` has no `Urban road` class", env_legend.name)))?;
    let road = layout
        .legend()
        .id_of("Roads")
        .ok_or_else(|| Error::structural(format!("legend `{}` has no `Roads` class", layout.legend().name)))?;
    let env = environment.data();
    if !env.contains(&site) {
        return Err(Error::structural("environment map carries no site mask pixels"));
    }
    let mut qualifies = vec![false; w * h];
    for i in 0..w * h {
        if env[i] != site || layout.data()[i] != road {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let on_edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
        let nbs: Vec<usize> = neighbours(w, h, i, Connectivity::Four).collect();
        let boundary = on_edge || nbs.iter().any(|&j| env[j] != site);
        if boundary && nbs.iter().any(|&j| env[j] == urban) {
            qualifies[i] = true;
        }
    }
    Ok(component_sizes(w, h, &qualifies, Connectivity::Four).len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub road_connectivity: Option<f64>,
    pub boundary_noise: f64,
    /// Against the reference layout, when one was given.
    pub histogram_distance: Option<f64>,
    pub entrance_count: usize,
    pub class_fractions: Vec<f64>,
}

pub fn layout_report(
    layout: &ClassMap,
    environment: &ClassMap,
    reference: Option<&ClassMap>,
) -> Result<LayoutReport> {
    Ok(LayoutReport {
        road_connectivity: road_connectivity(layout),
        boundary_noise: boundary_noise(layout),
        histogram_distance: reference.map(|r| histogram_distance(layout, r)).transpose()?,
        entrance_count: entrance_count(layout, environment)?,
        class_fractions: class_histogram(layout)?,
    })
}

/// Mean over the values that are present.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legend::{env, park};
    use proptest::prelude::*;

    fn park_map(w: usize, h: usize, data: Vec<u8>) -> ClassMap {
        ClassMap::new(w, h, data, Arc::new(Legend::park())).unwrap()
    }

    fn env_map(w: usize, h: usize, data: Vec<u8>) -> ClassMap {
        ClassMap::new(w, h, data, Arc::new(Legend::environment())).unwrap()
    }

    #[test]
    fn confusion_hand_count() {
        let truth = park_map(2, 1, vec![0, 1]);
        let pred = park_map(2, 1, vec![0, 0]);
        let m = confusion(&pred, &truth).unwrap();
        assert_eq!(m.accuracy(), 0.5);
        assert_eq!(m.iou(0), Some(0.5));
        assert_eq!(m.iou(1), Some(0.0));
        assert_eq!(m.iou(2), None);
        assert_eq!(m.total(), 2);
        assert_eq!(m.worst_confusion(), Some((1, 0, 0.5)));

        let env = env_map(2, 1, vec![0, 1]);
        assert!(confusion(&env, &truth).is_err());
        assert!(confusion(&park_map(1, 2, vec![0, 0]), &truth).is_err());
    }

    #[test]
    fn connectivity_sixty_forty() {
        // two horizontal bars of 60 and 40 road pixels separated by a row
        let (w, h) = (60, 3);
        let mut d = vec![park::GREEN_LAND; w * h];
        d[..60].fill(park::ROADS);
        d[2 * w..2 * w + 40].fill(park::ROADS);
        let m = park_map(w, h, d.clone());
        assert!((road_connectivity(&m).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(road_connectivity(&park_map(2, 2, vec![0; 4])), None);

        // diagonal touch joins only under 8-connectivity
        let diag = park_map(2, 2, vec![park::ROADS, 0, 0, park::ROADS]);
        assert_eq!(road_connectivity(&diag), Some(0.5));
        assert_eq!(road_connectivity_with(&diag, Connectivity::Eight), Some(1.0));
    }

    /// Direct enumeration of every window, independent of the early-exit scan.
    fn noise_oracle(m: &ClassMap) -> f64 {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let mut set = std::collections::BTreeSet::new();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            set.insert(m.get(nx as usize, ny as usize));
                        }
                    }
                }
                if set.len() >= 3 {
                    count += 1;
                }
            }
        }
        count as f64 / (w * h) as f64
    }

    #[test]
    fn boundary_noise_cases() {
        assert_eq!(boundary_noise(&park_map(4, 4, vec![0; 16])), 0.0);
        let halves: Vec<u8> = (0..16).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
        assert_eq!(boundary_noise(&park_map(4, 4, halves)), 0.0);

        // 5×5: left half class 0, top-right 1, bottom-right 2; junction at (2,2)
        let d: Vec<u8> = (0..25)
            .map(|i| {
                let (x, y) = (i % 5, i / 5);
                if x < 2 { 0 } else if y < 2 { 1 } else { 2 }
            })
            .collect();
        let m = park_map(5, 5, d);
        // windows centred at x∈{1,2} (touching x=1 and x=2..), y∈{1,2} (touching rows 1 and 2)
        assert_eq!(boundary_noise(&m), 4.0 / 25.0);
        assert_eq!(boundary_noise(&m), noise_oracle(&m));
    }

    #[test]
    fn histogram_distance_cases() {
        let a = park_map(4, 1, vec![0, 0, 1, 1]);
        let b = park_map(4, 1, vec![0, 2, 1, 1]);
        let b2 = park_map(4, 1, vec![0, 1, 1, 2]);
        assert_eq!(histogram_distance(&a, &b).unwrap(), 0.25);
        assert_eq!(histogram_distance(&a, &b2).unwrap(), 0.25);
        assert_eq!(histogram_distance(&a, &a).unwrap(), 0.0);
        let z = park_map(2, 1, vec![0, 0]);
        let o = park_map(2, 1, vec![1, 1]);
        assert_eq!(histogram_distance(&z, &o).unwrap(), 1.0);
        assert!(histogram_distance(&a, &env_map(4, 1, vec![0; 4])).is_err());
    }

    /// 8×6 site occupying x∈[1,7), y∈[1,5) with urban road along the top.
    fn entrance_fixture(road_cells: &[(usize, usize)]) -> (ClassMap, ClassMap) {
        let (w, h) = (8, 6);
        let mut e = vec![env::BACKGROUND; w * h];
        let mut l = vec![park::BACKGROUND; w * h];
        for y in 0..h {
            for x in 0..w {
                if (1..7).contains(&x) && (1..5).contains(&y) {
                    e[y * w + x] = env::SITE;
                    l[y * w + x] = park::GREEN_LAND;
                } else if y == 0 {
                    e[y * w + x] = env::URBAN_ROAD;
                }
            }
        }
        for &(x, y) in road_cells {
            l[y * w + x] = park::ROADS;
        }
        (park_map(w, h, l), env_map(w, h, e))
    }

    #[test]
    fn entrance_fixtures() {
        let (l, e) = entrance_fixture(&[]);
        assert_eq!(entrance_count(&l, &e).unwrap(), 0);
        // two separate touches on the top edge plus an interior path
        let (l, e) = entrance_fixture(&[(2, 1), (2, 2), (3, 2), (4, 2), (5, 2), (5, 1)]);
        assert_eq!(entrance_count(&l, &e).unwrap(), 2);
        // a wide run counts once
        let (l, e) = entrance_fixture(&[(2, 1), (3, 1), (4, 1)]);
        assert_eq!(entrance_count(&l, &e).unwrap(), 1);
        // boundary roads facing no urban road do not count
        let (l, e) = entrance_fixture(&[(3, 4)]);
        assert_eq!(entrance_count(&l, &e).unwrap(), 0);

        let no_site = env_map(8, 6, vec![env::BACKGROUND; 48]);
        assert!(matches!(entrance_count(&l, &no_site), Err(Error::Structural(_))));
    }

    #[test]
    fn synthetic_scenes_have_entrances() {
        let p = crate::synthcity::SceneParams::default();
        for seed in 0..20 {
            let s = crate::synthcity::generate_scene(seed, &p).unwrap();
            let n = entrance_count(&s.layout, &s.environment).unwrap();
            assert!(n >= 1, "seed {seed}");
            assert_eq!(road_connectivity(&s.layout), Some(1.0));
            let r = layout_report(&s.layout, &s.environment, Some(&s.layout)).unwrap();
            assert_eq!(r.histogram_distance, Some(0.0));
        }
    }

    fn arb_map(k: u8) -> impl Strategy<Value = ClassMap> {
        (1usize..8, 1usize..8).prop_flat_map(move |(w, h)| {
            proptest::collection::vec(0..k, w * h).prop_map(move |d| park_map(w, h, d))
        })
    }

    fn transpose(m: &ClassMap) -> ClassMap {
        let (w, h) = (m.width(), m.height());
        let d = (0..w * h).map(|i| m.get(i / h, i % h)).collect();
        park_map(h, w, d)
    }

    fn mirror(m: &ClassMap) -> ClassMap {
        let w = m.width();
        m.map_classes(|x, y, _| m.get(w - 1 - x, y)).unwrap()
    }

    proptest! {
        #[test]
        fn self_confusion_is_diagonal(m in arb_map(7)) {
            let c = confusion(&m, &m).unwrap();
            prop_assert_eq!(c.accuracy(), 1.0);
            for t in 0..7 { for p in 0..7 { if t != p { prop_assert_eq!(c.counts[t][p], 0); } } }
        }

        #[test]
        fn noise_matches_oracle(m in arb_map(4)) {
            prop_assert_eq!(boundary_noise(&m), noise_oracle(&m));
        }

        #[test]
        fn connectivity_symmetric(m in arb_map(3)) {
            let c = road_connectivity(&m);
            prop_assert_eq!(road_connectivity(&transpose(&m)), c);
            prop_assert_eq!(road_connectivity(&mirror(&m)), c);
        }

        #[test]
        fn histogram_distance_is_metric(
            a in proptest::collection::vec(0u8..7, 16),
            b in proptest::collection::vec(0u8..7, 16),
            c in proptest::collection::vec(0u8..7, 16),
        ) {
            let (a, b, c) = (park_map(4, 4, a), park_map(4, 4, b), park_map(4, 4, c));
            let ab = histogram_distance(&a, &b).unwrap();
            prop_assert!((ab - histogram_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!(histogram_distance(&a, &c).unwrap() <= ab + histogram_distance(&b, &c).unwrap() + 1e-12);
        }
    }
}
