use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{median_filter, RasterImage};
use crate::stats::pearson;

/// Longest sequence `mi_order` searches exhaustively.
pub const MAX_ORDER_LEN: usize = 8;
const TIE_TOLERANCE: f64 = 1e-12;
/// Images whose mean is below this fraction of full scale carry no usable
/// multiplicative signal.
const MIN_MEAN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRNUField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub time_label: Option<f64>,
}

impl PRNUField {
    pub fn same_shape(&self, other: &PRNUField) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }
}

/// Mean of `residual / max(median, 1)` over the usable images of one
/// acquisition interval.
pub fn prnu_estimate(images: &[&RasterImage], kernel: usize, time_label: Option<f64>) -> Result<PRNUField> {
    let first = images.first().ok_or_else(|| Error::invalid("no images for PRNU estimation"))?;
    if let Some(i) = images.iter().position(|im| !im.same_shape(first)) {
        return Err(Error::invalid(format!("image {i} differs in shape from image 0")));
    }
    let usable: Vec<&RasterImage> = images
        .iter()
        .copied()
        .filter(|im| {
            let mean = im.data().iter().map(|&v| f64::from(v)).sum::<f64>() / im.data().len() as f64;
            mean >= MIN_MEAN_FRACTION * f64::from(im.max_value())
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid("every image is too dark for PRNU estimation"));
    }
    let mut acc = vec![0.0; first.data().len()];
    for im in &usable {
        let med = median_filter(im, kernel)?;
        for ((a, &v), &m) in acc.iter_mut().zip(im.data()).zip(med.data()) {
            *a += (f64::from(v) - f64::from(m)) / f64::from(m.max(1));
        }
    }
    let n = usable.len() as f64;
    Ok(PRNUField {
        width: first.width(),
        height: first.height(),
        channels: first.channels(),
        data: acc.into_iter().map(|a| a / n).collect(),
        time_label,
    })
}

fn correlation_matrix(fields: &[PRNUField]) -> Result<Vec<Vec<f64>>> {
    let l = fields.len();
    let mut m = vec![vec![1.0; l]; l];
    for i in 0..l {
        if !fields[i].same_shape(&fields[0]) {
            return Err(Error::invalid(format!("field {i} differs in shape from field 0")));
        }
        for j in i + 1..l {
            let r = pearson(&fields[i].data, &fields[j].data)
                .ok_or_else(|| Error::invalid(format!("correlation of fields {i} and {j} is undefined")))?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiOrder {
    /// Field indices in estimated temporal order, with `order[0] < order[last]`.
    pub order: Vec<usize>,
    pub correlation: Vec<Vec<f64>>,
    /// Sum of correlations between neighbours in `order`.
    pub score: f64,
    /// Every other order reaching the same score.
    pub tied_orders: Vec<Vec<usize>>,
}

fn permutations(prefix: &mut Vec<usize>, used: &mut [bool], visit: &mut impl FnMut(&[usize])) {
    if prefix.len() == used.len() {
        visit(prefix);
        return;
    }
    for i in 0..used.len() {
        if !used[i] {
            used[i] = true;
            prefix.push(i);
            permutations(prefix, used, visit);
            prefix.pop();
            used[i] = false;
        }
    }
}

/// Order PRNU fields so that the sum of correlations between adjacent
/// fields is maximal. The direction of time is not identifiable, so each
/// order and its reverse are the same candidate.
pub fn mi_order(fields: &[PRNUField]) -> Result<MiOrder> {
    let l = fields.len();
    if !(3..=MAX_ORDER_LEN).contains(&l) {
        return Err(Error::invalid(format!("ordering needs 3 to {MAX_ORDER_LEN} fields, got {l}")));
    }
    let corr = correlation_matrix(fields)?;
    let mut best: Vec<(f64, Vec<usize>)> = Vec::new();
    permutations(&mut Vec::with_capacity(l), &mut vec![false; l], &mut |p| {
        if p[0] > p[l - 1] {
            return;
        }
        let s: f64 = p.windows(2).map(|w| corr[w[0]][w[1]]).sum();
        match best.first() {
            Some((b, _)) if s > b + TIE_TOLERANCE => best = vec![(s, p.to_vec())],
            Some((b, _)) if s >= b - TIE_TOLERANCE => best.push((s, p.to_vec())),
            Some(_) => {}
            None => best.push((s, p.to_vec())),
        }
    });
    let mut best = best.into_iter();
    let (score, order) = best.next().expect("at least one permutation");
    Ok(MiOrder {
        order,
        correlation: corr,
        score,
        tied_orders: best.map(|(_, p)| p).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IipResult {
    /// Index of the most correlated interval field.
    pub cluster: usize,
    pub correlations: Vec<f64>,
}

/// Place a query PRNU estimate in the interval whose field it correlates with
/// most. Ties go to the earlier interval.
pub fn iip_place(query: &PRNUField, fields: &[PRNUField]) -> Result<IipResult> {
    if fields.is_empty() {
        return Err(Error::invalid("no interval fields to place against"));
    }
    let mut correlations = Vec::with_capacity(fields.len());
    for (i, f) in fields.iter().enumerate() {
        if !f.same_shape(query) {
            return Err(Error::invalid(format!("field {i} differs in shape from the query")));
        }
        correlations.push(
            pearson(&query.data, &f.data)
                .ok_or_else(|| Error::invalid(format!("correlation with field {i} is undefined")))?,
        );
    }
    let mut cluster = 0;
    for (i, &c) in correlations.iter().enumerate() {
        if c > correlations[cluster] {
            cluster = i;
        }
    }
    Ok(IipResult { cluster, correlations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    fn noise(seed: u64, name: &str, n: usize, sigma: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, name);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut r)).collect()
    }

    fn field(data: Vec<f64>) -> PRNUField {
        PRNUField { width: data.len(), height: 1, channels: 1, data, time_label: None }
    }

    fn flat_image(k: &[f64], level: f64, seed: u64, idx: u64) -> RasterImage {
        let n = noise(seed + 1000 * idx, "shot", k.len(), 1.0);
        let data: Vec<f64> = k.iter().zip(&n).map(|(&k, &e)| level * (1.0 + k) + e).collect();
        RasterImage::from_f64(64, 64, 1, 8, &data).unwrap()
    }

    #[test]
    fn estimate_tracks_true_field() {
        let k = noise(1, "k", 64 * 64, 0.05);
        let imgs: Vec<RasterImage> = (0..8).map(|i| flat_image(&k, 120.0, 1, i)).collect();
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        let f = prnu_estimate(&refs, 3, Some(1.0)).unwrap();
        let r = pearson(&f.data, &k).unwrap();
        assert!(r >= 0.9, "{r}");
        let same = prnu_estimate(&[&imgs[0], &imgs[0]], 3, None).unwrap();
        let single = prnu_estimate(&[&imgs[0]], 3, None).unwrap();
        assert_eq!(same.data, single.data);
    }

    #[test]
    fn dark_images_rejected() {
        let dark = RasterImage::filled(16, 16, 1, 8, 0).unwrap();
        assert!(prnu_estimate(&[&dark, &dark], 3, None).is_err());
        let k = vec![0.0; 64 * 64];
        let lit = flat_image(&k, 100.0, 2, 0);
        let dark64 = RasterImage::filled(64, 64, 1, 8, 0).unwrap();
        let with_dark = prnu_estimate(&[&lit, &dark64], 3, None).unwrap();
        let without = prnu_estimate(&[&lit], 3, None).unwrap();
        assert_eq!(with_dark.data, without.data);
    }

    fn drifting(l: usize) -> Vec<PRNUField> {
        let mut cur = noise(5, "base", 4000, 1.0);
        (0..l)
            .map(|t| {
                let step = noise(5, &format!("drift{t}"), 4000, 0.6);
                for (c, s) in cur.iter_mut().zip(&step) {
                    *c += s;
                }
                let obs = noise(5, &format!("obs{t}"), 4000, 0.3);
                field(cur.iter().zip(&obs).map(|(a, b)| a + b).collect())
            })
            .collect()
    }

    #[test]
    fn drift_order_recovered_and_equivariant() {
        let fields = drifting(6);
        let o = mi_order(&fields).unwrap();
        assert_eq!(o.order, vec![0, 1, 2, 3, 4, 5]);
        assert!(o.tied_orders.is_empty());
        for i in 0..6 {
            assert_eq!(o.correlation[i][i], 1.0);
            for j in 0..6 {
                assert_eq!(o.correlation[i][j], o.correlation[j][i]);
            }
        }
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng::stream(9, "perm"));
        let shuffled: Vec<PRNUField> = perm.iter().map(|&p| fields[p].clone()).collect();
        let so = mi_order(&shuffled).unwrap();
        let mapped: Vec<usize> = so.order.iter().map(|&i| perm[i]).collect();
        let rev: Vec<usize> = mapped.iter().rev().copied().collect();
        assert!(mapped == o.order || rev == o.order, "{mapped:?}");
        assert!((so.score - o.score).abs() < 1e-12);
    }

    #[test]
    fn ties_reported() {
        let base = noise(7, "tie", 500, 1.0);
        let fields = vec![field(base.clone()), field(base.clone()), field(base)];
        let o = mi_order(&fields).unwrap();
        assert_eq!(o.order, vec![0, 1, 2]);
        assert_eq!(o.tied_orders, vec![vec![0, 2, 1], vec![1, 0, 2]]);
    }

    #[test]
    fn order_errors() {
        let f = drifting(9);
        assert!(mi_order(&f[..2]).is_err());
        assert!(mi_order(&f).is_err());
        let mut g = drifting(3);
        g[1] = field(vec![1.0; 4000]);
        assert!(mi_order(&g).is_err());
    }

    #[test]
    fn placement() {
        let fields = drifting(4);
        let q = field(fields[2].data.iter().zip(noise(11, "q", 4000, 0.5)).map(|(a, b)| a + b).collect());
        let p = iip_place(&q, &fields).unwrap();
        assert_eq!(p.cluster, 2);
        let tie = iip_place(&fields[0], &[fields[0].clone(), fields[0].clone()]).unwrap();
        assert_eq!(tie.cluster, 0);
        assert!(iip_place(&field(vec![2.0; 4000]), &fields).is_err());
        assert!(iip_place(&q, &[]).is_err());
    }
}
