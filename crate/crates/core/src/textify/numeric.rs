//! Numeric-cell encoders: literal, rounded, user range rules and 1-D k-means
//! cluster ids.

use crate::error::{Error, Result};
use crate::table::{ColumnSchema, NumericMode, RangeBin};
use crate::textify::text::{column_token, empty_marker, key_token};

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderState {
    Stateless,
    /// Ascending centroids; the index is the cluster id.
    Centroids(Vec<f64>),
    Ranges(Vec<RangeBin>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericEncoder {
    pub mode: NumericMode,
    pub state: EncoderState,
}

impl NumericEncoder {
    pub fn centroids(&self) -> Option<&[f64]> {
        match &self.state {
            EncoderState::Centroids(c) => Some(c),
            _ => None,
        }
    }

    /// Index of the nearest centroid (lowest id on ties).
    pub fn cluster_of(&self, value: f64) -> Option<usize> {
        let c = self.centroids()?;
        let mut best = 0;
        for (i, &m) in c.iter().enumerate() {
            if (value - m).abs() < (value - c[best]).abs() {
                best = i;
            }
        }
        Some(best)
    }
}

/// Fit an encoder for `column` from its values. Only k-means needs data.
pub fn fit_numeric_encoder(
    values: &[Option<f64>],
    column: &ColumnSchema,
) -> Result<NumericEncoder> {
    let mode = column.numeric_mode.clone();
    let state = match &mode {
        NumericMode::Literal | NumericMode::Rounded { .. } => EncoderState::Stateless,
        NumericMode::RangeRule { bins } => EncoderState::Ranges(bins.clone()),
        NumericMode::Kmeans { k } => {
            let present: Vec<f64> = values
                .iter()
                .flatten()
                .copied()
                .filter(|x| x.is_finite())
                .collect();
            EncoderState::Centroids(kmeans_1d(&present, *k, &column.name)?)
        }
    };
    Ok(NumericEncoder { mode, state })
}

/// Optimal 1-D k-means: the partition of the sorted values into `k`
/// contiguous runs with the least total squared error, found by dynamic
/// programming over distinct values (weighted by multiplicity). Lloyd from
/// any fixed seeding can stall in a local optimum on skewed columns, and the
/// exact fit is also independent of input order by construction.
pub fn kmeans_1d(values: &[f64], k: usize, column: &str) -> Result<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &x in &sorted {
        match distinct.last_mut() {
            Some((v, w)) if *v == x => *w += 1.0,
            _ => distinct.push((x, 1.0)),
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(Error::InsufficientData {
            column: column.to_string(),
            needed: k.max(1),
            found: distinct.len(),
        });
    }
    let seg = Segments::new(&distinct);
    let m = distinct.len();

    // cost[j][i]: best error for the first i distinct values in j+1 runs;
    // cut[j][i]: start of the last run in that optimum.
    let mut cost = vec![vec![f64::INFINITY; m + 1]; k];
    let mut cut = vec![vec![0usize; m + 1]; k];
    for i in 1..=m {
        cost[0][i] = seg.sse(0, i);
    }
    for j in 1..k {
        let (done, rest) = cost.split_at_mut(j);
        fill_layer(
            &seg,
            &done[j - 1],
            &mut rest[0],
            &mut cut[j],
            j + 1,
            m,
            j,
            m,
        );
    }

    let mut centroids = vec![0.0; k];
    let mut end = m;
    for j in (0..k).rev() {
        let start = if j == 0 { 0 } else { cut[j][end] };
        centroids[j] = seg.mean(start, end);
        end = start;
    }
    Ok(centroids)
}

/// Prefix sums over weighted distinct values.
struct Segments {
    w: Vec<f64>,
    s: Vec<f64>,
    s2: Vec<f64>,
}

impl Segments {
    fn new(points: &[(f64, f64)]) -> Self {
        let mut seg = Segments {
            w: vec![0.0],
            s: vec![0.0],
            s2: vec![0.0],
        };
        for &(x, w) in points {
            seg.w.push(seg.w.last().unwrap() + w);
            seg.s.push(seg.s.last().unwrap() + w * x);
            seg.s2.push(seg.s2.last().unwrap() + w * x * x);
        }
        seg
    }

    fn mean(&self, a: usize, b: usize) -> f64 {
        (self.s[b] - self.s[a]) / (self.w[b] - self.w[a])
    }

    /// Squared error of run `[a, b)` around its mean.
    fn sse(&self, a: usize, b: usize) -> f64 {
        let w = self.w[b] - self.w[a];
        let s = self.s[b] - self.s[a];
        (self.s2[b] - self.s2[a] - s * s / w).max(0.0)
    }
}

/// Divide-and-conquer layer fill for `cur[i]`, `i` in `lo..=hi`, with the
/// optimal cut known to lie in `opt_lo..=opt_hi`. Valid because the
/// optimal cut is monotone in `i` for squared-error costs.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    seg: &Segments,
    prev: &[f64],
    cur: &mut [f64],
    cut: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = (f64::INFINITY, opt_lo);
    for c in opt_lo..=opt_hi.min(mid - 1) {
        let v = prev[c] + seg.sse(c, mid);
        if v < best.0 {
            best = (v, c);
        }
    }
    cur[mid] = best.0;
    cut[mid] = best.1;
    if mid > lo {
        fill_layer(seg, prev, cur, cut, lo, mid - 1, opt_lo, best.1);
    }
    fill_layer(seg, prev, cur, cut, mid + 1, hi, best.1, opt_hi);
}

/// `0.75` -> `0_75`, `-3.5` -> `neg3_5`.
fn number_body(text: &str) -> String {
    let body = text.replace('.', "_");
    match body.strip_prefix('-') {
        Some(rest) => format!("neg{rest}"),
        None => body,
    }
}

/// Encode one numeric cell as a token.
pub fn encode_numeric(value: Option<f64>, column: &ColumnSchema, enc: &NumericEncoder) -> String {
    let col = column_token(&column.name);
    let Some(x) = value.filter(|x| x.is_finite()) else {
        return empty_marker(&column.name);
    };
    match (&enc.mode, &enc.state) {
        (NumericMode::Rounded { precision }, _) => {
            let p = *precision as usize;
            let mut text = format!("{x:.p$}");
            if text.starts_with('-') && text[1..].chars().all(|c| c == '0' || c == '.') {
                text.remove(0);
            }
            format!("{col}_{}", number_body(&text))
        }
        (NumericMode::Kmeans { .. }, EncoderState::Centroids(_)) => {
            format!("cluster_{}", enc.cluster_of(x).unwrap_or(0))
        }
        (NumericMode::RangeRule { .. }, EncoderState::Ranges(bins)) => bins
            .iter()
            .find(|b| b.upper.is_none_or(|u| x < u))
            .map(|b| key_token(&b.name))
            .unwrap_or_else(|| format!("{col}_out_of_range")),
        _ => format!("{col}_{}", number_body(&format!("{x}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(mode: NumericMode) -> ColumnSchema {
        ColumnSchema::numeric("columnA", mode)
    }

    #[test]
    fn literal_replaces_decimal_point() {
        let c = col(NumericMode::Literal);
        let enc = fit_numeric_encoder(&[], &c).unwrap();
        assert_eq!(enc.state, EncoderState::Stateless);
        assert_eq!(encode_numeric(Some(0.75), &c, &enc), "columna_0_75");
        assert_eq!(encode_numeric(Some(-3.5), &c, &enc), "columna_neg3_5");
        assert_eq!(encode_numeric(None, &c, &enc), "columna_empty");
    }

    #[test]
    fn rounding_merges_neighbours() {
        let c = col(NumericMode::Rounded { precision: 2 });
        let enc = fit_numeric_encoder(&[None, None], &c).unwrap();
        assert_eq!(enc.state, EncoderState::Stateless);
        let a = encode_numeric(Some(0.749999), &c, &enc);
        let b = encode_numeric(Some(0.750001), &c, &enc);
        assert_eq!(a, "columna_0_75");
        assert_eq!(a, b);
        let c0 = col(NumericMode::Rounded { precision: 0 });
        assert_eq!(encode_numeric(Some(-0.2), &c0, &enc_for(&c0)), "columna_0");
    }

    fn enc_for(c: &ColumnSchema) -> NumericEncoder {
        fit_numeric_encoder(&[], c).unwrap()
    }

    #[test]
    fn kmeans_two_clusters() {
        let c = col(NumericMode::Kmeans { k: 2 });
        let vals = [1.0, 2.0, 3.0, 100.0, 101.0, 102.0].map(Some);
        let enc = fit_numeric_encoder(&vals, &c).unwrap();
        assert_eq!(enc.centroids().unwrap(), &[2.0, 101.0]);
        assert_eq!(encode_numeric(Some(99.0), &c, &enc), "cluster_1");
        assert_eq!(encode_numeric(Some(-5.0), &c, &enc), "cluster_0");
        assert_eq!(encode_numeric(None, &c, &enc), "columna_empty");
    }

    #[test]
    fn kmeans_needs_k_distinct_values() {
        let c = col(NumericMode::Kmeans { k: 3 });
        let vals = [Some(1.0), Some(1.0), None, Some(2.0)];
        let err = fit_numeric_encoder(&vals, &c).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientData {
                needed: 3,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn kmeans_with_heavy_duplicates_keeps_k_clusters() {
        let vals: Vec<f64> = [1.0; 9].into_iter().chain([2.0]).collect();
        let c = kmeans_1d(&vals, 2, "x").unwrap();
        assert_eq!(c, vec![1.0, 2.0]);
    }

    /// Least SSE over every split of sorted `xs` into `k` non-empty runs.
    fn brute_sse(xs: &[f64], k: usize) -> f64 {
        let sse = |r: &[f64]| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        if k == 1 {
            return sse(xs);
        }
        (1..=xs.len() - (k - 1))
            .map(|c| sse(&xs[..c]) + brute_sse(&xs[c..], k - 1))
            .fold(f64::INFINITY, f64::min)
    }

    proptest::proptest! {
        #[test]
        fn kmeans_fit_is_optimal(vals in proptest::collection::vec(-50i32..50, 1..9), k in 1usize..4) {
            let vals: Vec<f64> = vals.into_iter().map(f64::from).collect();
            let mut distinct = vals.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            proptest::prop_assume!(distinct.len() >= k);
            let c = kmeans_1d(&vals, k, "x").unwrap();
            let got: f64 = vals.iter().map(|x| c.iter().map(|m| (x - m).powi(2)).fold(f64::INFINITY, f64::min)).sum();
            // duplicates never straddle runs in an optimum, so distinct-run brute force suffices
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            proptest::prop_assert!((got - brute_sse(&sorted, k)).abs() < 1e-9);
            proptest::prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn kmeans_escapes_lloyd_fixed_point() {
        // quantile-seeded Lloyd stops at {1,2,4}|{7,11,16} (SSE 45.3)
        let c = kmeans_1d(&[1.0, 2.0, 4.0, 7.0, 11.0, 16.0], 2, "x").unwrap();
        assert_eq!(c, vec![3.5, 13.5]);
    }

    #[test]
    fn range_rule_names() {
        let c = col(NumericMode::RangeRule {
            bins: vec![
                RangeBin {
                    name: "choc_med".into(),
                    upper: Some(50.0),
                },
                RangeBin {
                    name: "choc_dark".into(),
                    upper: None,
                },
            ],
        });
        let enc = enc_for(&c);
        assert_eq!(encode_numeric(Some(35.0), &c, &enc), "choc_med");
        assert_eq!(encode_numeric(Some(80.0), &c, &enc), "choc_dark");
        let bounded = col(NumericMode::RangeRule {
            bins: vec![RangeBin {
                name: "low".into(),
                upper: Some(1.0),
            }],
        });
        assert_eq!(
            encode_numeric(Some(2.0), &bounded, &enc_for(&bounded)),
            "columna_out_of_range"
        );
    }
}
