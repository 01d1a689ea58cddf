//! Classical test theory: proportion correct, inter-item and item-total
//! correlations, Cronbach's alpha. Missing cells are deleted pairwise.

use serde::{Deserialize, Serialize};

use crate::agreement::pearson_r;
use crate::data::{PopulationTag, ResponseMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyKind {
    /// Facility: higher means easier.
    ProportionCorrect,
    RaschB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyVector {
    pub population: PopulationTag,
    pub kind: DifficultyKind,
    pub item_ids: Vec<String>,
    pub values: Vec<f64>,
}

impl DifficultyVector {
    pub fn get(&self, item_id: &str) -> Option<f64> {
        self.item_ids.iter().position(|id| id == item_id).map(|i| self.values[i])
    }

    /// Restrict to the named items in the given order.
    pub fn restrict(&self, item_ids: &[String]) -> Result<DifficultyVector> {
        let values = item_ids
            .iter()
            .map(|id| self.get(id).ok_or_else(|| Error::Misaligned(format!("item `{id}` missing from `{}`", self.population.name))))
            .collect::<Result<Vec<_>>>()?;
        Ok(DifficultyVector { item_ids: item_ids.to_vec(), values, ..self.clone() })
    }
}

pub fn proportion_correct(m: &ResponseMatrix) -> Result<DifficultyVector> {
    let mut values = Vec::with_capacity(m.n_items());
    for (c, id) in m.item_ids().iter().enumerate() {
        let (mut correct, mut seen) = (0usize, 0usize);
        for r in 0..m.n_respondents() {
            if let Some(v) = m.get(r, c) {
                seen += 1;
                correct += v as usize;
            }
        }
        if seen == 0 {
            return Err(Error::NoResponses(id.clone()));
        }
        values.push(correct as f64 / seen as f64);
    }
    Ok(DifficultyVector {
        population: m.population().clone(),
        kind: DifficultyKind::ProportionCorrect,
        item_ids: m.item_ids().to_vec(),
        values,
    })
}

/// Symmetric item × item correlations; `None` marks undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub item_ids: Vec<String>,
    values: Vec<Option<f64>>,
    counts: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn new(item_ids: Vec<String>, values: Vec<Option<f64>>, counts: Vec<usize>) -> Result<Self> {
        let n = item_ids.len();
        if values.len() != n * n || counts.len() != n * n {
            return Err(Error::Shape(format!("correlation matrix for {n} items needs {} entries", n * n)));
        }
        Ok(Self { item_ids, values, counts })
    }

    /// Build from a dense symmetric matrix of defined correlations.
    pub fn from_dense(item_ids: Vec<String>, dense: &[Vec<f64>]) -> Result<Self> {
        let n = item_ids.len();
        let values = dense.iter().flatten().map(|&v| Some(v)).collect();
        Self::new(item_ids, values, vec![0; n * n])
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.len() + j]
    }

    /// Pairwise non-missing respondent count.
    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.len() + j]
    }

    pub fn undefined_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| self.get(i, j).is_none()).collect()
    }
}

/// Pearson (phi) correlation of two binary columns over rows where both are
/// present. Returns (r, n).
fn pairwise_phi(a: &[Option<u8>], b: &[Option<u8>]) -> (Option<f64>, usize) {
    let (mut n, mut sa, mut sb, mut sab) = (0usize, 0usize, 0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            n += 1;
            sa += *x as usize;
            sb += *y as usize;
            sab += (*x & *y) as usize;
        }
    }
    if n < 2 {
        return (None, n);
    }
    // phi = (n·n11 − n1·n·1) / sqrt(n1·(n−n1)·n·1·(n−n·1)), exact in integers up to the sqrt
    let nf = n as f64;
    let num = nf * sab as f64 - sa as f64 * sb as f64;
    let den = (sa as f64 * (nf - sa as f64)) * (sb as f64 * (nf - sb as f64));
    if den <= 0.0 {
        return (None, n);
    }
    (Some((num / den.sqrt()).clamp(-1.0, 1.0)), n)
}

pub fn inter_item_correlation(m: &ResponseMatrix) -> CorrelationMatrix {
    inter_item_correlation_with(m, Execution::Sequential)
}

/// Pairwise-deletion Pearson correlation for every item pair.
pub fn inter_item_correlation_with(m: &ResponseMatrix, exec: Execution) -> CorrelationMatrix {
    let k = m.n_items();
    let columns: Vec<Vec<Option<u8>>> = (0..k).map(|c| m.column(c)).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let results = exec.map(pairs.len(), |p| {
        let (i, j) = pairs[p];
        pairwise_phi(&columns[i], &columns[j])
    });
    let mut values = vec![None; k * k];
    let mut counts = vec![0; k * k];
    for (&(i, j), &(r, n)) in pairs.iter().zip(&results) {
        let r = if i == j { r.map(|_| 1.0) } else { r };
        values[i * k + j] = r;
        values[j * k + i] = r;
        counts[i * k + j] = n;
        counts[j * k + i] = n;
    }
    CorrelationMatrix { item_ids: m.item_ids().to_vec(), values, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemTotalVariant {
    /// Item against the rest-score (total without the item).
    #[default]
    Corrected,
    /// Item against the total including itself.
    Uncorrected,
}

/// Item-total correlation per item; `None` where undefined.
///
/// With missing cells the (rest-)score of a respondent is the mean of their
/// answered items, scaled to the item count, so respondents with different
/// answer counts stay comparable. On complete data this equals the plain sum.
pub fn item_total_correlation(m: &ResponseMatrix, variant: ItemTotalVariant) -> Result<Vec<Option<f64>>> {
    let k = m.n_items();
    if k < 2 {
        return Err(Error::InsufficientData(format!("item-total correlation needs >= 2 items, got {k}")));
    }
    if m.n_respondents() < 3 {
        return Err(Error::InsufficientData(format!("item-total correlation needs >= 3 respondents, got {}", m.n_respondents())));
    }
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let (mut xs, mut ts) = (Vec::new(), Vec::new());
        for r in 0..m.n_respondents() {
            let Some(x) = m.get(r, c) else { continue };
            let others =
                m.row(r).iter().enumerate().filter(|&(j, _)| variant == ItemTotalVariant::Uncorrected || j != c).filter_map(|(_, v)| *v);
            let (mut sum, mut cnt) = (0usize, 0usize);
            for v in others {
                sum += v as usize;
                cnt += 1;
            }
            if cnt == 0 {
                continue;
            }
            let span = if variant == ItemTotalVariant::Corrected { k - 1 } else { k };
            xs.push(f64::from(x));
            ts.push(sum as f64 / cnt as f64 * span as f64);
        }
        out.push(if xs.len() >= 2 { pearson_r(&xs, &ts) } else { None });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub alpha: Option<f64>,
    /// Rows kept after listwise deletion.
    pub n_complete: usize,
    pub n_items: usize,
    pub deletion: &'static str,
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Cronbach's alpha on complete rows: (k/(k−1))·(1 − Σσ²ᵢ / σ²_total).
pub fn cronbach_alpha(m: &ResponseMatrix) -> Result<AlphaResult> {
    let k = m.n_items();
    if k < 2 {
        return Err(Error::InsufficientData(format!("alpha needs >= 2 items, got {k}")));
    }
    let rows: Vec<Vec<f64>> =
        (0..m.n_respondents()).filter_map(|r| m.row(r).iter().map(|v| v.map(f64::from)).collect::<Option<Vec<_>>>()).collect();
    let n = rows.len();
    let mut result = AlphaResult { alpha: None, n_complete: n, n_items: k, deletion: "listwise" };
    if n < 2 {
        return Ok(result);
    }
    let item_var: f64 = (0..k).map(|c| sample_variance(&rows.iter().map(|row| row[c]).collect::<Vec<_>>())).sum();
    let totals: Vec<f64> = rows.iter().map(|row| row.iter().sum()).collect();
    let total_var = sample_variance(&totals);
    if total_var > 0.0 {
        let kf = k as f64;
        result.alpha = Some(kf / (kf - 1.0) * (1.0 - item_var / total_var));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PopulationKind;
    use proptest::prelude::*;

    fn matrix(cols: &[&[Option<u8>]]) -> ResponseMatrix {
        let n = cols[0].len();
        let rows: Vec<Vec<Option<u8>>> = (0..n).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        ResponseMatrix::from_rows(
            PopulationTag::new("H", PopulationKind::Human),
            (0..n).map(|i| format!("r{i:02}")).collect(),
            (0..cols.len()).map(|i| format!("i{i}")).collect(),
            &rows,
        )
        .unwrap()
    }

    fn full(bits: &[u8]) -> Vec<Option<u8>> {
        bits.iter().map(|&b| Some(b)).collect()
    }

    #[test]
    fn proportion_correct_examples() {
        let m = matrix(&[&full(&[1, 1, 1, 1]), &[Some(1), Some(0), None, Some(0)]]);
        let d = proportion_correct(&m).unwrap();
        assert_eq!(d.values[0], 1.0);
        assert!((d.values[1] - 1.0 / 3.0).abs() < 1e-15);

        // 4 x 3 fixture, hand counts: col0 2/4, col1 3/3 (one missing), col2 0/4
        let m = matrix(&[&full(&[1, 0, 1, 0]), &[Some(1), None, Some(1), Some(1)], &full(&[0, 0, 0, 0])]);
        assert_eq!(proportion_correct(&m).unwrap().values, vec![0.5, 1.0, 0.0]);

        let m = matrix(&[&full(&[1, 0]), &[None, None]]);
        assert_eq!(proportion_correct(&m).unwrap_err(), Error::NoResponses("i1".into()));
    }

    #[test]
    fn iic_examples() {
        let a = full(&[1, 1, 0, 0]);
        let b = full(&[1, 0, 1, 0]);
        let comp = full(&[0, 0, 1, 1]);
        let c = inter_item_correlation(&matrix(&[&a, &a, &comp, &b]));
        assert_eq!(c.get(0, 1), Some(1.0));
        assert_eq!(c.get(0, 2), Some(-1.0));
        // Oracle: 2x2 table n11=1, n10=1, n01=1, n00=1 → phi = (1·1 − 1·1)/sqrt(2·2·2·2) = 0.
        assert_eq!(c.get(0, 3), Some(0.0));
        assert_eq!(c.get(2, 2), Some(1.0));
        assert_eq!(c.count(0, 3), 4);
    }

    #[test]
    fn iic_marks_zero_variance_undefined() {
        let c = inter_item_correlation(&matrix(&[&full(&[1, 0, 1]), &full(&[1, 1, 1])]));
        assert_eq!(c.get(0, 1), None);
        assert_eq!(c.get(1, 1), None);
        assert_eq!(c.undefined_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn iic_pairwise_deletion() {
        let a = [Some(1), Some(0), None, Some(1), Some(0)];
        let b = [Some(1), Some(0), Some(1), None, Some(0)];
        let c = inter_item_correlation(&matrix(&[&a, &b]));
        assert_eq!(c.count(0, 1), 3);
        assert_eq!(c.get(0, 1), Some(1.0));
    }

    #[test]
    fn item_total_examples() {
        let a = full(&[1, 0, 1, 1, 0]);
        let m = matrix(&[&a, &a]);
        let it = item_total_correlation(&m, ItemTotalVariant::Corrected).unwrap();
        assert_eq!(it, vec![Some(1.0), Some(1.0)]);

        let comp = full(&[0, 1, 0, 0, 1]);
        let it = item_total_correlation(&matrix(&[&a, &comp]), ItemTotalVariant::Corrected).unwrap();
        assert!((it[0].unwrap() + 1.0).abs() < 1e-12);

        assert!(item_total_correlation(&matrix(&[&a]), ItemTotalVariant::Corrected).is_err());
    }

    #[test]
    fn item_total_independent_item_is_zero() {
        // rest items (b, c) give rest-scores (2,2,1,1,0,0,1,1); item x is
        // balanced within each rest-score level, so cov(x, rest) = 0 exactly.
        let x = full(&[1, 0, 1, 0, 1, 0, 0, 1]);
        let b = full(&[1, 1, 1, 1, 0, 0, 0, 1]);
        let c = full(&[1, 1, 0, 0, 0, 0, 1, 0]);
        let it = item_total_correlation(&matrix(&[&x, &b, &c]), ItemTotalVariant::Corrected).unwrap();
        // brute force: cov of x with rest-score
        let xs = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let rest = [2.0, 2.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let mx = xs.iter().sum::<f64>() / 8.0;
        let mr = rest.iter().sum::<f64>() / 8.0;
        let cov: f64 = xs.iter().zip(&rest).map(|(a, b)| (a - mx) * (b - mr)).sum();
        assert_eq!(cov, 0.0);
        assert!(it[0].unwrap().abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        let a = full(&[1, 0, 1, 1, 0]);
        let r = cronbach_alpha(&matrix(&[&a, &a, &a])).unwrap();
        assert!((r.alpha.unwrap() - 1.0).abs() < 1e-12);

        // 5 x 4 hand fixture
        //   rows: 1111 (4), 1110 (3), 1100 (2), 1000 (1), 0000 (0)
        //   item p = .8 .6 .4 .2 → sample variances p(1−p)·5/4 = .2 .3 .3 .2, Σ = 1.0
        //   totals 4,3,2,1,0 → sample variance 2.5
        //   alpha = 4/3 · (1 − 1/2.5) = 0.8
        let m = matrix(&[&full(&[1, 1, 1, 1, 0]), &full(&[1, 1, 1, 0, 0]), &full(&[1, 1, 0, 0, 0]), &full(&[1, 0, 0, 0, 0])]);
        let r = cronbach_alpha(&m).unwrap();
        assert!((r.alpha.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(r.n_complete, 5);

        let flat = full(&[1, 1, 1]);
        assert_eq!(cronbach_alpha(&matrix(&[&flat, &flat])).unwrap().alpha, None);
    }

    #[test]
    fn alpha_listwise_deletion() {
        let m = matrix(&[&[Some(1), Some(0), None, Some(1)], &full(&[1, 0, 0, 1])]);
        assert_eq!(cronbach_alpha(&m).unwrap().n_complete, 3);
    }

    #[test]
    fn alpha_independent_columns_near_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let a: Vec<Option<u8>> = (0..4000).map(|_| Some(rng.random_range(0..2u8))).collect();
        let b: Vec<Option<u8>> = (0..4000).map(|_| Some(rng.random_range(0..2u8))).collect();
        let alpha = cronbach_alpha(&matrix(&[&a, &b])).unwrap().alpha.unwrap();
        // independent formula: for k = 2, alpha = 2·(1 − (v1+v2)/(v1+v2+2cov)) = 4cov/(v1+v2+2cov)
        let xa: Vec<f64> = a.iter().map(|v| f64::from(v.unwrap())).collect();
        let xb: Vec<f64> = b.iter().map(|v| f64::from(v.unwrap())).collect();
        let n = xa.len() as f64;
        let (ma, mb) = (xa.iter().sum::<f64>() / n, xb.iter().sum::<f64>() / n);
        let cov = xa.iter().zip(&xb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let va = xa.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
        let vb = xb.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (n - 1.0);
        let oracle = 4.0 * cov / (va + vb + 2.0 * cov);
        assert!((alpha - oracle).abs() < 1e-10);
        assert!(alpha.abs() < 0.1, "alpha = {alpha}");
    }

    fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        (den > 0.0).then(|| (n * sxy - sx * sy) / den)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn iic_matches_brute_force(bits in proptest::collection::vec(0u8..2, 80)) {
            let cols: Vec<Vec<Option<u8>>> = bits.chunks(10).map(full).collect();
            let refs: Vec<&[Option<u8>]> = cols.iter().map(Vec::as_slice).collect();
            let m = matrix(&refs);
            let c = inter_item_correlation_with(&m, Execution::Parallel);
            for i in 0..8 {
                for j in 0..8 {
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                    if i == j { continue; }
                    let x: Vec<f64> = cols[i].iter().map(|v| f64::from(v.unwrap())).collect();
                    let y: Vec<f64> = cols[j].iter().map(|v| f64::from(v.unwrap())).collect();
                    match (c.get(i, j), brute_pearson(&x, &y)) {
                        (Some(a), Some(b)) => {
                            prop_assert!((a - b).abs() < 1e-12);
                            prop_assert!((-1.0..=1.0).contains(&a));
                        }
                        (None, None) => {}
                        other => prop_assert!(false, "{:?}", other),
                    }
                }
            }
        }

        #[test]
        fn relabeling_keeps_iic_and_flips_p(
            bits in proptest::collection::vec(proptest::option::of(0u8..2), 36),
        ) {
            let cols: Vec<Vec<Option<u8>>> = bits.chunks(9).map(|c| c.to_vec()).collect();
            let flipped: Vec<Vec<Option<u8>>> = cols.iter().map(|c| c.iter().map(|v| v.map(|b| 1 - b)).collect()).collect();
            let m = matrix(&cols.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let f = matrix(&flipped.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let (cm, cf) = (inter_item_correlation(&m), inter_item_correlation(&f));
            for i in 0..4 {
                for j in 0..4 {
                    match (cm.get(i, j), cf.get(i, j)) {
                        (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                        (a, b) => prop_assert_eq!(a, b),
                    }
                }
            }
            if let (Ok(pm), Ok(pf)) = (proportion_correct(&m), proportion_correct(&f)) {
                for (a, b) in pm.values.iter().zip(&pf.values) {
                    prop_assert!((a + b - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn proportion_correct_row_order_invariant(
            bits in proptest::collection::vec(proptest::option::of(0u8..2), 24),
            rot in 0usize..6,
        ) {
            let cols: Vec<Vec<Option<u8>>> = bits.chunks(6).map(|c| c.to_vec()).collect();
            let rotated: Vec<Vec<Option<u8>>> = cols.iter().map(|c| {
                let mut c = c.clone();
                c.rotate_left(rot);
                c
            }).collect();
            let a = proportion_correct(&matrix(&cols.iter().map(Vec::as_slice).collect::<Vec<_>>()));
            let b = proportion_correct(&matrix(&rotated.iter().map(Vec::as_slice).collect::<Vec<_>>()));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.values, b.values),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false),
            }
        }
    }
}
