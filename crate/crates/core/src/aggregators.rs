//! Network-level aggregators of per-layer energies and the axiom checks
//! that single out the arithmetic mean.

use crate::error::{Error, Result};
use crate::stats::{compensated_sum, mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Am,
    Gm,
    Hm,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Am, Aggregator::Gm, Aggregator::Hm];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Am => "AM",
            Aggregator::Gm => "GM",
            Aggregator::Hm => "HM",
        }
    }
}

/// Per-layer energies with an optional partition into layer groups.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector {
    values: Vec<f64>,
    partition: Option<Vec<Vec<usize>>>,
}

impl EnergyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("energy vector is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Invalid(format!("energies must be finite and non-negative, got {v}")));
        }
        Ok(Self { values, partition: None })
    }

    /// Attach a partition given as 0-based index groups; groups must be
    /// non-empty, disjoint and cover every index.
    pub fn with_partition(mut self, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; self.values.len()];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Invalid("partition has an empty group".into()));
            }
            for &i in g {
                match seen.get_mut(i) {
                    None => return Err(Error::Invalid(format!("partition index {i} out of range"))),
                    Some(true) => return Err(Error::Invalid(format!("index {i} appears in two groups"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("partition misses index {i}")));
        }
        self.partition = Some(groups);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> Option<&[Vec<usize>]> {
        self.partition.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn require_positive(values: &[f64], kind: Aggregator) -> Result<()> {
    match values.iter().find(|v| !(**v > 0.0)) {
        Some(v) => Err(Error::Invalid(format!("{} needs strictly positive energies, got {v}", kind.name()))),
        None => Ok(()),
    }
}

/// AM, GM or HM of a slice. GM is evaluated in log space.
pub fn aggregate_values(values: &[f64], kind: Aggregator) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty vector".into()));
    }
    let n = values.len() as f64;
    match kind {
        Aggregator::Am => Ok(mean(values)),
        Aggregator::Gm => {
            require_positive(values, kind)?;
            Ok((compensated_sum(values.iter().map(|v| v.ln())) / n).exp())
        }
        Aggregator::Hm => {
            require_positive(values, kind)?;
            Ok(n / compensated_sum(values.iter().map(|v| 1.0 / v)))
        }
    }
}

pub fn aggregate(v: &EnergyVector, kind: Aggregator) -> Result<f64> {
    aggregate_values(&v.values, kind)
}

/// |M(S) − Σ_j |G_j|·M(S_{G_j}) / L|: how far the aggregator is from
/// combining group aggregates by group size.
pub fn merge_consistency_gap(v: &EnergyVector, kind: Aggregator) -> Result<f64> {
    let groups = v.partition().ok_or_else(|| Error::Invalid("merge consistency needs a partition".into()))?;
    let whole = aggregate(v, kind)?;
    let parts = groups
        .iter()
        .map(|g| {
            let sub: Vec<f64> = g.iter().map(|&i| v.values[i]).collect();
            Ok(g.len() as f64 * aggregate_values(&sub, kind)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((whole - compensated_sum(parts) / v.len() as f64).abs())
}

/// GM and AM of (ε, 1/ε, 1, …, 1) with L entries.
pub fn gm_cancellation(eps: f64, depth: usize) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps <= 1.0) || depth < 2 {
        return Err(Error::Invalid(format!("need 0 < eps <= 1 and L >= 2, got eps = {eps}, L = {depth}")));
    }
    let v = cancellation_vector(eps, depth);
    // ln(1/ε) is taken as −ln ε so the pair cancels exactly in log space.
    let log_sum = compensated_sum([eps.ln(), -eps.ln()].into_iter().chain(v[2..].iter().map(|x| x.ln())));
    let gm = (log_sum / depth as f64).exp();
    Ok((gm, aggregate_values(&v, Aggregator::Am)?))
}

/// The vector (ε, 1/ε, 1, …, 1) of length L.
pub fn cancellation_vector(eps: f64, depth: usize) -> Vec<f64> {
    let mut v = vec![1.0; depth];
    v[0] = eps;
    if depth > 1 {
        v[1] = 1.0 / eps;
    }
    v
}

/// ∂H/∂S_i = H² / (L·S_i²).
pub fn hm_sensitivity(v: &EnergyVector, i: usize) -> Result<f64> {
    if i >= v.len() {
        return Err(Error::Invalid(format!("index {i} out of range for {} layers", v.len())));
    }
    let h = aggregate(v, Aggregator::Hm)?;
    Ok(h * h / (v.len() as f64 * v.values[i] * v.values[i]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitGaps {
    pub am: f64,
    pub gm: f64,
    pub hm: f64,
}

/// Compare aggregates before and after splitting each block into layers.
///
/// The AM gap compares block-level mean energy (total energy per block);
/// the GM and HM gaps compare the coarse block vector with the refined
/// layer vector. Every refinement must keep its block's total.
pub fn block_split_invariance(blocks: &[f64], refinement: &[Vec<f64>]) -> Result<SplitGaps> {
    if blocks.len() != refinement.len() {
        return Err(Error::Invalid(format!("{} blocks but {} refinements", blocks.len(), refinement.len())));
    }
    for (b, (&s, parts)) in blocks.iter().zip(refinement).enumerate() {
        let total = compensated_sum(parts.iter().copied());
        if parts.is_empty() || (total - s).abs() > 1e-12 * s.abs().max(1.0) {
            return Err(Error::Invalid(format!("refinement of block {b} sums to {total}, block energy is {s}")));
        }
    }
    let layers: Vec<f64> = refinement.iter().flatten().copied().collect();
    let am = (aggregate_values(blocks, Aggregator::Am)? - compensated_sum(layers.iter().copied()) / blocks.len() as f64).abs();
    let gm = (aggregate_values(blocks, Aggregator::Gm)? - aggregate_values(&layers, Aggregator::Gm)?).abs();
    let hm = (aggregate_values(blocks, Aggregator::Hm)? - aggregate_values(&layers, Aggregator::Hm)?).abs();
    Ok(SplitGaps { am, gm, hm })
}

/// Coefficient of variation (population standard deviation over mean).
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = mean(&values.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>());
    var.sqrt() / m
}

/// Share of Var(Σ S_ℓ) carried by cross-layer covariances, from per-replicate
/// layer-energy rows.
pub fn cross_layer_covariance_share(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::Insufficient("covariance share needs at least two rows".into()));
    }
    let l = rows[0].len();
    if rows.iter().any(|r| r.len() != l) {
        return Err(Error::Invalid("rows have different lengths".into()));
    }
    let means: Vec<f64> = (0..l).map(|j| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let (mut diag, mut off) = (0.0, 0.0);
    for a in 0..l {
        for b in 0..l {
            let c = compensated_sum(rows.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b]))) / (rows.len() - 1) as f64;
            if a == b {
                diag += c;
            } else {
                off += c;
            }
        }
    }
    Ok(off / (diag + off))
}

/// One row of the axiom table.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomCheck {
    pub axiom: &'static str,
    pub claim: String,
    pub witness: String,
    pub passed: bool,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(", "))
}

/// Evaluate every axiom and counterexample on its witness vector.
pub fn axiom_checks() -> Result<Vec<AxiomCheck>> {
    let mut out = Vec::new();

    let w = EnergyVector::new(vec![1.0, 3.0, 8.0])?.with_partition(vec![vec![0, 1], vec![2]])?;
    let am = merge_consistency_gap(&w, Aggregator::Am)?;
    let gm = merge_consistency_gap(&w, Aggregator::Gm)?;
    let hm = merge_consistency_gap(&w, Aggregator::Hm)?;
    out.push(AxiomCheck {
        axiom: "A1",
        claim: format!("merge gaps AM {am:.1e}, GM {gm:.3}, HM {hm:.3}"),
        witness: format!("{} groups {{1,2}},{{3}}", fmt_vec(w.values())),
        passed: am <= 1e-12 && gm > 0.0 && hm > 0.0,
    });

    let v = [0.3, 2.5, 7.0, 1.25];
    let total: f64 = v.iter().sum();
    let am = aggregate_values(&v, Aggregator::Am)?;
    out.push(AxiomCheck {
        axiom: "A2",
        claim: format!("L·AM = {} vs Σ = {total}", am * v.len() as f64),
        witness: fmt_vec(&v),
        passed: (am * v.len() as f64 - total).abs() <= 1e-12 * total,
    });

    let (lo, hi) = (0.5, 2.0);
    let v = [0.5, 1.7, 2.0, 0.9];
    let am = aggregate_values(&v, Aggregator::Am)?;
    out.push(AxiomCheck {
        axiom: "A3",
        claim: format!("{lo} <= AM = {am} <= {hi}"),
        witness: fmt_vec(&v),
        passed: lo <= am && am <= hi,
    });

    let (gm, am) = gm_cancellation(0.01, 10)?;
    out.push(AxiomCheck {
        axiom: "A4",
        claim: format!("GM = {gm}, AM = {am:.4}"),
        witness: fmt_vec(&cancellation_vector(0.01, 10)),
        passed: (gm - 1.0).abs() <= 1e-12 && am > 10.0,
    });

    let mut v = vec![1.0; 4];
    v[0] = 0.01;
    let ev = EnergyVector::new(v.clone())?;
    let d = hm_sensitivity(&ev, 0)?;
    let base = hm_sensitivity(&EnergyVector::new(vec![1.0; 4])?, 0)?;
    out.push(AxiomCheck {
        axiom: "A5",
        claim: format!("∂H/∂S_1 = {d:.3} vs {base} at all-ones"),
        witness: fmt_vec(&v),
        passed: (base - 0.25).abs() < 1e-15 && d > base,
    });

    let gaps = block_split_invariance(&[2.0, 2.0], &[vec![1.0, 1.0], vec![2.0]])?;
    out.push(AxiomCheck {
        axiom: "A6",
        claim: format!("split gaps AM {}, GM {:.3}, HM {:.3}", gaps.am, gaps.gm, gaps.hm),
        witness: "blocks (2),(2) refined to (1,1),(2)".into(),
        passed: gaps.am == 0.0 && gaps.gm > 0.0,
    });

    let v = [1.0, 1.03, 0.98, 1.01, 0.99];
    let cv = coefficient_of_variation(&v);
    let am = aggregate_values(&v, Aggregator::Am)?;
    let dev = v.iter().map(|s| (s - am).abs() / am).fold(0.0, f64::max);
    out.push(AxiomCheck {
        axiom: "A7",
        claim: format!("CV {cv:.4} < 0.05 and max deviation {dev:.4} < 0.1"),
        witness: fmt_vec(&v),
        passed: cv < 0.05 && dev < 0.1,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EnergyVector {
        EnergyVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn small_examples() {
        let v = ev(&[1.0, 4.0]);
        assert!((aggregate(&v, Aggregator::Hm).unwrap() - 1.6).abs() < 1e-15);
        assert!((aggregate(&v, Aggregator::Gm).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(aggregate(&v, Aggregator::Am).unwrap(), 2.5);
        let a4 = ev(&cancellation_vector(0.01, 4));
        assert!((aggregate(&a4, Aggregator::Am).unwrap() - 25.5025).abs() < 1e-12);
        assert!((aggregate(&a4, Aggregator::Gm).unwrap() - 1.0).abs() < 1e-14);
        assert!(aggregate(&ev(&[1.0, 0.0]), Aggregator::Gm).is_err());
        assert!(aggregate(&ev(&[1.0, 0.0]), Aggregator::Hm).is_err());
        for k in Aggregator::ALL {
            assert!((aggregate(&ev(&[3.5; 5]), k).unwrap() - 3.5).abs() < 1e-14);
        }
    }

    #[test]
    fn cancellation() {
        let (gm, am) = gm_cancellation(0.01, 10).unwrap();
        assert_eq!(gm, 1.0);
        assert!((am - (0.01 + 100.0 + 8.0) / 10.0).abs() < 1e-12);
        assert!((am - 10.801).abs() < 1e-12);
        assert_eq!(gm_cancellation(1.0, 3).unwrap(), (1.0, 1.0));
        let mut prev = 0.0;
        for p in 1..=6 {
            let (gm, am) = gm_cancellation(10f64.powi(-p), 8).unwrap();
            assert!((gm - 1.0).abs() < 1e-12 && am > prev);
            prev = am;
        }
    }

    #[test]
    fn merge_gaps() {
        let w = ev(&[1.0, 3.0, 8.0]).with_partition(vec![vec![0, 1], vec![2]]).unwrap();
        assert!(merge_consistency_gap(&w, Aggregator::Am).unwrap() <= 1e-12);
        assert!(merge_consistency_gap(&w, Aggregator::Gm).unwrap() > 0.1);
        let singles = ev(&[1.0, 4.0]).with_partition(vec![vec![0], vec![1]]).unwrap();
        assert!(merge_consistency_gap(&singles, Aggregator::Gm).unwrap() > 0.0);
        let a4 = ev(&cancellation_vector(0.01, 4)).with_partition(vec![vec![0, 1], vec![2], vec![3]]).unwrap();
        assert!(merge_consistency_gap(&a4, Aggregator::Hm).unwrap() > 0.1);
        assert!(ev(&[1.0, 2.0]).with_partition(vec![vec![0]]).is_err());
        assert!(ev(&[1.0, 2.0]).with_partition(vec![vec![0, 1], vec![1]]).is_err());
        assert!(merge_consistency_gap(&ev(&[1.0]), Aggregator::Am).is_err());
    }

    #[test]
    fn sensitivity() {
        let ones = ev(&[1.0; 4]);
        for i in 0..4 {
            assert!((hm_sensitivity(&ones, i).unwrap() - 0.25).abs() < 1e-15);
        }
        assert!(hm_sensitivity(&ones, 4).is_err());
        let small = ev(&[0.01, 1.0, 1.0, 1.0]);
        let tiny = ev(&[0.001, 1.0, 1.0, 1.0]);
        assert!(hm_sensitivity(&tiny, 0).unwrap() > hm_sensitivity(&small, 0).unwrap());
    }

    #[test]
    fn block_splits() {
        let g = block_split_invariance(&[2.0, 2.0], &[vec![1.0, 1.0], vec![2.0]]).unwrap();
        assert_eq!(g.am, 0.0);
        assert!(g.gm > 0.5 && g.hm > 0.0);
        let id = block_split_invariance(&[2.0, 5.0], &[vec![2.0], vec![5.0]]).unwrap();
        assert_eq!(id, SplitGaps { am: 0.0, gm: 0.0, hm: 0.0 });
        assert!(block_split_invariance(&[2.0], &[vec![1.0, 1.5]]).is_err());
    }

    #[test]
    fn covariance_share_of_independent_columns_is_zero() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![1.0, 4.0], vec![3.0, 4.0]];
        assert!(cross_layer_covariance_share(&rows).unwrap().abs() < 1e-15);
    }

    #[test]
    fn all_axioms_pass() {
        assert!(axiom_checks().unwrap().iter().all(|c| c.passed));
    }
}
