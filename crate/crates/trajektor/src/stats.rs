//! Nonparametric significance tests across groups: Kruskal–Wallis and
//! pairwise Wilcoxon rank-sum.

use std::io::Write;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Which procedure produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    KruskalWallis,
    /// Exact rank-sum distribution (small samples, no ties).
    WilcoxonExact,
    /// Normal approximation with tie correction and continuity correction.
    WilcoxonNormal,
}

impl TestMethod {
    pub fn token(&self) -> &'static str {
        match self {
            TestMethod::KruskalWallis => "kruskal_wallis",
            TestMethod::WilcoxonExact => "wilcoxon_exact",
            TestMethod::WilcoxonNormal => "wilcoxon_normal",
        }
    }
}

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub group_sizes: Vec<usize>,
}

/// Midranks of the pooled values plus the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Kruskal–Wallis H test over two or more groups, with midrank ties and the
/// usual tie correction. When every pooled value is identical the data carry
/// no rank information: statistic 0, p-value 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "kruskal-wallis needs at least two groups".into(),
        ));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let group_sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let n: usize = group_sizes.iter().sum();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "kruskal-wallis needs at least three observations".into(),
        ));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }
    let (ranks, ties) = midranks(&pooled);

    let nf = n as f64;
    let mut h = 0.0;
    let mut offset = 0;
    for g in groups {
        let r_sum: f64 = ranks[offset..offset + g.len()].iter().sum();
        h += r_sum * r_sum / g.len() as f64;
        offset += g.len();
    }
    h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);

    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let correction = 1.0 - tie_term / (nf * nf * nf - nf);
    if correction <= 0.0 {
        // All values identical.
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: TestMethod::KruskalWallis,
            group_sizes,
        });
    }
    let statistic = h / correction;
    let df = (groups.len() - 1) as f64;
    let p_value = ChiSquared::new(df).unwrap().sf(statistic).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic,
        p_value,
        method: TestMethod::KruskalWallis,
        group_sizes,
    })
}

/// Largest group size for which the exact rank-sum distribution is used.
pub const WILCOXON_EXACT_LIMIT: usize = 12;

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) test.
///
/// The exact distribution is used when both groups have at most
/// [`WILCOXON_EXACT_LIMIT`] values and the pooled data have no ties;
/// otherwise the normal approximation with tie-corrected variance and a 0.5
/// continuity correction. The statistic reported is the Mann–Whitney U of
/// `x`.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let m = x.len();
    let n = y.len();
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }
    let (ranks, ties) = midranks(&pooled);
    let w_x: f64 = ranks[..m].iter().sum();
    let u_x = w_x - (m * (m + 1)) as f64 / 2.0;
    let has_ties = ties.iter().any(|&t| t > 1);
    let group_sizes = vec![m, n];

    if m <= WILCOXON_EXACT_LIMIT && n <= WILCOXON_EXACT_LIMIT && !has_ties {
        let u = u_x.round() as i64;
        let p_value = exact_two_sided_p(u, m, n);
        return Ok(TestResult {
            statistic: u_x,
            p_value,
            method: TestMethod::WilcoxonExact,
            group_sizes,
        });
    }

    let mf = m as f64;
    let nf = n as f64;
    let total = mf + nf;
    let mean_u = mf * nf / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var_u = mf * nf / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var_u <= 0.0 {
        // Every pooled value identical: no evidence either way.
        return Ok(TestResult {
            statistic: u_x,
            p_value: 1.0,
            method: TestMethod::WilcoxonNormal,
            group_sizes,
        });
    }
    let z = ((u_x - mean_u).abs() - 0.5).max(0.0) / var_u.sqrt();
    let p_value = (2.0 * Normal::standard().sf(z)).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: u_x,
        p_value,
        method: TestMethod::WilcoxonNormal,
        group_sizes,
    })
}

/// Exact two-sided p-value of the Mann–Whitney U statistic for tie-free
/// ranks: twice the smaller tail of the exact U distribution, capped at 1.
fn exact_two_sided_p(u: i64, m: usize, n: usize) -> f64 {
    let max_u = (m * n) as i64;
    let u_min = u.min(max_u - u);
    let counts = u_count_distribution(m, n);
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=(u_min as usize)].iter().sum();
    (2.0 * lower / total).min(1.0)
}

/// Number of ways to choose `m` of the ranks `1..=m+n` achieving each U
/// value; `result[u]` counts arrangements with Mann–Whitney statistic `u`.
fn u_count_distribution(m: usize, n: usize) -> Vec<f64> {
    // Classic recurrence over items: picking each of the m "x" ranks among
    // the pooled order contributes its number of preceding "y" values.
    let max_u = m * n;
    let mut table = vec![vec![0.0f64; max_u + 1]; m + 1];
    table[0][0] = 1.0;
    for item in 1..=(m + n) {
        // Iterate items in pooled rank order; choosing item as an "x" after
        // j-1 previous picks adds (item - j) ... equivalent standard DP:
        for j in (1..=m.min(item)).rev() {
            let add = item - j; // number of y's before this x
            if add > n {
                continue;
            }
            for u in (add..=max_u).rev() {
                let carry = table[j - 1][u - add];
                if carry != 0.0 {
                    table[j][u] += carry;
                }
            }
        }
    }
    table[m].clone()
}

/// Every pairwise Wilcoxon rank-sum test between groups. Entry `[i][j]` holds
/// the result for groups `i` and `j`; the matrix is symmetric and the
/// diagonal is `None`.
pub fn pairwise_wilcoxon(groups: &[Vec<f64>]) -> Result<Vec<Vec<Option<TestResult>>>> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise tests need at least two groups".into(),
        ));
    }
    let g = groups.len();
    let mut matrix: Vec<Vec<Option<TestResult>>> = vec![vec![None; g]; g];
    for i in 0..g {
        for j in (i + 1)..g {
            let result = wilcoxon_rank_sum(&groups[i], &groups[j])?;
            let mirrored = wilcoxon_rank_sum(&groups[j], &groups[i])?;
            matrix[j][i] = Some(mirrored);
            matrix[i][j] = Some(result);
        }
    }
    Ok(matrix)
}

/// Bonferroni adjustment: multiply by the number of comparisons, cap at 1.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

/// CSV rows `label,group_a,group_b,statistic,p_value,method` for a set of
/// per-label test outcomes.
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
}

pub struct StatsRow {
    pub label: String,
    pub group_a: String,
    pub group_b: String,
    pub result: TestResult,
}

impl StatsReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["label", "group_a", "group_b", "statistic", "p_value", "method"])?;
        for row in &self.rows {
            wtr.write_record([
                row.label.as_str(),
                row.group_a.as_str(),
                row.group_b.as_str(),
                &row.result.statistic.to_string(),
                &row.result.p_value.to_string(),
                row.result.method.token(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
