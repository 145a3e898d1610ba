//! Pairwise preference study aggregation and significance testing.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    MethodA,
    MethodB,
    Tie,
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "method_a" => Ok(Choice::MethodA),
            "b" | "method_b" => Ok(Choice::MethodB),
            "tie" => Ok(Choice::Tie),
            other => Err(Error::InvalidArgument(format!(
                "unknown choice {other:?} (expected a, b or tie)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteRecord {
    pub item: String,
    pub rater: String,
    pub choice: Choice,
}

/// Majority over `a` vs `b` votes, ignoring tie votes and undecided items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MajorityColumn {
    pub items_method_a: usize,
    pub items_method_b: usize,
    pub items_undecided: usize,
    pub pct_method_a: f64,
    pub pct_method_b: f64,
}

/// Tied items first, then the majority split of the remaining items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiedColumn {
    pub tied_items: usize,
    pub pct_tied_items: f64,
    pub items_method_a: usize,
    pub items_method_b: usize,
    pub pct_method_a: f64,
    pub pct_method_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoteTotals {
    pub votes_method_a: usize,
    pub votes_method_b: usize,
    pub votes_tie: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MajorityReport {
    pub items: usize,
    #[serde(rename = "A")]
    pub majority: MajorityColumn,
    #[serde(rename = "B")]
    pub tied: TiedColumn,
    #[serde(rename = "C")]
    pub totals: VoteTotals,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Aggregates per-item votes into the three preference summaries.
///
/// An item is *tied* when tie votes are at least as many as either
/// method's votes, or when both methods drew equally.
pub fn majority_analysis(votes: &[VoteRecord]) -> Result<MajorityReport> {
    if votes.is_empty() {
        return Err(Error::InvalidArgument("no votes".into()));
    }
    let mut seen = HashSet::new();
    let mut per_item: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for v in votes {
        if !seen.insert((v.item.as_str(), v.rater.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "duplicate vote for item {:?} by rater {:?}",
                v.item, v.rater
            )));
        }
        let counts = per_item.entry(v.item.as_str()).or_default();
        counts[match v.choice {
            Choice::MethodA => 0,
            Choice::MethodB => 1,
            Choice::Tie => 2,
        }] += 1;
    }

    let (mut maj_a, mut maj_b, mut undecided) = (0, 0, 0);
    let (mut tied, mut nt_a, mut nt_b) = (0, 0, 0);
    let mut totals = [0usize; 3];
    for &[a, b, t] in per_item.values() {
        totals[0] += a;
        totals[1] += b;
        totals[2] += t;
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => maj_a += 1,
            std::cmp::Ordering::Less => maj_b += 1,
            std::cmp::Ordering::Equal => undecided += 1,
        }
        if a == b || t >= a.max(b) {
            tied += 1;
        } else if a > b {
            nt_a += 1;
        } else {
            nt_b += 1;
        }
    }

    let items = per_item.len();
    Ok(MajorityReport {
        items,
        majority: MajorityColumn {
            items_method_a: maj_a,
            items_method_b: maj_b,
            items_undecided: undecided,
            pct_method_a: pct(maj_a, maj_a + maj_b),
            pct_method_b: pct(maj_b, maj_a + maj_b),
        },
        tied: TiedColumn {
            tied_items: tied,
            pct_tied_items: pct(tied, items),
            items_method_a: nt_a,
            items_method_b: nt_b,
            pct_method_a: pct(nt_a, nt_a + nt_b),
            pct_method_b: pct(nt_b, nt_a + nt_b),
        },
        totals: VoteTotals {
            votes_method_a: totals[0],
            votes_method_b: totals[1],
            votes_tie: totals[2],
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson chi-squared test of independence on a 2x2 table with Yates's
/// continuity correction:
/// `N (max(0, |ad - bc| - N/2))^2 / (r1 r2 c1 c2)`, one degree of freedom.
pub fn chi_squared_yates(table: [[f64; 2]; 2]) -> Result<ChiSquared> {
    let [[a, b], [c, d]] = table;
    if [a, b, c, d].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("counts must be finite and non-negative".into()));
    }
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if [r1, r2, c1, c2].iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument("every row and column marginal must be positive".into()));
    }
    let n = r1 + r2;
    let base = ((a * d - b * c).abs() - n / 2.0).max(0.0);
    let statistic = n * base * base / (r1 * r2 * c1 * c2);
    Ok(ChiSquared {
        statistic,
        p_value: chi_squared_sf_1df(statistic),
    })
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Upper tail of the chi-squared distribution with one degree of freedom,
/// `Q(1/2, x/2)` (regularized upper incomplete gamma).
///
/// Below `x/2 = 1.5` the lower series
/// `P(a, y) = y^a e^-y / Gamma(a + 1) * sum_k y^k / ((a+1)...(a+k))` is summed
/// and complemented; above it the Legendre continued fraction for `Q` is
/// evaluated with the modified Lentz method. Both stop at relative term size
/// `1e-16`, leaving absolute error well under `1e-10`.
pub fn chi_squared_sf_1df(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    let a = 0.5;
    let y = 0.5 * x;
    // Gamma(1/2) = sqrt(pi); Gamma(3/2) = sqrt(pi) / 2.
    let prefactor = (a * y.ln() - y).exp();
    if y < 1.5 {
        let mut term = 1.0;
        let mut sum = term;
        let mut k = 1.0;
        while term > sum * 1e-17 {
            term *= y / (a + k);
            sum += term;
            k += 1.0;
        }
        let p = prefactor / (SQRT_PI / 2.0) * sum;
        (1.0 - p).clamp(0.0, 1.0)
    } else {
        let tiny = 1e-300;
        let mut b = y + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut i = 1.0;
        loop {
            let an = -i * (i - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 || i > 1000.0 {
                break;
            }
            i += 1.0;
        }
        (prefactor / SQRT_PI * h).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared as Chi2, ContinuousCDF};

    fn votes(items: &[(&str, &[(Choice, usize)])]) -> Vec<VoteRecord> {
        let mut out = Vec::new();
        for (item, counts) in items {
            let mut r = 0;
            for &(choice, n) in counts.iter() {
                for _ in 0..n {
                    out.push(VoteRecord {
                        item: item.to_string(),
                        rater: format!("r{r}"),
                        choice,
                    });
                    r += 1;
                }
            }
        }
        out
    }

    use Choice::{MethodA as A, MethodB as B, Tie as T};

    #[test]
    fn three_item_hand_count() {
        let v = votes(&[("1", &[(A, 3)]), ("2", &[(B, 2), (A, 1)]), ("3", &[(T, 2), (A, 1)])]);
        let r = majority_analysis(&v).unwrap();
        assert_eq!(r.items, 3);
        assert_eq!((r.tied.items_method_a, r.tied.items_method_b, r.tied.tied_items), (1, 1, 1));
        assert_eq!((r.tied.pct_method_a, r.tied.pct_method_b), (50.0, 50.0));
        assert!((r.tied.pct_tied_items - 100.0 / 3.0).abs() < 1e-12);
        // Ignoring tie votes, item 3 goes to A.
        assert_eq!((r.majority.items_method_a, r.majority.items_method_b), (2, 1));
        assert_eq!(
            r.totals,
            VoteTotals {
                votes_method_a: 5,
                votes_method_b: 2,
                votes_tie: 2
            }
        );
    }

    #[test]
    fn all_ties() {
        let v = votes(&[("x", &[(T, 4)]), ("y", &[(T, 2)])]);
        let r = majority_analysis(&v).unwrap();
        assert_eq!(r.tied.pct_tied_items, 100.0);
        assert_eq!(r.majority.items_method_a + r.majority.items_method_b, 0);
        assert_eq!(r.majority.items_undecided, 2);
        assert_eq!((r.majority.pct_method_a, r.majority.pct_method_b), (0.0, 0.0));
        assert_eq!((r.tied.pct_method_a, r.tied.pct_method_b), (0.0, 0.0));
    }

    #[test]
    fn equal_split_counts_as_tied() {
        let v = votes(&[("x", &[(A, 2), (B, 2), (T, 1)]), ("y", &[(A, 1), (B, 3)])]);
        let r = majority_analysis(&v).unwrap();
        assert_eq!(r.tied.tied_items, 1);
        assert_eq!(r.tied.items_method_b, 1);
        assert_eq!(r.majority.items_undecided, 1);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(majority_analysis(&[]).is_err());
        let mut v = votes(&[("x", &[(A, 1)])]);
        v.push(v[0].clone());
        assert!(majority_analysis(&v).is_err());
    }

    #[test]
    fn choice_parsing() {
        assert_eq!("A".parse::<Choice>().unwrap(), A);
        assert_eq!(" method_b ".parse::<Choice>().unwrap(), B);
        assert_eq!("tie".parse::<Choice>().unwrap(), T);
        assert!("maybe".parse::<Choice>().is_err());
    }

    #[test]
    fn uniform_table_has_no_association() {
        let r = chi_squared_yates([[10.0, 10.0], [10.0, 10.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn textbook_table() {
        let r = chi_squared_yates([[30.0, 10.0], [10.0, 30.0]]).unwrap();
        // 80 * (800 - 40)^2 / 40^4
        assert!((r.statistic - 18.05).abs() < 1e-12);
        let reference = 1.0 - Chi2::new(1.0).unwrap().cdf(18.05);
        assert!((r.p_value - reference).abs() < 1e-10);
        assert!((r.p_value - 2.1e-5).abs() < 0.1e-5);
        let swapped = chi_squared_yates([[30.0, 10.0], [10.0, 30.0]].map(|r| [r[1], r[0]])).unwrap();
        let flipped = chi_squared_yates([[30.0, 10.0], [10.0, 30.0]].into_iter().rev().collect::<Vec<_>>().try_into().unwrap()).unwrap();
        assert_eq!(swapped, r);
        assert_eq!(flipped, r);
    }

    #[test]
    fn rejects_zero_marginals() {
        assert!(chi_squared_yates([[0.0, 0.0], [3.0, 4.0]]).is_err());
        assert!(chi_squared_yates([[0.0, 5.0], [0.0, 4.0]]).is_err());
        assert!(chi_squared_yates([[-1.0, 5.0], [2.0, 4.0]]).is_err());
    }

    #[test]
    fn tail_matches_reference_distribution() {
        let dist = Chi2::new(1.0).unwrap();
        for x in [1e-8, 1e-3, 0.1, 0.5, 1.0, 2.0, 2.9, 3.0, 3.1, 3.84, 6.63, 10.0, 18.05, 40.0, 100.0, 300.0] {
            let reference = dist.sf(x);
            let ours = chi_squared_sf_1df(x);
            assert!((ours - reference).abs() < 1e-10, "x={x}: {ours} vs {reference}");
            if reference > 1e-200 {
                assert!(((ours - reference) / reference).abs() < 1e-8, "x={x}");
            }
        }
        assert_eq!(chi_squared_sf_1df(0.0), 1.0);
    }
}
