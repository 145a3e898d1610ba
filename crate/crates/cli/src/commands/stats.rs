use std::collections::HashSet;
use std::fs::File;
use std::path::PathBuf;

use click2mask::metrics::{chi_squared_yates, majority_analysis, ChiSquared, Choice, MajorityReport, VoteRecord};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Reads `item_id,rater_id,choice` rows; a first row of `item_id,rater_id,choice` is skipped.
pub fn read_votes(reader: impl std::io::Read) -> CliResult<Vec<VoteRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut votes = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in csv.records().enumerate() {
        let row = row.map_err(|e| CliError::Usage(format!("votes CSV: {e}")))?;
        let line = row.position().map_or(i as u64 + 1, |p| p.line());
        if row.len() != 3 {
            return Err(CliError::Usage(format!(
                "votes CSV line {line}: expected 3 fields (item_id,rater_id,choice), found {}",
                row.len()
            )));
        }
        if i == 0 && row[2].eq_ignore_ascii_case("choice") {
            continue;
        }
        if row[0].is_empty() || row[1].is_empty() {
            return Err(CliError::Usage(format!("votes CSV line {line}: empty item or rater id")));
        }
        let choice: Choice = row[2]
            .parse()
            .map_err(|e| CliError::Usage(format!("votes CSV line {line}: {e}")))?;
        if !seen.insert((row[0].to_owned(), row[1].to_owned())) {
            return Err(CliError::Usage(format!(
                "votes CSV line {line}: rater {:?} already voted on item {:?}",
                &row[1], &row[0]
            )));
        }
        votes.push(VoteRecord {
            item: row[0].to_owned(),
            rater: row[1].to_owned(),
            choice,
        });
    }
    if votes.is_empty() {
        return Err(CliError::Usage("votes CSV contains no votes".into()));
    }
    Ok(votes)
}

/// Observed split against an even split of the same total.
#[derive(Debug, Serialize)]
pub struct SplitTest {
    pub method_a: usize,
    pub method_b: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl SplitTest {
    fn new(a: usize, b: usize) -> Self {
        let half = (a + b) as f64 / 2.0;
        let result: Option<ChiSquared> = chi_squared_yates([[a as f64, b as f64], [half, half]]).ok();
        Self {
            method_a: a,
            method_b: b,
            statistic: result.map(|r| r.statistic),
            p_value: result.map(|r| r.p_value),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Significance {
    pub votes: SplitTest,
    #[serde(rename = "A")]
    pub majority_items: SplitTest,
    #[serde(rename = "B")]
    pub non_tied_items: SplitTest,
}

#[derive(Debug, Serialize)]
pub struct StatsOutput {
    pub report: MajorityReport,
    pub significance: Significance,
}

pub fn analyse(votes: &[VoteRecord]) -> CliResult<StatsOutput> {
    let report = majority_analysis(votes)?;
    let significance = Significance {
        votes: SplitTest::new(report.totals.votes_method_a, report.totals.votes_method_b),
        majority_items: SplitTest::new(report.majority.items_method_a, report.majority.items_method_b),
        non_tied_items: SplitTest::new(report.tied.items_method_a, report.tied.items_method_b),
    };
    Ok(StatsOutput { report, significance })
}

pub fn run(path: PathBuf) -> CliResult<()> {
    let file = File::open(&path).map_err(CliError::io(&path))?;
    let out = analyse(&read_votes(file)?)?;
    println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
    Ok(())
}
