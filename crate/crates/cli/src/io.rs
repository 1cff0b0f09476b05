//! CSV ingestion and the file formats shared between commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lendsim::estimate::{ChoiceOption, ChoiceRecord, SubjectCovariates};
use lendsim::pool::{CalibrationTable, CampaignRecord, FixedEffectSet, DECILES};

use crate::error::{CliError, CliResult};
use crate::output::Table;

/// A CSV file held in memory with its header row.
#[derive(Debug, Clone)]
pub struct CsvFile {
    pub path: String,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl CsvFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let display = path.display().to_string();
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&display, &bytes)
    }

    pub fn parse(name: &str, bytes: &[u8]) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Schema(format!("{name}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(CliError::Schema(format!(
                "{name}: empty file, a header row is required"
            )));
        }
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Schema(format!("{name}: {e}")))?;
        Ok(Self {
            path: name.to_string(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Schema(format!("{}: missing column `{name}`", self.path)))
    }

    pub fn require(&self, names: &[&str]) -> CliResult<Vec<usize>> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| !self.headers.iter().any(|h| h == n))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Schema(format!(
                "{}: missing columns {}",
                self.path,
                missing.join(", ")
            )));
        }
        names.iter().map(|n| self.column(n)).collect()
    }

    /// 1-based line number of data row `i` (the header is line 1).
    pub fn line(i: usize) -> usize {
        i + 2
    }

    fn cell<'a>(&self, row: &'a csv::StringRecord, col: usize) -> &'a str {
        row.get(col).unwrap_or("")
    }

    fn bad(&self, i: usize, col: usize, what: &str) -> CliError {
        let value = self.cell(&self.rows[i], col);
        CliError::Schema(format!(
            "{}: line {}: column `{}`: {what}, got `{value}`",
            self.path,
            Self::line(i),
            self.headers[col]
        ))
    }

    pub fn f64_at(&self, i: usize, col: usize) -> CliResult<f64> {
        self.cell(&self.rows[i], col)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.bad(i, col, "expected a finite number"))
    }

    /// `None` for an empty or NA cell.
    pub fn opt_f64_at(&self, i: usize, col: usize) -> CliResult<Option<f64>> {
        match self.cell(&self.rows[i], col) {
            "" | "NA" | "na" | "NaN" => Ok(None),
            _ => self.f64_at(i, col).map(Some),
        }
    }

    pub fn bool_at(&self, i: usize, col: usize) -> CliResult<bool> {
        match self.cell(&self.rows[i], col) {
            "1" | "true" | "TRUE" | "True" => Ok(true),
            "0" | "false" | "FALSE" | "False" => Ok(false),
            _ => Err(self.bad(i, col, "expected 0 or 1")),
        }
    }

    pub fn str_at(&self, i: usize, col: usize) -> CliResult<String> {
        let s = self.cell(&self.rows[i], col);
        if s.is_empty() {
            return Err(self.bad(i, col, "expected a non-empty value"));
        }
        Ok(s.to_string())
    }
}

pub const CHOICE_COLUMNS: [&str; 7] = [
    "subject_id",
    "pair_id",
    "profile_id",
    "male",
    "smile",
    "bodyshot",
    "chosen",
];

/// Paired choices in long form: two rows per (subject_id, pair_id), exactly
/// one of them with `chosen = 1`.
pub fn read_choices(path: &Path) -> CliResult<Vec<ChoiceRecord>> {
    let f = CsvFile::read(path)?;
    parse_choices(&f)
}

/// Source line, option and chosen flag of one row of a pair.
type PairRow = (usize, ChoiceOption, bool);

pub fn parse_choices(f: &CsvFile) -> CliResult<Vec<ChoiceRecord>> {
    let c = f.require(&CHOICE_COLUMNS)?;
    if f.rows.is_empty() {
        return Err(CliError::Schema(format!("{}: no choice rows", f.path)));
    }
    let mut pairs: BTreeMap<(String, String), Vec<PairRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for i in 0..f.rows.len() {
        let key = (f.str_at(i, c[0])?, f.str_at(i, c[1])?);
        let option = ChoiceOption {
            profile_id: f.str_at(i, c[2])?,
            male: f.bool_at(i, c[3])?,
            smile: f.bool_at(i, c[4])?,
            bodyshot: f.bool_at(i, c[5])?,
        };
        let chosen = f.bool_at(i, c[6])?;
        let entry = pairs.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push((i, option, chosen));
    }
    order
        .into_iter()
        .map(|key| {
            let rows = pairs.remove(&key).expect("key recorded");
            let first_line = CsvFile::line(rows[0].0);
            if rows.len() != 2 {
                return Err(CliError::Schema(format!(
                    "{}: line {first_line}: pair ({}, {}) has {} rows, expected 2",
                    f.path,
                    key.0,
                    key.1,
                    rows.len()
                )));
            }
            let n_chosen = rows.iter().filter(|r| r.2).count();
            if n_chosen != 1 {
                return Err(CliError::Schema(format!(
                    "{}: line {first_line}: pair ({}, {}) has {n_chosen} chosen options, expected 1",
                    f.path, key.0, key.1
                )));
            }
            let chosen = if rows[0].2 { 0 } else { 1 };
            let record = ChoiceRecord {
                subject_id: key.0,
                pair_id: key.1,
                options: [rows[0].1.clone(), rows[1].1.clone()],
                chosen,
            };
            record
                .validate()
                .map_err(|e| CliError::Schema(format!("{}: line {first_line}: {e}", f.path)))?;
            Ok(record)
        })
        .collect()
}

pub fn choices_table(records: &[ChoiceRecord]) -> Table {
    let mut t = Table::new("choices", &CHOICE_COLUMNS);
    for r in records {
        for (k, o) in r.options.iter().enumerate() {
            t.push(vec![
                r.subject_id.as_str().into(),
                r.pair_id.as_str().into(),
                o.profile_id.as_str().into(),
                o.male.into(),
                o.smile.into(),
                o.bodyshot.into(),
                (k == r.chosen).into(),
            ]);
        }
    }
    t
}

/// Subject covariates: a `subject_id` column plus numeric columns.
pub fn read_subject_covariates(path: &Path) -> CliResult<SubjectCovariates> {
    let f = CsvFile::read(path)?;
    let id = f.column("subject_id")?;
    let cols: Vec<usize> = (0..f.headers.len()).filter(|&j| j != id).collect();
    let mut values = BTreeMap::new();
    for i in 0..f.rows.len() {
        let row = cols.iter().map(|&j| f.f64_at(i, j)).collect::<CliResult<Vec<_>>>()?;
        if values.insert(f.str_at(i, id)?, row).is_some() {
            return Err(CliError::Schema(format!(
                "{}: line {}: duplicate subject",
                f.path,
                CsvFile::line(i)
            )));
        }
    }
    Ok(SubjectCovariates {
        names: cols.iter().map(|&j| f.headers[j].clone()).collect(),
        values,
    })
}

pub const CAMPAIGN_COLUMNS: [&str; 7] = [
    "cash_per_day",
    "days_to_raise",
    "default",
    "loan_amount",
    "male",
    "smile",
    "bodyshot",
];

pub struct Campaigns {
    pub records: Vec<CampaignRecord>,
    /// Fixed-effect estimate per record, when the column was requested.
    pub fe: Option<Vec<f64>>,
}

pub fn read_campaigns(path: &Path, fe_column: Option<&str>) -> CliResult<Campaigns> {
    let f = CsvFile::read(path)?;
    let c = f.require(&CAMPAIGN_COLUMNS)?;
    let fe_col = fe_column.map(|n| f.column(n)).transpose()?;
    let mut records = Vec::with_capacity(f.rows.len());
    let mut fe = fe_col.map(|_| Vec::with_capacity(f.rows.len()));
    for i in 0..f.rows.len() {
        let extra = (0..f.headers.len())
            .filter(|j| !c.contains(j))
            .map(|j| (f.headers[j].clone(), f.rows[i].get(j).unwrap_or("").to_string()))
            .collect();
        records.push(CampaignRecord {
            cash_per_day: f.f64_at(i, c[0])?,
            days_to_raise: f.f64_at(i, c[1])?,
            default: f.bool_at(i, c[2])?,
            loan_amount: f.f64_at(i, c[3])?,
            male: f.bool_at(i, c[4])?,
            smile: f.bool_at(i, c[5])?,
            bodyshot: f.bool_at(i, c[6])?,
            extra,
        });
        if let (Some(col), Some(fe)) = (fe_col, fe.as_mut()) {
            fe.push(f.f64_at(i, col)?);
        }
    }
    if records.is_empty() {
        return Err(CliError::Schema(format!("{}: no campaign rows", f.path)));
    }
    Ok(Campaigns { records, fe })
}

pub const CALIBRATION_COLUMNS: [&str; 6] = [
    "decile",
    "male_rate",
    "smile_female",
    "smile_male",
    "bodyshot_female",
    "bodyshot_male",
];

pub fn calibration_table(calib: &CalibrationTable) -> Table {
    let mut t = Table::new("calibration", &CALIBRATION_COLUMNS);
    for d in 0..DECILES {
        t.push(vec![
            (d + 1).into(),
            calib.male_by_decile[d].into(),
            calib.smile_by_decile_gender[d][0].into(),
            calib.smile_by_decile_gender[d][1].into(),
            calib.bodyshot_by_decile_gender[d][0].into(),
            calib.bodyshot_by_decile_gender[d][1].into(),
        ]);
    }
    t
}

pub fn read_calibration(path: &Path) -> CliResult<CalibrationTable> {
    let f = CsvFile::read(path)?;
    let c = f.require(&CALIBRATION_COLUMNS)?;
    let mut male = [f64::NAN; DECILES];
    let mut smile = [[f64::NAN; 2]; DECILES];
    let mut body = [[f64::NAN; 2]; DECILES];
    for i in 0..f.rows.len() {
        let d = f.f64_at(i, c[0])?;
        if d.fract() != 0.0 || !(1.0..=DECILES as f64).contains(&d) {
            return Err(CliError::Schema(format!(
                "{}: line {}: decile must be 1..=10",
                f.path,
                CsvFile::line(i)
            )));
        }
        let d = d as usize - 1;
        if !male[d].is_nan() {
            return Err(CliError::Schema(format!(
                "{}: line {}: decile {} repeated",
                f.path,
                CsvFile::line(i),
                d + 1
            )));
        }
        male[d] = f.f64_at(i, c[1])?;
        smile[d] = [f.f64_at(i, c[2])?, f.f64_at(i, c[3])?];
        body[d] = [f.f64_at(i, c[4])?, f.f64_at(i, c[5])?];
    }
    if let Some(d) = male.iter().position(|v| v.is_nan()) {
        return Err(CliError::Schema(format!("{}: decile {} missing", f.path, d + 1)));
    }
    Ok(CalibrationTable::new(male, smile, body)?)
}

pub fn fe_set_table(values: &[f64]) -> Table {
    let mut t = Table::new("fe_set", &["fe"]);
    for &v in values {
        t.push(vec![v.into()]);
    }
    t
}

pub fn read_fe_set(path: &Path) -> CliResult<FixedEffectSet> {
    let f = CsvFile::read(path)?;
    let c = f.column("fe")?;
    let values = (0..f.rows.len())
        .map(|i| f.f64_at(i, c))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FixedEffectSet::new(values)?)
}

/// Extracts numeric columns, dropping rows where any of them is missing.
/// Returns the columns and the number of dropped rows.
pub fn numeric_columns(f: &CsvFile, names: &[&str]) -> CliResult<(Vec<Vec<f64>>, usize)> {
    let idx = f.require(names)?;
    let mut cols = vec![Vec::with_capacity(f.rows.len()); names.len()];
    let mut dropped = 0;
    for i in 0..f.rows.len() {
        let row = idx.iter().map(|&j| f.opt_f64_at(i, j)).collect::<CliResult<Vec<_>>>()?;
        if row.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        for (col, v) in cols.iter_mut().zip(row) {
            col.push(v.expect("checked"));
        }
    }
    Ok((cols, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> CsvFile {
        CsvFile::parse("test.csv", text.as_bytes()).unwrap()
    }

    #[test]
    fn choices_parse_and_round_trip() {
        let f = csv("subject_id,pair_id,profile_id,male,smile,bodyshot,chosen\n\
             s1,1,a,1,0,0,0\n\
             s1,1,b,0,1,0,1\n\
             s2,1,a,0,0,1,1\n\
             s2,1,c,1,1,1,0\n");
        let records = parse_choices(&f).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].chosen, 1);
        assert_eq!(records[1].options[1].profile_id, "c");
        let text = choices_table(&records).to_csv_string().unwrap();
        assert_eq!(parse_choices(&csv(&text)).unwrap(), records);
    }

    #[test]
    fn choice_schema_errors_carry_line_numbers() {
        let f = csv("subject_id,pair_id,profile_id,male,smile,bodyshot,chosen\ns1,1,a,1,0,0,0\ns1,1,b,2,1,0,1\n");
        let err = parse_choices(&f).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("male"), "{err}");

        let f = csv("subject_id,pair_id,profile_id,male,smile,bodyshot,chosen\ns1,1,a,1,0,0,1\ns1,1,b,0,1,0,1\n");
        assert!(parse_choices(&f).unwrap_err().to_string().contains("2 chosen"));

        let f = csv("subject_id,pair_id,profile_id,male,smile,chosen\n");
        assert!(parse_choices(&f).unwrap_err().to_string().contains("bodyshot"));

        assert!(matches!(CsvFile::parse("e.csv", b""), Err(CliError::Schema(_))));
    }

    #[test]
    fn calibration_round_trip() {
        let calib = CalibrationTable::stylized();
        let text = calibration_table(&calib).to_csv_string().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        fs::write(&path, text).unwrap();
        assert_eq!(read_calibration(&path).unwrap(), calib);
    }

    #[test]
    fn numeric_columns_drop_missing_rows() {
        let f = csv("y,x,z\n1,2,a\n,3,b\n4,NA,c\n5,6,d\n");
        let (cols, dropped) = numeric_columns(&f, &["y", "x"]).unwrap();
        assert_eq!(cols, vec![vec![1.0, 5.0], vec![2.0, 6.0]]);
        assert_eq!(dropped, 2);
        assert!(numeric_columns(&f, &["z"]).is_err());
    }
}
