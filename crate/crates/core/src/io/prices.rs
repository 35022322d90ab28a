use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{parse_date, read_text, Provenance};
use crate::error::{Error, Result};
use crate::model::LogPriceSeries;

/// Column names in a price file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub date: String,
    pub price: String,
    /// Read when the file has it; used for drawdowns instead of the price.
    pub market_cap: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            price: "price".into(),
            market_cap: "market_cap".into(),
        }
    }
}

/// A loaded price file.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub series: LogPriceSeries,
    pub prices: Vec<f64>,
    pub market_cap: Option<Vec<f64>>,
}

impl PriceTable {
    /// Market capitalization when present, otherwise the price.
    pub fn size_proxy(&self) -> &[f64] {
        self.market_cap.as_deref().unwrap_or(&self.prices)
    }

    /// Size proxy restricted to `[start, end]`.
    pub fn size_proxy_in(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Vec<f64> {
        self.series
            .timestamps()
            .iter()
            .zip(self.size_proxy())
            .filter(|(d, _)| start.is_none_or(|s| **d >= s) && end.is_none_or(|e| **d <= e))
            .map(|(_, v)| *v)
            .collect()
    }
}

fn positive(field: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("{what} `{field}` is not a number"),
    })?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{what} must be positive, got `{field}`"),
        });
    }
    Ok(v)
}

pub(crate) fn parse_price_table(text: &str, path: &Path, asset_id: &str, columns: &ColumnMap) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let schema = |column: &str| Error::Schema {
        path: path.to_path_buf(),
        column: column.to_string(),
    };
    let date_col = find(&columns.date).ok_or_else(|| schema(&columns.date))?;
    let price_col = find(&columns.price).ok_or_else(|| schema(&columns.price))?;
    let cap_col = find(&columns.market_cap);

    let mut rows: Vec<(NaiveDate, f64, Option<f64>, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| record.get(k).unwrap_or("");
        let date = parse_date(field(date_col)).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("`{}` is not an ISO-8601 date", field(date_col)),
        })?;
        let price = positive(field(price_col), "price", path, line)?;
        let cap = cap_col
            .map(|k| positive(field(k), "market cap", path, line))
            .transpose()?;
        rows.push((date, price, cap, line));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        let line = w[0].3.max(w[1].3);
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("duplicate date {}", w[0].0),
        });
    }
    if rows.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: rows.last().map_or(1, |r| r.3),
            message: format!("need at least 2 rows, found {}", rows.len()),
        });
    }
    let prices: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let series = LogPriceSeries::from_prices(asset_id, rows.iter().map(|r| r.0).collect(), &prices)?;
    let market_cap = cap_col.map(|_| rows.iter().map(|r| r.2.unwrap_or(f64::NAN)).collect());
    Ok(PriceTable {
        series,
        prices,
        market_cap,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads a price file with its optional market-cap column. The asset id is
/// the file stem.
pub fn load_price_table(path: &Path, columns: &ColumnMap) -> Result<PriceTable> {
    let text = read_text(path)?;
    parse_price_table(&text, path, &stem(path), columns)
}

/// Reads `date, price` rows, sorts them by date and takes logs.
pub fn load_price_csv(path: &Path, columns: &ColumnMap) -> Result<LogPriceSeries> {
    Ok(load_price_table(path, columns)?.series)
}

/// `date,price` text for a log-price series.
pub fn write_price_csv(series: &LogPriceSeries, provenance: &Provenance) -> String {
    let mut out = format!("# {}\ndate,price\n", provenance.header());
    for (d, y) in series.timestamps().iter().zip(series.log_prices()) {
        out.push_str(&format!("{d},{}\n", y.exp()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PriceTable> {
        parse_price_table(text, Path::new("a.csv"), "a", &ColumnMap::default())
    }

    #[test]
    fn parses_and_sorts() {
        let t = parse("date,price\n2020-01-03,2\n2020-01-02,1\n").unwrap();
        assert_eq!(t.series.len(), 2);
        assert_eq!(t.series.log_prices()[0], 0.0);
        assert_eq!(t.series.timestamps()[0], NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
        assert!(t.market_cap.is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "date,price\n2020-01-01,1\n2020-01-02,1\n2020-01-03,1\n2020-01-04,0\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match parse("date,price\n2020-01-01,1\nnot-a-date,1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("date,price\n2020-01-01,1\n2020-01-01,2\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        match parse("day,price\n2020-01-01,1\n") {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "date"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn market_cap_column() {
        let t = parse("date,price,market_cap\n2020-01-01,1,10\n2020-01-02,2,8\n").unwrap();
        assert_eq!(t.size_proxy(), &[10.0, 8.0]);
    }
}
