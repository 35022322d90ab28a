use std::collections::BTreeMap;
use std::path::Path;


use super::{parse_date, read_text, Provenance};
use crate::error::{Error, Result};
use crate::hmm::ProbabilitySeries;
use crate::network::{IndicatorTable, NodeIndicators};
use crate::te::SIIMatrix;

fn writer(provenance: &Provenance) -> csv::Writer<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(format!("# {}\n", provenance.header()).as_bytes());
    csv::Writer::from_writer(buf)
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer cannot fail");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

fn row<I, S>(w: &mut csv::Writer<Vec<u8>>, fields: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).expect("in-memory writer cannot fail");
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn records(text: &str, path: &Path) -> Result<(csv::StringRecord, Vec<(usize, csv::StringRecord)>)> {
    let mut r = reader(text);
    let headers = r.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok((headers, out))
}

fn number(field: &str, path: &Path, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))
}

/// `date,filtering[,smoothing]`.
pub fn probabilities_to_csv(
    filtering: &ProbabilitySeries,
    smoothing: Option<&ProbabilitySeries>,
    provenance: &Provenance,
) -> String {
    let mut w = writer(provenance);
    if smoothing.is_some() {
        row(&mut w, ["date", "filtering", "smoothing"]);
    } else {
        row(&mut w, ["date", "filtering"]);
    }
    for (k, d) in filtering.timestamps.iter().enumerate() {
        let mut fields = vec![d.to_string(), filtering.values[k].to_string()];
        if let Some(s) = smoothing {
            fields.push(s.values[k].to_string());
        }
        row(&mut w, fields);
    }
    finish(w)
}

pub fn parse_probability_csv(text: &str, path: &Path, asset_id: &str, column: &str) -> Result<ProbabilitySeries> {
    let (headers, recs) = records(text, path)?;
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let (dc, vc) = (find("date")?, find(column)?);
    let mut dates = Vec::with_capacity(recs.len());
    let mut values = Vec::with_capacity(recs.len());
    for (line, rec) in recs {
        let d = rec.get(dc).unwrap_or("");
        dates.push(parse_date(d).ok_or_else(|| parse_err(path, line, format!("`{d}` is not an ISO-8601 date")))?);
        let v = number(rec.get(vc).unwrap_or(""), path, line)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(parse_err(path, line, format!("probability {v} outside [0,1]")));
        }
        values.push(v);
    }
    if let Some(k) = dates.windows(2).position(|w| w[1] <= w[0]) {
        return Err(parse_err(path, 0, format!("dates not strictly increasing after {}", dates[k])));
    }
    ProbabilitySeries::new(asset_id, dates, values)
}

/// Probability column of a file; the asset id is the file stem.
pub fn read_probability_csv(path: &Path, column: &str) -> Result<ProbabilitySeries> {
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    parse_probability_csv(&read_text(path)?, path, &id, column)
}

/// Row `i`, column `j` holds SII(i -> j).
pub fn matrix_to_csv(m: &SIIMatrix, provenance: &Provenance) -> String {
    let mut w = writer(provenance);
    row(&mut w, std::iter::once("node".to_string()).chain(m.nodes().iter().cloned()));
    for (id, values) in m.nodes().iter().zip(m.values()) {
        row(&mut w, std::iter::once(id.clone()).chain(values.iter().map(f64::to_string)));
    }
    finish(w)
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<SIIMatrix> {
    let (headers, recs) = records(text, path)?;
    let nodes: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if recs.len() != nodes.len() {
        return Err(parse_err(
            path,
            0,
            format!("{} columns of nodes but {} rows", nodes.len(), recs.len()),
        ));
    }
    let mut values = Vec::with_capacity(nodes.len());
    for (k, (line, rec)) in recs.iter().enumerate() {
        if rec.get(0) != Some(nodes[k].as_str()) {
            return Err(parse_err(path, *line, format!("expected row for `{}`", nodes[k])));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|f| number(f, path, *line))
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    SIIMatrix::new(nodes, values, None)
}

pub fn read_matrix_csv(path: &Path) -> Result<SIIMatrix> {
    parse_matrix_csv(&read_text(path)?, path)
}

pub fn indicators_to_csv(table: &IndicatorTable, provenance: &Provenance) -> String {
    let mut w = writer(provenance);
    row(
        &mut w,
        ["node", "group"].into_iter().chain(NodeIndicators::NAMES),
    );
    for r in &table.rows {
        row(
            &mut w,
            [r.node.clone(), r.group.to_string()]
                .into_iter()
                .chain(r.values().iter().map(f64::to_string)),
        );
    }
    finish(w)
}

/// `node,max_loss` in percent.
pub fn losses_to_csv(losses: &BTreeMap<String, f64>, provenance: &Provenance) -> String {
    let mut w = writer(provenance);
    row(&mut w, ["node", "max_loss"]);
    for (node, v) in losses {
        row(&mut w, [node.clone(), v.to_string()]);
    }
    finish(w)
}

pub fn parse_losses_csv(text: &str, path: &Path) -> Result<BTreeMap<String, f64>> {
    let (headers, recs) = records(text, path)?;
    for col in ["node", "max_loss"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                column: col.into(),
            });
        }
    }
    let nc = headers.iter().position(|h| h == "node").unwrap_or(0);
    let vc = headers.iter().position(|h| h == "max_loss").unwrap_or(1);
    let mut out = BTreeMap::new();
    for (line, rec) in recs {
        let node = rec.get(nc).unwrap_or("").to_string();
        let v = number(rec.get(vc).unwrap_or(""), path, line)?;
        if out.insert(node.clone(), v).is_some() {
            return Err(parse_err(path, line, format!("duplicate node `{node}`")));
        }
    }
    Ok(out)
}

pub fn read_losses_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    parse_losses_csv(&read_text(path)?, path)
}

/// A CSV table keyed by its first column with numeric columns read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedTable {
    pub headers: Vec<String>,
    pub keys: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
    path: std::path::PathBuf,
}

impl KeyedTable {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let (headers, recs) = records(text, path)?;
        let headers: Vec<String> = headers.iter().map(str::to_string).collect();
        if headers.is_empty() {
            return Err(parse_err(path, 1, "empty header"));
        }
        let rows: Vec<(usize, Vec<String>)> = recs
            .into_iter()
            .map(|(line, r)| (line, r.iter().map(str::to_string).collect()))
            .collect();
        Ok(Self {
            keys: rows.iter().map(|r| r.1[0].clone()).collect(),
            headers,
            rows,
            path: path.to_path_buf(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            path: self.path.clone(),
            column: name.to_string(),
        })?;
        self.rows
            .iter()
            .map(|(line, r)| number(r.get(k).map_or("", String::as_str), &self.path, *line))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = SIIMatrix::new(
            vec!["a".into(), "b,c".into()],
            vec![vec![0.0, 0.1 + 0.2], vec![1e-17, 0.0]],
            None,
        )
        .unwrap();
        let prov = Provenance::of_text("x", None);
        let text = matrix_to_csv(&m, &prov);
        assert!(text.starts_with("# config_hash="));
        let back = parse_matrix_csv(&text, Path::new("m.csv")).unwrap();
        assert_eq!(back, m);
    }
}
