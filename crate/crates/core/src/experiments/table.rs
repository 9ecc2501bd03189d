use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            // Shortest representation that round-trips exactly.
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Num(if v { 1.0 } else { 0.0 })
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Written as leading `# key: value` lines.
    pub metadata: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new(schema: &[&str]) -> Self {
        ResultTable { schema: schema.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), metadata: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.schema.len(), "row arity must match schema");
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.push((key.to_string(), value.into()));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c == name)
    }

    /// Value in the first row whose `key_col` equals `key`.
    pub fn lookup(&self, key_col: &str, key: f64, col: &str) -> Option<f64> {
        let (k, c) = (self.column(key_col)?, self.column(col)?);
        self.rows.iter().find(|r| r[k].as_f64() == Some(key)).and_then(|r| r[c].as_f64())
    }

    /// CSV with `#`-prefixed metadata lines before the header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Config(format!("write failed: {e}"));
        for (k, v) in &self.metadata {
            // Metadata values are single-line by construction.
            writeln!(out, "# {k}: {}", v.replace('\n', " ")).map_err(io)?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let csv_err = |e: csv::Error| Error::Config(format!("write failed: {e}"));
        w.write_record(&self.schema).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_quoting() {
        let mut t = ResultTable::new(&["a", "b,c"]);
        t.meta("version", "x 1");
        t.push(vec![Cell::Num(0.1), "he said \"hi\"".into()]);
        t.push(vec![Cell::Num(f64::INFINITY), Cell::Num(2.0)]);
        let s = t.to_csv_string();
        assert_eq!(s, "# version: x 1\na,\"b,c\"\n0.1,\"he said \"\"hi\"\"\"\ninf,2\n");
        assert_eq!(t.lookup("b,c", 2.0, "a"), Some(f64::INFINITY));
    }

    #[test]
    #[should_panic]
    fn arity_is_enforced() {
        ResultTable::new(&["a"]).push(vec![Cell::Num(1.0), Cell::Num(2.0)]);
    }
}
