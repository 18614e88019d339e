//! Tabular reports rendered as aligned text, CSV or JSON.

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    /// Shown with `decimals` places in tables; CSV and JSON get the full value.
    Float(f64, usize),
    Empty,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn plain(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v, _) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn pretty(&self) -> String {
        match self {
            Cell::Float(v, d) => format!("{v:.d$}", d = *d),
            other => other.plain(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v, _) => Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Empty => Value::Null,
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(self, Cell::Int(_) | Cell::Float(..))
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(title: impl Into<String>, headers: &[&'static str]) -> Self {
        Report { title: title.into(), headers: headers.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.table(),
            Format::Csv => self.csv(),
            Format::Json => self.json(),
        }
    }

    fn table(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::pretty).collect()).collect();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        let numeric: Vec<bool> =
            (0..self.headers.len()).map(|i| self.rows.first().is_some_and(|r| r[i].is_numeric())).collect();
        let header: Vec<String> = self
            .headers
            .iter()
            .zip(&widths)
            .zip(&numeric)
            .map(|((h, w), num)| if *num { format!("{h:>w$}") } else { format!("{h:<w$}") })
            .collect();
        out.push_str(header.join("  ").trim_end());
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("  "));
        out.push('\n');
        for (row, raw) in cells.iter().zip(&self.rows) {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .zip(raw)
                .map(|((c, w), cell)| if cell.is_numeric() { format!("{c:>w$}") } else { format!("{c:<w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::plain)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    fn json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (h, c) in self.headers.iter().zip(row) {
                    obj.insert(h.to_string(), c.json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut doc = Map::new();
        doc.insert("report".into(), Value::String(self.title.clone()));
        doc.insert("rows".into(), Value::Array(rows));
        let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo", &["name", "n", "tpp"]);
        r.push(vec![Cell::text("dorfman"), 11usize.into(), Cell::Float(0.195_617, 4)]);
        r.push(vec![Cell::text("x"), Cell::Empty, Cell::Float(1.0, 4)]);
        r
    }

    #[test]
    fn table_aligns() {
        let t = sample().render(Format::Table);
        assert_eq!(t, "demo\nname      n     tpp\n-------  --  ------\ndorfman  11  0.1956\nx            1.0000\n");
    }

    #[test]
    fn csv_keeps_full_precision() {
        assert_eq!(sample().render(Format::Csv), "name,n,tpp\ndorfman,11,0.195617\nx,,1\n");
    }

    #[test]
    fn json_rows_keep_column_order() {
        let j = sample().render(Format::Json);
        let v: Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["rows"][0]["n"], 11);
        assert!(v["rows"][1]["n"].is_null());
        assert!(j.find("\"name\"").unwrap() < j.find("\"tpp\"").unwrap());
    }
}
