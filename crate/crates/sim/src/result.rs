//! Result tables and their CSV / JSON encodings.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::Value;

/// One data column. The header is `name` suffixed with `_unit`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub unit: &'static str,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, unit: &'static str, values: Vec<f64>) -> Self {
        Self { name: name.into(), unit, values }
    }

    pub fn header(&self) -> String {
        format!("{}_{}", self.name, self.unit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Self {
        let t = Self { name: name.into(), columns };
        assert!(t.is_rectangular(), "columns of table {} differ in length", t.name);
        t
    }

    pub fn is_rectangular(&self) -> bool {
        self.columns.windows(2).all(|w| w[0].values.len() == w[1].values.len())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column(&self, header: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.header() == header || c.name == header)
    }

    /// RFC-4180 CSV with LF line endings and shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.columns.iter().map(Column::header))?;
        for r in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| format_float(c.values[r])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    /// Column-oriented JSON object, `{"header": [values...]}`.
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for c in &self.columns {
            let vals = c.values.iter().map(|v| json_float(*v)).collect();
            map.insert(c.header(), Value::Array(vals));
        }
        Value::Object(map)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

fn json_float(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(|| Value::String(format_float(v)), Value::Number)
}

/// Output of one experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub tables: Vec<Table>,
    /// Experiment-specific scalars (fit results, counts, warnings).
    pub metadata: BTreeMap<String, Value>,
}

impl ExperimentResult {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), tables: Vec::new(), metadata: BTreeMap::new() }
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.tables.push(table);
        self
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metadata is serialisable");
        self.metadata.insert(key.to_string(), v);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let entry = self.metadata.entry("warnings".into()).or_insert_with(|| Value::Array(Vec::new()));
        if let Value::Array(list) = entry {
            list.push(Value::String(message.into()));
        }
    }
}
