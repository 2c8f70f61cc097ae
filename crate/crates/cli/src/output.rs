use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Number, Value};

pub const SCHEMA: u64 = 1;

/// Rewrite every float in `v` with 17 significant digits.
pub fn precise(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => float(n.as_f64().expect("f64 number")),
        Value::Array(items) => Value::Array(items.into_iter().map(precise).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, precise(v))).collect()),
        other => other,
    }
}

/// A float as a JSON number with 17 significant digits; non-finite values become null.
pub fn float(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(Number::from_str(&format!("{x:.16e}")).expect("scientific notation is valid JSON"))
}

pub fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("plain data serializes")
}

/// A JSON document led by `"schema": 1`.
pub fn document(fields: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    map.insert("schema".into(), Value::from(SCHEMA));
    for (k, v) in fields {
        map.insert(k.into(), v);
    }
    precise(Value::Object(map))
}

pub struct Sink {
    out: Box<dyn Write>,
}

impl Sink {
    pub fn open(path: Option<&Path>) -> io::Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        Ok(Sink { out })
    }

    pub fn json_pretty(&mut self, v: &Value) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut self.out, v)?;
        self.out.write_all(b"\n")
    }

    pub fn json_line(&mut self, v: &Value) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")
    }

    pub fn csv(&mut self, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut self.out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Shortest round-trip decimal; empty for missing values.
pub fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_get_seventeen_digits() {
        assert_eq!(float(1.5).to_string(), "1.5000000000000000e+0");
        assert_eq!(float(-2.0 / 3.0).to_string(), "-6.6666666666666663e-1");
        assert_eq!(float(f64::NAN), Value::Null);
        let doc = document(vec![("n", Value::from(3u64)), ("x", serde_json::json!([0.25]))]);
        assert_eq!(doc.to_string(), r#"{"schema":1,"n":3,"x":[2.5000000000000000e-1]}"#);
    }

    #[test]
    fn parsed_back_exactly() {
        for x in [0.1, 1.0 / 3.0, -1e-300, 6.02e23] {
            let s = float(x).to_string();
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
