//! Deterministic JSON and CSV rendering.

use floquet_core::{Complex, C64};
use serde::{Serialize, Serializer};
use serde_json::Value;

const SIGNIFICANT_DIGITS: usize = 12;

pub(crate) fn complex<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
    Complex::from(*z).serialize(s)
}

fn round(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every floating-point number to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub(crate) fn to_json_text(v: &Value) -> String {
    let mut text = serde_json::to_string_pretty(v).expect("a JSON value always serializes");
    text.push('\n');
    text
}

pub(crate) fn to_csv_text(header: &[String], rows: &[Vec<f64>]) -> Result<String, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| e.to_string())?;
    for row in rows {
        w.write_record(row.iter().map(|&x| if x.is_nan() { String::new() } else { round(x).to_string() }))
            .map_err(|e| e.to_string())?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}
