//! Deterministic text encoding for CSV and JSON outputs.
//!
//! All emitted files use UTF-8, LF line endings, '.' as the decimal
//! separator, and 17-significant-digit scientific notation for floats, so a
//! rerun with identical inputs produces byte-identical files.

use serde_json::Value;

/// Formats a float with 17 significant digits (1 before the point, 16
/// after, scientific notation). Negative zero is normalized to zero so the
/// encoding is a pure function of the numeric value.
pub fn fmt_f64(x: f64) -> String {
    debug_assert!(x.is_finite(), "refusing to format non-finite {x}");
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

/// Formats an optional float; `None` becomes the empty CSV field.
pub fn fmt_f64_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Joins fields into one CSV record with a trailing LF.
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        debug_assert!(
            !f.as_ref().contains([',', '"', '\n']),
            "CSV fields here are plain tokens"
        );
        out.push_str(f.as_ref());
    }
    out.push('\n');
    out
}

/// Renders a JSON value with stable key order (as built), two-space
/// indentation, and [`fmt_f64`] for every non-integer number.
pub fn to_json_pretty(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_f64(n.as_f64().expect("numeric json value")));
            }
        }
        Value::String(s) => {
            out.push_str(&Value::String(s.clone()).to_string());
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(v, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push('}');
        }
    }
}

fn push_indent(n: usize, out: &mut String) {
    for _ in 0..n {
        out.push_str("  ");
    }
}
