use std::fmt::Write as _;

use serde_json::Value;

use super::Story;
use crate::error::Result;

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{:.6}", n.as_f64().unwrap_or(0.0));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(out, &map[k]);
            }
            out.push('}');
        }
    }
}

/// Canonical text: no whitespace, keys sorted, every float with exactly six
/// decimals, one trailing newline. Equal stories give equal bytes.
pub fn render_json(story: &Story) -> Result<String> {
    let value = serde_json::to_value(story)?;
    let mut out = String::new();
    write_value(&mut out, &value);
    out.push('\n');
    Ok(out)
}

pub fn parse_story(text: &str) -> Result<Story> {
    Ok(serde_json::from_str(text)?)
}
