//! `--set key.path=value` overrides applied to a JSON document.

use serde_json::{Map, Value};

/// Parses `key.path=value`. The value is read as JSON when possible and as
/// a bare string otherwise, so `rho=0.5`, `grid.n=128` and
/// `constellation=QPSK` all work.
pub fn parse(spec: &str) -> Result<(Vec<String>, Value), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(format!("override `{spec}` has an empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Writes `value` at `path`, creating intermediate objects as needed.
pub fn apply(doc: &mut Value, path: &[String], value: Value) -> Result<(), String> {
    let mut cur = doc;
    for (i, seg) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.clone(), value);
                    return Ok(());
                }
                map.entry(seg.clone()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| format!("`{}` indexes an array; expected a number", path[..=i].join(".")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("index {idx} out of range for `{}` (length {len})", path[..i].join(".")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{}` is not an object", path[..i].join("."))),
        };
    }
    Ok(())
}

pub fn apply_all(doc: &mut Value, specs: &[String]) -> Result<(), String> {
    for s in specs {
        let (path, value) = parse(s)?;
        apply(doc, &path, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn values_are_json_or_strings() {
        let mut doc = json!({"grid": {"n": 256}, "waveforms": [{"kind": "plain"}]});
        apply_all(
            &mut doc,
            &[
                "grid.n=128".into(),
                "constellation=QPSK".into(),
                "sweep.rho=[0,1]".into(),
                "waveforms.0.kind=comb".into(),
            ],
        )
        .unwrap();
        assert_eq!(doc["grid"]["n"], json!(128));
        assert_eq!(doc["constellation"], json!("QPSK"));
        assert_eq!(doc["sweep"]["rho"], json!([0, 1]));
        assert_eq!(doc["waveforms"][0]["kind"], json!("comb"));
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        assert!(parse("novalue").is_err());
        assert!(parse("a..b=1").is_err());
        let mut doc = json!({"rho": 1});
        assert!(apply_all(&mut doc, &["rho.x=1".into()]).is_err());
        let mut doc = json!({"w": [1]});
        assert!(apply_all(&mut doc, &["w.3=1".into()]).is_err());
    }
}
