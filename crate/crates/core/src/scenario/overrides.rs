use serde_json::Value;

#[derive(Clone, Debug, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() && (out.is_empty() || rest.is_empty()) {
            return Err(format!("empty key in {path:?}"));
        }
        if !name.is_empty() {
            out.push(Segment::Key(name.to_string()));
        }
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(|| format!("unclosed [ in {path:?}"))?;
            let index = rest[1..close].parse().map_err(|_| format!("bad index {:?} in {path:?}", &rest[1..close]))?;
            out.push(Segment::Index(index));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return Err(format!("unexpected {rest:?} in {path:?}"));
            }
        }
    }
    Ok(out)
}

/// Parses `key=value`. The value is read as JSON when possible and as a
/// plain string otherwise, so `coupling.mode=SNIA` and `coupling.dt=5` both
/// work.
pub fn parse_override(text: &str) -> Result<(String, Value), String> {
    let (key, raw) = text.split_once('=').ok_or_else(|| format!("override {text:?} is not key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(format!("override {text:?} has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets the value at a dotted path such as `chemistry.minerals[0].logKsp`.
/// Missing object keys are created; array indices must exist.
pub fn apply_override(doc: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let segments = parse_path(path)?;
    let mut node = doc;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        node = match seg {
            Segment::Key(k) => {
                if node.is_null() {
                    *node = Value::Object(Default::default());
                }
                let obj = node.as_object_mut().ok_or_else(|| format!("{path}: {k} is not inside an object"))?;
                if last {
                    obj.insert(k.clone(), value);
                    return Ok(());
                }
                obj.entry(k.clone()).or_insert(Value::Null)
            }
            Segment::Index(i) => {
                let arr = node.as_array_mut().ok_or_else(|| format!("{path}: [{i}] is not inside an array"))?;
                let len = arr.len();
                let slot = arr.get_mut(*i).ok_or_else(|| format!("{path}: index {i} out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
        };
    }
    Err(format!("empty override path {path:?}"))
}
