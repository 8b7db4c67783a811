//! MFF: the mesh/field exchange file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   "MFF1"                 magic
//! offset 4   u64                    header length H in bytes
//! offset 12  H bytes UTF-8 JSON     format_version, mesh, field metadata
//! offset 12+H                       f64 payload, one block per field
//! ```
//!
//! Each field entry in the header carries `offset` (bytes from the start of
//! the payload) and `count` (number of f64 values). The payload is raw IEEE
//! bits, so values survive a round trip bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, Mesh, MeshFieldError, Support};

pub const MAGIC: &[u8; 4] = b"MFF1";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// In-memory form of an MFF file.
#[derive(Clone, Debug, PartialEq)]
pub struct MffDocument {
    pub format_version: u32,
    pub mesh: Mesh,
    pub fields: Vec<Field>,
}

impl MffDocument {
    pub fn new(mesh: Mesh, fields: Vec<Field>) -> Self {
        MffDocument {
            format_version: FORMAT_VERSION,
            mesh,
            fields,
        }
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), MeshFieldError> {
        self.mesh.validate()?;
        for f in &self.fields {
            f.check_against(&self.mesh)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    mesh: Mesh,
    fields: Vec<FieldHeader>,
    payload_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    name: String,
    support: Support,
    component_names: Vec<String>,
    time: f64,
    unit: String,
    offset: u64,
    count: u64,
}

fn format_err(offset: usize, message: impl Into<String>) -> MeshFieldError {
    MeshFieldError::Format {
        offset,
        message: message.into(),
    }
}

/// Serializes a document into its MFF byte form.
pub fn encode_mff(doc: &MffDocument) -> Result<Vec<u8>, MeshFieldError> {
    doc.validate()?;
    let mut offset = 0u64;
    let fields = doc
        .fields
        .iter()
        .map(|f| {
            let h = FieldHeader {
                name: f.name.clone(),
                support: f.support,
                component_names: f.component_names.clone(),
                time: f.time,
                unit: f.unit.clone(),
                offset,
                count: f.values.len() as u64,
            };
            offset += 8 * f.values.len() as u64;
            h
        })
        .collect();
    let header = Header {
        format_version: doc.format_version,
        mesh: doc.mesh.clone(),
        fields,
        payload_bytes: offset,
    };
    let json = serde_json::to_vec(&header).map_err(|e| format_err(PREAMBLE, e.to_string()))?;

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for f in &doc.fields {
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses MFF bytes. Errors report the byte offset where decoding failed.
pub fn decode_mff(bytes: &[u8]) -> Result<MffDocument, MeshFieldError> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file shorter than magic bytes"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < PREAMBLE {
        return Err(format_err(bytes.len(), "truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let payload_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header: {header_len} bytes announced")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| format_err(PREAMBLE, format!("invalid header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format_err(
            PREAMBLE,
            format!("unsupported format version {} (expected {FORMAT_VERSION})", header.format_version),
        ));
    }
    let payload = &bytes[payload_start..];
    if (payload.len() as u64) < header.payload_bytes {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {} of {} bytes", payload.len(), header.payload_bytes),
        ));
    }

    let mut fields = Vec::with_capacity(header.fields.len());
    for fh in header.fields {
        let start = fh.offset as usize;
        let end = start + 8 * fh.count as usize;
        if end > payload.len() {
            return Err(format_err(payload_start + payload.len(), format!("field {} runs past the payload", fh.name)));
        }
        let values = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        fields.push(Field {
            name: fh.name,
            support: fh.support,
            component_names: fh.component_names,
            values,
            time: fh.time,
            unit: fh.unit,
        });
    }
    let doc = MffDocument {
        format_version: header.format_version,
        mesh: header.mesh,
        fields,
    };
    doc.validate().map_err(|e| format_err(PREAMBLE, e.to_string()))?;
    Ok(doc)
}

pub fn write_mff(path: impl AsRef<Path>, doc: &MffDocument) -> Result<(), MeshFieldError> {
    let bytes = encode_mff(doc)?;
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn read_mff(path: impl AsRef<Path>) -> Result<MffDocument, MeshFieldError> {
    let bytes = fs::read(path.as_ref())?;
    decode_mff(&bytes)
}
