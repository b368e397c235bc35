use std::path::Path;

use grembed_core::Descriptor;

use crate::FrontendError;

/// Reads externally computed descriptors, one keypoint per line:
/// `x y scale orientation d_1 .. d_dim`, whitespace separated. Blank lines
/// and lines starting with `#` are skipped.
pub fn import_descriptors(path: &Path, dim: usize) -> Result<Vec<Descriptor>, FrontendError> {
    let text = std::fs::read_to_string(path).map_err(|source| FrontendError::Io { path: path.to_path_buf(), source })?;
    parse_descriptors(&text, dim)
}

pub fn parse_descriptors(text: &str, dim: usize) -> Result<Vec<Descriptor>, FrontendError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != dim + 4 {
            return Err(FrontendError::Import {
                line: line_no,
                message: format!("{} columns, expected {} (x y scale orientation + {dim} values)", fields.len(), dim + 4),
            });
        }
        let mut values = Vec::with_capacity(fields.len());
        for f in &fields {
            let v: f32 = f
                .parse()
                .map_err(|e| FrontendError::Import { line: line_no, message: format!("bad number {f:?}: {e}") })?;
            if !v.is_finite() {
                return Err(FrontendError::Import { line: line_no, message: format!("non-finite value {f:?}") });
            }
            values.push(v);
        }
        out.push(Descriptor { x: values[0], y: values[1], scale: values[2], orientation: values[3], vector: values[4..].to_vec() });
    }
    Ok(out)
}
