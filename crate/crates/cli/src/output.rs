//! Result bundle persistence.
//!
//! Every file is first written to a temporary file in the output directory
//! and only renamed into place once all of them exist, so a failed run
//! leaves no partial results behind.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use serde_json::json;
use tempfile::NamedTempFile;

use crate::manifest::Manifest;
use crate::run::{Bundle, SCHEMA_VERSION};

pub const TOOL: &str = "chase-escape";

/// Summary document; `timestamp` is the only field that varies between
/// identical runs.
pub fn summary(m: &Manifest, bundle: &Bundle) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool": TOOL,
        "version": env!("CARGO_PKG_VERSION"),
        "kind": m.kind,
        "manifest_hash": m.hash(),
        "master_seed": m.seed,
        "workers": m.workers,
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "manifest": m.echo,
        "results": bundle.results,
    })
}

pub fn write_bundle(m: &Manifest, bundle: &Bundle) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(&m.out)?;
    let mut summary_bytes = serde_json::to_vec_pretty(&summary(m, bundle))?;
    summary_bytes.push(b'\n');
    let files = bundle
        .csv
        .iter()
        .map(|(name, bytes)| (name.clone(), bytes.as_slice()))
        .chain(std::iter::once((
            format!("{}.summary.json", m.kind),
            summary_bytes.as_slice(),
        )));

    let mut staged = Vec::new();
    for (name, bytes) in files {
        let mut tmp = NamedTempFile::new_in(&m.out)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, m.out.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| e.error)?;
        written.push(target);
    }
    Ok(written)
}
