//! Text serialization of task-vector artifacts.
//!
//! ```text
//! dp-mtv artifact
//! format_version = 1
//! num_layers = 4
//! num_heads = 4
//! head_dim = 8
//! layer_ids = 0,1,2,3
//! variant = private
//! model_fingerprint = steerable-toy/v1 ...
//! [mask]
//! 0100            one row per selected layer, one digit per head
//! [tv]
//! v v v ...       one row per (layer, head), head_dim values
//! [receipt]
//! gaussian_mean 1.0000000000000000e0 1.0000000000000001e-5
//! total 1.0000000000000000e0 1.0000000000000001e-5
//! [end]
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every
//! finite `f64` exactly; an infinite charge is written as `inf`.

use std::io::Write;
use std::path::Path;

use dp_mtv::inference::{TaskVectorArtifact, FORMAT_VERSION};
use dp_mtv::privacy::{PrivacyReceipt, ReceiptEntry};
use dp_mtv::tensor::{ActivationTensor, HeadMask};

use crate::error::{CliError, CliResult};

const MAGIC: &str = "dp-mtv artifact";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders `artifact` for a model with `num_layers` layers.
pub fn to_text(artifact: &TaskVectorArtifact, num_layers: usize) -> String {
    let tv = artifact.tv();
    let (h, d) = (tv.num_heads(), tv.head_dim());
    let layer_ids: Vec<String> = tv.layer_ids().iter().map(usize::to_string).collect();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("format_version = {}\n", artifact.format_version()));
    out.push_str(&format!("num_layers = {num_layers}\n"));
    out.push_str(&format!("num_heads = {h}\n"));
    out.push_str(&format!("head_dim = {d}\n"));
    out.push_str(&format!("layer_ids = {}\n", layer_ids.join(",")));
    out.push_str(&format!("variant = {}\n", artifact.variant()));
    out.push_str(&format!("model_fingerprint = {}\n", artifact.model_fingerprint()));

    out.push_str("[mask]\n");
    for row in artifact.mask().bits().chunks(h) {
        out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
        out.push('\n');
    }

    out.push_str("[tv]\n");
    for head in tv.values().chunks(d) {
        let vals: Vec<String> = head.iter().copied().map(real).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }

    out.push_str("[receipt]\n");
    let receipt = artifact.receipt();
    for e in receipt.entries() {
        out.push_str(&format!("{} {} {}\n", e.mechanism, real(e.eps), real(e.delta)));
    }
    out.push_str(&format!(
        "total {} {}\n",
        real(receipt.total_eps()),
        real(receipt.total_delta())
    ));
    out.push_str("[end]\n");
    out
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_artifact(path: &Path, artifact: &TaskVectorArtifact, num_layers: usize) -> CliResult<()> {
    write_atomic(path, to_text(artifact, num_layers).as_bytes())
}

/// A parsed artifact together with the layer count recorded in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedArtifact {
    pub num_layers: usize,
    pub artifact: TaskVectorArtifact,
}

pub fn read_artifact(path: &Path) -> CliResult<LoadedArtifact> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::artifact("file", format!("cannot read {}: {e}", path.display())))?;
    from_text(&text)
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, field: &str) -> CliResult<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| CliError::artifact(field, "file ends early"))
    }

    fn header(&mut self, key: &str) -> CliResult<&'a str> {
        let line = self.next(key)?;
        match line.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim()),
            _ => Err(CliError::artifact(key, format!("expected `{key} = ...`, found {line:?}"))),
        }
    }

    fn section(&mut self, name: &str) -> CliResult<()> {
        let line = self.next(name)?;
        if line != format!("[{name}]") {
            return Err(CliError::artifact(name, format!("expected section [{name}], found {line:?}")));
        }
        Ok(())
    }
}

fn parse_usize(field: &str, s: &str) -> CliResult<usize> {
    s.parse()
        .map_err(|_| CliError::artifact(field, format!("not a non-negative integer: {s:?}")))
}

fn parse_real(field: &str, s: &str) -> CliResult<f64> {
    s.parse()
        .map_err(|_| CliError::artifact(field, format!("not a real number: {s:?}")))
}

pub fn from_text(text: &str) -> CliResult<LoadedArtifact> {
    let mut lines = Lines { inner: text.lines() };
    if lines.next("magic")? != MAGIC {
        return Err(CliError::artifact("magic", format!("first line must be {MAGIC:?}")));
    }
    let version = parse_usize("format_version", lines.header("format_version")?)?;
    if version != FORMAT_VERSION as usize {
        return Err(CliError::artifact(
            "format_version",
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let num_layers = parse_usize("num_layers", lines.header("num_layers")?)?;
    let h = parse_usize("num_heads", lines.header("num_heads")?)?;
    let d = parse_usize("head_dim", lines.header("head_dim")?)?;
    let layer_ids = lines
        .header("layer_ids")?
        .split(',')
        .map(|s| parse_usize("layer_ids", s.trim()))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(&bad) = layer_ids.iter().find(|&&l| l >= num_layers) {
        return Err(CliError::artifact("layer_ids", format!("layer {bad} >= num_layers {num_layers}")));
    }
    let variant = lines.header("variant")?.to_string();
    let fingerprint = lines.header("model_fingerprint")?.to_string();

    lines.section("mask")?;
    let mut bits = Vec::new();
    for i in 0..layer_ids.len() {
        let row = lines.next("mask")?;
        if row.len() != h {
            return Err(CliError::artifact("mask", format!("row {i} has {} entries, expected {h}", row.len())));
        }
        for c in row.chars() {
            bits.push(match c {
                '0' => false,
                '1' => true,
                _ => return Err(CliError::artifact("mask", format!("row {i}: invalid bit {c:?}"))),
            });
        }
    }

    lines.section("tv")?;
    let mut values = Vec::new();
    for i in 0..layer_ids.len().saturating_mul(h) {
        let row = lines.next("tv")?;
        let before = values.len();
        for tok in row.split_whitespace() {
            values.push(parse_real("tv", tok)?);
        }
        if values.len() - before != d {
            return Err(CliError::artifact(
                "tv",
                format!("row {i} has {} values, expected {d}", values.len() - before),
            ));
        }
    }

    lines.section("receipt")?;
    let mut entries = Vec::new();
    let (total_eps, total_delta) = loop {
        let line = lines.next("receipt")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, eps, delta] = parts[..] else {
            return Err(CliError::artifact("receipt", format!("expected `name eps delta`, found {line:?}")));
        };
        let eps = parse_real("receipt.eps", eps)?;
        let delta = parse_real("receipt.delta", delta)?;
        if name == "total" {
            break (eps, delta);
        }
        entries.push(ReceiptEntry {
            mechanism: name.to_string(),
            eps,
            delta,
        });
    };
    let receipt = PrivacyReceipt::from_entries(entries)
        .map_err(|e| CliError::artifact("receipt", e.to_string()))?;
    if receipt.total_eps().to_bits() != total_eps.to_bits() {
        return Err(CliError::artifact(
            "receipt.total_eps",
            format!("recorded {total_eps} but entries sum to {}", receipt.total_eps()),
        ));
    }
    if receipt.total_delta().to_bits() != total_delta.to_bits() {
        return Err(CliError::artifact(
            "receipt.total_delta",
            format!("recorded {total_delta} but entries sum to {}", receipt.total_delta()),
        ));
    }
    if lines.next("end")? != "[end]" {
        return Err(CliError::artifact("end", "missing [end] marker"));
    }
    if lines.inner.any(|l| !l.trim().is_empty()) {
        return Err(CliError::artifact("end", "trailing content after [end]"));
    }

    let tv = ActivationTensor::new(layer_ids.clone(), h, d, values)
        .map_err(|e| CliError::artifact("tv", e.to_string()))?;
    let mask = HeadMask::new(layer_ids, h, bits).map_err(|e| CliError::artifact("mask", e.to_string()))?;
    let artifact = TaskVectorArtifact::new(tv, mask, receipt, fingerprint, variant)
        .map_err(|e| CliError::artifact("mask", e.to_string()))?;
    Ok(LoadedArtifact { num_layers, artifact })
}
