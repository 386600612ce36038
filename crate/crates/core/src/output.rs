//! Result files: layout images, per-element CSV, iteration log, effective
//! configuration and a checksummed manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::OutputError;
use crate::grid::GridModel;
use crate::optimizer::{IterationRecord, OptimizationResult};
use crate::pipeline::Fields;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub nelx: usize,
    pub nely: usize,
    pub iterations: usize,
    pub compliance: f64,
    pub volume_int: f64,
    pub files: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 8-bit grayscale rendering of a blueprint field, one pixel per element,
/// top row first. Values are clamped to `[0, 1]` and mapped to `255·(1−v)`,
/// so solid is black.
pub fn field_image(grid: &GridModel, field: &[f64]) -> Vec<u8> {
    let (nx, ny) = (grid.nelx(), grid.nely());
    let mut pixels = Vec::with_capacity(nx * ny);
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = field[grid.blueprint_to_field(ix * ny + iy)].clamp(0.0, 1.0);
            pixels.push((255.0 * (1.0 - v)).round() as u8);
        }
    }
    pixels
}

pub fn encode_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(pixels).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Per-element table over the blueprint, in blueprint order.
pub fn fields_csv(grid: &GridModel, fields: &Fields) -> String {
    let mut s = String::from("ix,iy,rho,rho_tilde,rho_ero,rho_int,rho_dil,phi,young\n");
    let ny = grid.nely();
    for e in 0..grid.n_elements() {
        let i = grid.blueprint_to_field(e);
        let r = &fields.robust;
        s.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            e / ny,
            e % ny,
            fields.rho[i],
            fields.rho_tilde[i],
            r.ero[i],
            r.int[i],
            r.dil[i],
            fields.phi[i],
            fields.young[e],
        ));
    }
    s
}

/// Newline-delimited JSON, one record per line.
pub fn history_jsonl(history: &[IterationRecord]) -> Result<String, OutputError> {
    let mut s = String::new();
    for r in history {
        let line = serde_json::to_string(r).map_err(|e| OutputError::Serialize {
            what: "iteration record",
            message: e.to_string(),
        })?;
        s.push_str(&line);
        s.push('\n');
    }
    Ok(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every result file into `dir` (created if needed) and returns the
/// manifest, which is written last as `manifest.json`.
pub fn write_outputs(
    result: &OptimizationResult,
    grid: &GridModel,
    config: &RunConfig,
    dir: &Path,
) -> Result<Manifest, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let fields = &result.evaluation.fields;
    let (nx, ny) = (grid.nelx(), grid.nely());
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    for (name, field) in [("density.png", &fields.robust.int), ("phi.png", &fields.phi)] {
        let png = encode_png(nx, ny, &field_image(grid, field)).map_err(|message| OutputError::Image {
            path: dir.join(name),
            message,
        })?;
        files.push((name, png));
    }
    files.push(("fields.csv", fields_csv(grid, fields).into_bytes()));
    files.push(("log.jsonl", history_jsonl(&result.history)?.into_bytes()));
    files.push(("config.toml", config.to_toml().into_bytes()));

    let mut entries = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            file: (*name).into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }
    let last = result.history.last();
    let manifest = Manifest {
        name: config.name.clone(),
        nelx: nx,
        nely: ny,
        iterations: config.iterations,
        compliance: last.map_or(result.evaluation.compliance, |r| r.f),
        volume_int: result.evaluation.volume_int,
        files: entries,
    };
    let path: PathBuf = dir.join("manifest.json");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| OutputError::Serialize {
        what: "manifest",
        message: e.to_string(),
    })?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(io_err(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_is_top_row_first() {
        let grid = GridModel::cantilever(3, 2, 1.0, 1).unwrap();
        let mut field = vec![0.0; grid.field_grid().len()];
        // solid element at the top-left corner
        field[grid.blueprint_to_field(1)] = 1.0;
        let px = field_image(&grid, &field);
        assert_eq!(px, vec![0, 255, 255, 255, 255, 255]);
    }

    #[test]
    fn png_round_trips() {
        let bytes = encode_png(3, 2, &[0, 10, 20, 30, 40, 255]).unwrap();
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 2));
        assert_eq!(&buf[..6], &[0, 10, 20, 30, 40, 255]);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
