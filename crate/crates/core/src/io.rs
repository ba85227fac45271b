//! File formats and run artifacts.
//!
//! A completed run leaves a self-contained directory:
//!
//! ```text
//! outdir/
//!   run_meta.json         config echo (rebuilds model + kernel later)
//!   diagnostics.csv       one row per accepted step, plus the start
//!   certificate.json      separation verdict (when analysis ran)
//!   scan.json             delta-scan summary (when scanning)
//!   snapshots/index.csv   idx,t,file
//!   snapshots/*.chbf      phase snapshots, binary
//!   plots/*.dat           gnuplot-ready two-column series
//! ```
//!
//! Snapshots use a little-endian binary layout (`CHBF`): a 32-byte header
//! of magic, version, grid shape and extent, then the cell values in
//! storage order.  Every writer here is deterministic byte-for-byte, so
//! identical runs produce identical artifacts.

use crate::config::SimConfig;
use crate::degiorgi::{DeltaScanResult, SeparationCertificate};
use crate::diagnostics::{self, DiagnosticsRecord, Trajectory, CSV_COLUMNS};
use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const CHBF_MAGIC: &[u8; 4] = b"CHBF";
const CHBF_VERSION: u32 = 1;
pub const RUN_META_SCHEMA_VERSION: u32 = 1;

/// Serializes a phase snapshot to the binary snapshot format.
pub fn scalar_field_bytes(field: &ScalarField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(32 + 8 * field.data().len());
    out.extend_from_slice(CHBF_MAGIC);
    out.extend_from_slice(&CHBF_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u32).to_le_bytes());
    out.extend_from_slice(&g.lx().to_le_bytes());
    out.extend_from_slice(&g.ly().to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_scalar_field(path: &Path, field: &ScalarField) -> Result<()> {
    fs::write(path, scalar_field_bytes(field))?;
    Ok(())
}

pub fn read_scalar_field(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path)?;
    let bad = |why: &str| {
        ChbError::Config(format!("snapshot {}: {why}", path.display()))
    };
    if bytes.len() < 32 {
        return Err(bad("file shorter than the header"));
    }
    if &bytes[0..4] != CHBF_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != CHBF_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
    let g = Grid2D::new(nx, ny, f64_at(16), f64_at(24))?;
    if bytes.len() != 32 + 8 * nx * ny {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}",
            bytes.len() - 32,
            8 * nx * ny
        )));
    }
    let data: Vec<f64> = (0..nx * ny).map(|k| f64_at(32 + 8 * k)).collect();
    ScalarField::from_vec(g, data)
}

fn record_row(r: &DiagnosticsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.t,
        r.mass,
        r.l2_phi,
        r.h1_phi,
        r.linf_phi,
        r.sep_gap,
        r.u_h1,
        r.mmu_l2,
        r.f1_l1,
        r.log_plus,
        r.log_minus,
        r.omega1_frac
    )
}

/// Renders the diagnostics table; the header names the columns in their
/// fixed order.
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&record_row(r));
        out.push('\n');
    }
    out
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    fs::write(path, diagnostics_csv(records))?;
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, why: String| {
        ChbError::Config(format!("{} line {line}: {why}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_COLUMNS.join(",") => {}
        other => {
            return Err(bad(1, format!("unexpected header {:?}", other.map(|(_, h)| h))))
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| bad(k + 1, format!("{e} in {s:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != CSV_COLUMNS.len() {
            return Err(bad(k + 1, format!("expected {} columns", CSV_COLUMNS.len())));
        }
        out.push(DiagnosticsRecord {
            t: vals[0],
            mass: vals[1],
            l2_phi: vals[2],
            h1_phi: vals[3],
            linf_phi: vals[4],
            sep_gap: vals[5],
            u_h1: vals[6],
            mmu_l2: vals[7],
            f1_l1: vals[8],
            log_plus: vals[9],
            log_minus: vals[10],
            omega1_frac: vals[11],
        });
    }
    Ok(out)
}

/// Config echo stored beside the run outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub config: SimConfig,
}

pub fn write_run_meta(path: &Path, config: &SimConfig) -> Result<()> {
    let meta = RunMeta { schema_version: RUN_META_SCHEMA_VERSION, config: config.clone() };
    let mut text = serde_json::to_string_pretty(&meta)
        .map_err(|e| ChbError::Config(format!("run meta serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_run_meta(path: &Path) -> Result<RunMeta> {
    let text = fs::read_to_string(path)?;
    let meta: RunMeta = serde_json::from_str(&text)
        .map_err(|e| ChbError::Config(format!("{}: {e}", path.display())))?;
    if meta.schema_version != RUN_META_SCHEMA_VERSION {
        return Err(ChbError::Config(format!(
            "{}: unsupported schema version {}",
            path.display(),
            meta.schema_version
        )));
    }
    meta.config.validate()?;
    Ok(meta)
}

pub fn write_certificate(path: &Path, cert: &SeparationCertificate) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cert)
        .map_err(|e| ChbError::Config(format!("certificate serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_certificate(path: &Path) -> Result<SeparationCertificate> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ChbError::Config(format!("{}: {e}", path.display())))
}

fn snapshot_file_name(idx: usize) -> String {
    format!("snap_{idx:06}.chbf")
}

fn two_column_dat(rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut out = String::new();
    for (a, b) in rows {
        writeln!(out, "{a} {b}").expect("string write");
    }
    out
}

/// Writes the full artifact set for a completed run.  Overwrites in
/// place; emitting twice produces identical bytes.
pub fn emit(
    dir: &Path,
    config: &SimConfig,
    traj: &Trajectory,
    certificate: Option<&SeparationCertificate>,
    scan: Option<&DeltaScanResult>,
) -> Result<()> {
    fs::create_dir_all(dir.join("snapshots"))?;
    fs::create_dir_all(dir.join("plots"))?;

    write_run_meta(&dir.join("run_meta.json"), config)?;
    write_diagnostics_csv(&dir.join("diagnostics.csv"), traj.records())?;

    let mut index = String::from("idx,t,file\n");
    for (idx, (t, phi)) in traj.snapshots().iter().enumerate() {
        let name = snapshot_file_name(idx);
        write_scalar_field(&dir.join("snapshots").join(&name), phi)?;
        writeln!(index, "{idx},{t},{name}").expect("string write");
    }
    fs::write(dir.join("snapshots").join("index.csv"), index)?;

    if let Some(cert) = certificate {
        write_certificate(&dir.join("certificate.json"), cert)?;
        let y_rows = cert
            .y_plus
            .iter()
            .zip(&cert.y_minus)
            .enumerate()
            .map(|(n, (p, m))| (n as f64, p.max(*m)));
        fs::write(dir.join("plots").join("y_n.dat"), two_column_dat(y_rows))?;
    }
    if let Some(scan) = scan {
        let mut text = serde_json::to_string_pretty(scan)
            .map_err(|e| ChbError::Config(format!("scan serialization: {e}")))?;
        text.push('\n');
        fs::write(dir.join("scan.json"), text)?;
    }

    let recs = traj.records();
    fs::write(
        dir.join("plots").join("sep_gap.dat"),
        two_column_dat(recs.iter().map(|r| (r.t, r.sep_gap))),
    )?;
    fs::write(
        dir.join("plots").join("f1_l1.dat"),
        two_column_dat(recs.iter().map(|r| (r.t, r.f1_l1))),
    )?;
    if let Some((t0, t1)) = traj.time_range() {
        if t1 - t0 >= 1.0 {
            let windows = diagnostics::dissipativity_sweep(traj, t0, 0.5)?;
            fs::write(
                dir.join("plots").join("windows.dat"),
                two_column_dat(windows.iter().map(|w| (w.t0, w.value()))),
            )?;
        }
    }
    Ok(())
}

/// Reads a run directory back into memory: the config echo plus the
/// diagnostics rows and snapshots.
pub fn load_trajectory(dir: &Path) -> Result<(SimConfig, Trajectory)> {
    let meta = read_run_meta(&dir.join("run_meta.json"))?;
    let mut traj = Trajectory::new();
    for rec in read_diagnostics_csv(&dir.join("diagnostics.csv"))? {
        traj.push_record(rec)?;
    }
    let index_path = dir.join("snapshots").join("index.csv");
    let text = fs::read_to_string(&index_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("idx,t,file") => {}
        other => {
            return Err(ChbError::Config(format!(
                "{}: unexpected header {other:?}",
                index_path.display()
            )))
        }
    }
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(ChbError::Config(format!("{}: bad row {line:?}", index_path.display())));
        }
        let t: f64 = parts[1]
            .parse()
            .map_err(|e| ChbError::Config(format!("{}: {e}", index_path.display())))?;
        let phi = read_scalar_field(&dir.join("snapshots").join(parts[2]))?;
        traj.push_snapshot(t, phi)?;
    }
    Ok((meta.config, traj))
}
