//! File formats shared by the commands: measurement/Jacobian/field CSVs with
//! config-echo headers, and small helpers for reading them back.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nnqn_core::error::{Error, Result};
use nnqn_core::fem::MeasurementFrame;

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Measurement CSV: `# config: ...`, a dimensions line, then
/// index,value,noise_std rows (noise_std empty for noiseless frames).
pub fn write_measurements(path: &Path, frame: &MeasurementFrame, config_echo: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# config: {config_echo}")?;
    writeln!(w, "# rows={} cols=1", frame.len())?;
    writeln!(w, "index,value,noise_std")?;
    for i in 0..frame.len() {
        match &frame.noise_std {
            Some(std) => writeln!(w, "{i},{:.17e},{:.17e}", frame.values[i], std[i])?,
            None => writeln!(w, "{i},{:.17e},", frame.values[i])?,
        }
    }
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<MeasurementFrame> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut stds = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("index") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 2 {
            return Err(Error::format(format!("bad measurement row: {line:?}")));
        }
        values.push(
            parts[1]
                .parse::<f64>()
                .map_err(|_| Error::format(format!("bad value in row: {line:?}")))?,
        );
        if parts.len() > 2 && !parts[2].trim().is_empty() {
            stds.push(
                parts[2]
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("bad noise std in row: {line:?}")))?,
            );
        }
    }
    let n = values.len();
    let noise_std = if stds.len() == n { Some(DVector::from_vec(stds)) } else { None };
    Ok(MeasurementFrame { values: DVector::from_vec(values), noise_std })
}

/// Per-element field CSV: element,value rows with a config echo.
pub fn write_field(path: &Path, values: &DVector<f64>, config_echo: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# config: {config_echo}")?;
    writeln!(w, "# rows={} cols=1", values.len())?;
    writeln!(w, "element,value")?;
    for i in 0..values.len() {
        writeln!(w, "{i},{:.17e}", values[i])?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DVector<f64>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("element") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 2 {
            return Err(Error::format(format!("bad field row: {line:?}")));
        }
        values.push(
            parts[1]
                .parse::<f64>()
                .map_err(|_| Error::format(format!("bad value in row: {line:?}")))?,
        );
    }
    Ok(DVector::from_vec(values))
}

/// Dense matrix CSV, row-major, with a dimensions header.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, config_echo: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# config: {config_echo}")?;
    writeln!(w, "# rows={} cols={}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let mut first = true;
        for j in 0..m.ncols() {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{:.17e}", m[(i, j)])?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}
