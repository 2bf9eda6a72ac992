use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{RunOutput, SweepRow};
use crate::error::Result;
use crate::levelset::write_contours_csv;

/// Rows `(parameter, value, metric, metric_value)`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "parameter,value,metric,metric_value")?;
    for r in rows {
        writeln!(w, "{},{:.12e},{},{:.12e}", r.parameter, r.value, r.metric, r.metric_value)?;
    }
    Ok(())
}

/// Writes report.json, timing.json and whichever CSV files have content.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&out.report)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&out.timing)? + "\n")?;
    if let Some(f) = &out.field {
        let mut w = BufWriter::new(fs::File::create(dir.join("field.csv"))?);
        f.write_csv(&mut w)?;
        w.flush()?;
    }
    if !out.contours.is_empty() {
        let mut w = BufWriter::new(fs::File::create(dir.join("contours.csv"))?);
        write_contours_csv(&out.contours, &mut w)?;
        w.flush()?;
    }
    if !out.report.sweep_rows.is_empty() {
        let mut w = BufWriter::new(fs::File::create(dir.join("sweep.csv"))?);
        write_sweep_csv(&out.report.sweep_rows, &mut w)?;
        w.flush()?;
    }
    Ok(())
}
