use std::fmt::Write as _;

use super::{fsim, image_dims, psnr, ssim, FSIM_MIN_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const DEFAULT_PSNR_CAP: f64 = 120.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    /// Raw PSNR; `+∞` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
    /// `None` for images below the FSIM minimum size.
    pub fsim: Option<f64>,
}

impl MetricRow {
    /// Scores `output` against `reference`, both in `[0, 1]`.
    pub fn compute(image: impl Into<String>, output: &Tensor, reference: &Tensor) -> Result<Self> {
        let (_, h, w) = image_dims(output)?;
        let fsim = if h.min(w) >= FSIM_MIN_SIZE {
            Some(fsim(output, reference)?)
        } else {
            None
        };
        Ok(MetricRow {
            image: image.into(),
            psnr_db: psnr(output, reference, 1.0)?,
            ssim: ssim(output, reference, 1.0)?,
            fsim,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Rows with PSNR already capped.
    pub rows: Vec<MetricRow>,
    pub psnr_cap: f64,
    /// Indices of rows whose PSNR hit the cap.
    pub capped: Vec<usize>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Mean over rows that have an FSIM value.
    pub mean_fsim: Option<f64>,
}

/// Means over rows with the default PSNR cap.
pub fn aggregate(rows: Vec<MetricRow>) -> Result<MetricReport> {
    MetricReport::new(rows, DEFAULT_PSNR_CAP)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn new(mut rows: Vec<MetricRow>, psnr_cap: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("cannot aggregate an empty metric report".into()));
        }
        let mut capped = Vec::new();
        for (i, r) in rows.iter_mut().enumerate() {
            if r.psnr_db.is_nan() || r.ssim.is_nan() || r.fsim.is_some_and(f64::is_nan) {
                return Err(Error::Domain(format!("metric row {:?} contains NaN", r.image)));
            }
            if r.psnr_db >= psnr_cap {
                r.psnr_db = psnr_cap;
                capped.push(i);
            }
        }
        let mean_psnr = mean(rows.iter().map(|r| r.psnr_db)).unwrap_or(0.0);
        let mean_ssim = mean(rows.iter().map(|r| r.ssim)).unwrap_or(0.0);
        let mean_fsim = mean(rows.iter().filter_map(|r| r.fsim));
        Ok(MetricReport {
            rows,
            psnr_cap,
            capped,
            mean_psnr,
            mean_ssim,
            mean_fsim,
        })
    }

    /// `image,psnr_db,ssim,fsim` rows followed by a `mean` row and a
    /// trailing `# psnr cap` comment naming the capped rows. Values use the
    /// shortest exact decimal form; missing FSIM cells are empty.
    pub fn to_csv(&self) -> String {
        let fs = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("image,psnr_db,ssim,fsim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.image, r.psnr_db, r.ssim, fs(r.fsim));
        }
        let _ = writeln!(
            out,
            "mean,{},{},{}",
            self.mean_psnr,
            self.mean_ssim,
            fs(self.mean_fsim)
        );
        let names: Vec<&str> = self.capped.iter().map(|&i| self.rows[i].image.as_str()).collect();
        let _ = writeln!(out, "# psnr cap {} dB; capped: {}", self.psnr_cap, names.join(" "));
        out
    }

    /// Parses [`MetricReport::to_csv`] output. Means are recomputed from the
    /// rows and must agree with the stored `mean` row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config(format!("report line {line}: {msg}"));
        let num = |line: usize, s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| bad(line, format!("{s:?} is not a number")))
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "image,psnr_db,ssim,fsim")) => {}
            _ => return Err(bad(1, "expected header image,psnr_db,ssim,fsim".into())),
        }
        let mut rows = Vec::new();
        let mut stored_mean = None;
        let mut cap = DEFAULT_PSNR_CAP;
        for (ln, line) in lines {
            if let Some(c) = line.strip_prefix("# psnr cap ") {
                let v = c.split(" dB").next().unwrap_or_default();
                cap = num(ln, v)?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(bad(ln, format!("expected 4 cells, got {}", cells.len())));
            }
            let fsim = if cells[3].is_empty() { None } else { Some(num(ln, cells[3])?) };
            let row = MetricRow {
                image: cells[0].to_string(),
                psnr_db: num(ln, cells[1])?,
                ssim: num(ln, cells[2])?,
                fsim,
            };
            if row.image == "mean" {
                stored_mean = Some((ln, row));
            } else {
                rows.push(row);
            }
        }
        let report = MetricReport::new(rows, cap)?;
        if let Some((ln, m)) = stored_mean {
            if m.psnr_db != report.mean_psnr || m.ssim != report.mean_ssim || m.fsim != report.mean_fsim {
                return Err(bad(ln, "mean row disagrees with the rows".into()));
            }
        }
        Ok(report)
    }
}
