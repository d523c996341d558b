use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Hours per period when the header labels do not carry clock times.
pub const DEFAULT_DELTA_T: f64 = 0.5;

/// `N_S × N_T` matrix of dimensionless forecast-error multipliers, one row per historical day.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSampleMatrix {
    rows: Vec<Vec<f64>>,
    pub timestamps: Vec<String>,
    pub delta_t: f64,
}

impl ErrorSampleMatrix {
    pub fn new(rows: Vec<Vec<f64>>, timestamps: Vec<String>, delta_t: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("error samples need at least one row".into()));
        }
        let nt = timestamps.len();
        if nt == 0 {
            return Err(Error::Dimension("error samples need at least one period".into()));
        }
        if let Some((s, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != nt) {
            return Err(Error::Dimension(format!(
                "row {s} has {} values, expected {nt}",
                r.len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("error samples must be finite".into()));
        }
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::Dimension(format!("delta_t must be positive, got {delta_t}")));
        }
        Ok(ErrorSampleMatrix {
            rows,
            timestamps,
            delta_t,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_periods(&self) -> usize {
        self.timestamps.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.rows[s][t]
    }

    pub fn column_mean(&self, t: usize) -> f64 {
        self.rows.iter().map(|r| r[t]).sum::<f64>() / self.rows.len() as f64
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Self> {
        self.slice(0, n)
    }

    /// Rows `start..start + n`.
    pub fn slice(&self, start: usize, n: usize) -> Result<Self> {
        if n == 0 || start + n > self.rows.len() {
            return Err(Error::Dimension(format!(
                "cannot take rows {start}..{} from {} samples",
                start + n,
                self.rows.len()
            )));
        }
        Self::new(
            self.rows[start..start + n].to_vec(),
            self.timestamps.clone(),
            self.delta_t,
        )
    }

    /// Splits into a training block of `n_train` rows and a test block of the next `n_test` rows.
    pub fn split(&self, n_train: usize, n_test: usize) -> Result<(Self, Self)> {
        Ok((self.slice(0, n_train)?, self.slice(n_train, n_test)?))
    }
}

fn parse_clock(label: &str) -> Option<f64> {
    let (h, m) = label.trim().split_once(':')?;
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    (h < 48 && m < 60).then(|| h as f64 + m as f64 / 60.0)
}

/// Period length implied by `HH:MM` labels, or [`DEFAULT_DELTA_T`].
pub fn infer_delta_t(labels: &[String]) -> f64 {
    let clocks: Option<Vec<f64>> = labels.iter().map(|l| parse_clock(l)).collect();
    match clocks {
        Some(c) if c.len() >= 2 && c[1] > c[0] => c[1] - c[0],
        _ => DEFAULT_DELTA_T,
    }
}

/// Labels `HH:MM` from midnight in steps of `delta_t`, falling back to `t<k>` past one day.
pub fn period_labels(n_t: usize, delta_t: f64) -> Vec<String> {
    if n_t as f64 * delta_t <= 24.0 + 1e-9 {
        (0..n_t)
            .map(|k| {
                let minutes = (k as f64 * delta_t * 60.0).round() as u32;
                format!("{:02}:{:02}", minutes / 60, minutes % 60)
            })
            .collect()
    } else {
        (0..n_t).map(|k| format!("t{k}")).collect()
    }
}

/// Reads a CSV with one header row of period labels and one numeric row per sample.
pub fn load_error_samples(path: impl AsRef<Path>) -> Result<ErrorSampleMatrix> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let labels: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (s, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = s + 2;
        if rec.len() != labels.len() {
            return Err(Error::parse(
                path,
                format!(
                    "line {line}: ragged row with {} fields, header has {}",
                    rec.len(),
                    labels.len()
                ),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(t, cell)| {
                cell.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("line {line}, column {}: `{cell}` is not a number", t + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let dt = infer_delta_t(&labels);
    ErrorSampleMatrix::new(rows, labels, dt).map_err(|e| Error::parse(path, e.to_string()))
}

/// Writes samples in the format read by [`load_error_samples`], shortest round-trip decimals.
pub fn write_error_samples(m: &ErrorSampleMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", m.timestamps.join(",")).map_err(io)?;
    for r in &m.rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Log-scale of the skewing transform; larger values give a heavier right tail.
const SYNTHETIC_SKEW: f64 = 0.5;

/// Right-skewed, zero-mean errors with standard deviation `spread`, clipped to `[-1, 1]`.
/// Cells are drawn independently, as when each period's errors are collected on their own.
/// A pure function of its arguments.
pub fn generate_synthetic_samples(seed: u64, n_s: usize, n_t: usize, spread: f64) -> Result<ErrorSampleMatrix> {
    if n_s == 0 || n_t == 0 {
        return Err(Error::Dimension("synthetic samples need N_S, N_T >= 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Dimension(format!("spread must be nonnegative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s2 = SYNTHETIC_SKEW * SYNTHETIC_SKEW;
    let mean = (s2 / 2.0).exp();
    let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
    let rows = (0..n_s)
        .map(|_| {
            (0..n_t)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let x = ((SYNTHETIC_SKEW * g).exp() - mean) / sd;
                    (spread * x).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    ErrorSampleMatrix::new(rows, period_labels(n_t, DEFAULT_DELTA_T), DEFAULT_DELTA_T)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic_samples(7, 200, 12, 0.1).unwrap();
        let b = generate_synthetic_samples(7, 200, 12, 0.1).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n_samples(), a.n_periods()), (200, 12));
        assert_ne!(a, generate_synthetic_samples(8, 200, 12, 0.1).unwrap());
    }

    #[test]
    fn zero_spread_is_all_zero() {
        let a = generate_synthetic_samples(3, 10, 4, 0.0).unwrap();
        assert!(a.rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn column_mean_shrinks_with_sample_count() {
        let a = generate_synthetic_samples(7, 5000, 1, 0.1).unwrap();
        assert!(a.column_mean(0).abs() < 0.01);
    }

    #[test]
    fn right_skewed() {
        let a = generate_synthetic_samples(11, 4000, 1, 0.2).unwrap();
        let m = a.column_mean(0);
        let third: f64 = a.rows().iter().map(|r| (r[0] - m).powi(3)).sum::<f64>() / 4000.0;
        assert!(third > 0.0);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let a = generate_synthetic_samples(7, 200, 12, 0.1).unwrap();
        write_error_samples(&a, &p).unwrap();
        let b = load_error_samples(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.delta_t, 0.5);
    }

    #[test]
    fn single_zero_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        std::fs::write(&p, "a,b\n0.0,0.0\n").unwrap();
        let m = load_error_samples(&p).unwrap();
        assert_eq!((m.n_samples(), m.n_periods()), (1, 2));
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.delta_t, DEFAULT_DELTA_T);
    }

    #[test]
    fn malformed_files_report_positions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "06:00,06:30\n0.1,0.2\n0.3\n").unwrap();
        let e = load_error_samples(&p).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("ragged"), "{e}");
        std::fs::write(&p, "06:00,06:30\n0.1,abc\n").unwrap();
        let e = load_error_samples(&p).unwrap_err().to_string();
        assert!(e.contains("line 2, column 2"), "{e}");
    }

    #[test]
    fn clock_labels_set_delta_t() {
        let l: Vec<String> = ["06:00", "06:15"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_delta_t(&l), 0.25);
        assert_eq!(period_labels(3, 0.5), vec!["00:00", "00:30", "01:00"]);
    }
}
