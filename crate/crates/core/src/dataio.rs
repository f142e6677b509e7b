//! Ingest of multivariate flow series, sliding-window supervised pairs,
//! normalization, and chronological train/validation/test splits.
//!
//! The one ingest format is `matrix_csv`: UTF-8, comma-separated, an
//! optional block of leading `#` comment lines, then a header row of
//! sensor ids and one data row per 5-minute step. Decimal floats, no
//! missing cells.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Raw multivariate flow series: `values` is `[S, T]` (sensor-major),
/// non-negative and finite throughout.
#[derive(Clone, Debug)]
pub struct FlowSeries {
    pub values: Tensor,
    pub interval_minutes: u32,
    pub sensor_ids: Vec<String>,
}

impl FlowSeries {
    pub fn new(values: Tensor, interval_minutes: u32, sensor_ids: Vec<String>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::config(format!(
                "flow series must be [S, T], got shape {:?}",
                values.shape()
            )));
        }
        if interval_minutes == 0 {
            return Err(Error::config("interval_minutes must be positive".to_string()));
        }
        if sensor_ids.len() != values.shape()[0] {
            return Err(Error::config(format!(
                "{} sensor ids for {} sensors",
                sensor_ids.len(),
                values.shape()[0]
            )));
        }
        if let Some(bad) = values.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::data(format!(
                "flow values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(FlowSeries { values, interval_minutes, sensor_ids })
    }

    pub fn sensors(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[1]
    }

    /// Restricts the series to a subset of sensor indices, in the given order.
    pub fn select_sensors(&self, indices: &[usize]) -> Result<FlowSeries> {
        let s = self.sensors();
        if indices.is_empty() {
            return Err(Error::config("sensor subset must be nonempty".to_string()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s) {
            return Err(Error::config(format!(
                "sensor index {bad} out of range for {s} sensors"
            )));
        }
        let t = self.steps();
        let mut data = Vec::with_capacity(indices.len() * t);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.values.row(i));
            ids.push(self.sensor_ids[i].clone());
        }
        FlowSeries::new(Tensor::new(vec![indices.len(), t], data)?, self.interval_minutes, ids)
    }
}

/// Supported ingest layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    MatrixCsv,
}

/// Reads a [`FlowSeries`] from disk. Rows and columns in parse errors are
/// 1-based and count data rows (the header row is row 0's predecessor).
pub fn load_series(path: &Path, layout: Layout) -> Result<FlowSeries> {
    match layout {
        Layout::MatrixCsv => parse_matrix_csv(&fs::read_to_string(path)?),
    }
}

pub fn parse_matrix_csv(text: &str) -> Result<FlowSeries> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data("matrix_csv has no header row".to_string()))?;
    let sensor_ids: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let s = sensor_ids.len();

    // Column-major parse into sensor-major [S, T] storage.
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); s];
    let mut rows = 0usize;
    for (data_row, (_, line)) in lines.enumerate() {
        let row_no = data_row + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != s {
            // Point at the first missing or first surplus cell.
            let col = if cells.len() < s { cells.len() + 1 } else { s + 1 };
            return Err(Error::Parse {
                row: row_no,
                col,
                msg: format!("expected {s} cells, found {}", cells.len()),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_no,
                col: c + 1,
                msg: format!("not a number: '{}'", cell.trim()),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    row: row_no,
                    col: c + 1,
                    msg: format!("flow values must be finite and non-negative, got {v}"),
                });
            }
            columns[c].push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::data("matrix_csv has no data rows".to_string()));
    }
    let mut data = Vec::with_capacity(s * rows);
    for col in columns {
        data.extend_from_slice(&col);
    }
    FlowSeries::new(Tensor::new(vec![s, rows], data)?, 5, sensor_ids)
}

/// Contiguous chronological split covering the first
/// `train + val + test` steps, in that order.
pub fn split_series(
    series: &FlowSeries,
    train_steps: usize,
    val_steps: usize,
    test_steps: usize,
) -> Result<(FlowSeries, FlowSeries, FlowSeries)> {
    let total = train_steps + val_steps + test_steps;
    if total > series.steps() {
        return Err(Error::config(format!(
            "split {train_steps}/{val_steps}/{test_steps} needs {total} steps, series has {}",
            series.steps()
        )));
    }
    if train_steps == 0 || val_steps == 0 || test_steps == 0 {
        return Err(Error::config("all split segments must be nonempty".to_string()));
    }
    let slice = |start: usize, len: usize| -> Result<FlowSeries> {
        let s = series.sensors();
        let mut data = Vec::with_capacity(s * len);
        for sensor in 0..s {
            let row = series.values.row(sensor);
            data.extend_from_slice(&row[start..start + len]);
        }
        FlowSeries::new(
            Tensor::new(vec![s, len], data)?,
            series.interval_minutes,
            series.sensor_ids.clone(),
        )
    };
    Ok((
        slice(0, train_steps)?,
        slice(train_steps, val_steps)?,
        slice(train_steps + val_steps, test_steps)?,
    ))
}

/// Per-sensor mean and population standard deviation; zero stds are
/// replaced by 1 so normalization never divides by zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn normalize_stats(train: &FlowSeries) -> NormStats {
    let s = train.sensors();
    let t = train.steps() as f64;
    let mut mean = Vec::with_capacity(s);
    let mut std = Vec::with_capacity(s);
    for sensor in 0..s {
        let row = train.values.row(sensor);
        let m = row.iter().sum::<f64>() / t;
        let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / t;
        let sd = var.sqrt();
        mean.push(m);
        std.push(if sd == 0.0 { 1.0 } else { sd });
    }
    NormStats { mean, std }
}

/// Inverse of per-sensor z-scoring: `x * std + mean`, applied along the
/// sensor axis of `[.., S, L]`-shaped tensors.
pub fn denormalize(x: &Tensor, stats: &NormStats) -> Tensor {
    map_per_sensor(x, stats, |v, m, sd| v * sd + m)
}

/// Per-sensor z-scoring with the provided statistics.
pub fn normalize(x: &Tensor, stats: &NormStats) -> Tensor {
    map_per_sensor(x, stats, |v, m, sd| (v - m) / sd)
}

fn map_per_sensor(x: &Tensor, stats: &NormStats, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let shape = x.shape().to_vec();
    let (s, l) = match shape.len() {
        2 => (shape[0], shape[1]),
        3 => (shape[1], shape[2]),
        _ => panic!("per-sensor map expects [S, L] or [N, S, L], got {shape:?}"),
    };
    assert_eq!(stats.mean.len(), s, "stats cover {} sensors, tensor has {s}", stats.mean.len());
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let sensor = (i / l) % s;
            f(v, stats.mean[sensor], stats.std[sensor])
        })
        .collect();
    Tensor::new(shape, data).expect("shape preserved")
}

/// Aligned (history-window, target-window) pairs.
///
/// `inputs` are normalized with the training statistics; targets are kept
/// both raw and normalized. Window `n` covers input steps `[n, n+h)` and
/// target steps `[n+h, n+h+t)` with no gap.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    pub inputs: Tensor,       // [N, S, h], normalized
    pub targets_norm: Tensor, // [N, S, t]
    pub targets_raw: Tensor,  // [N, S, t]
    pub history: usize,
    pub horizon: usize,
    pub stats: NormStats,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensors(&self) -> usize {
        self.inputs.shape()[1]
    }
}

pub fn make_windows(
    segment: &FlowSeries,
    history: usize,
    horizon: usize,
    stats: &NormStats,
) -> Result<WindowedDataset> {
    if history == 0 || horizon == 0 {
        return Err(Error::config("history and horizon must be at least 1".to_string()));
    }
    let t_seg = segment.steps();
    if history + horizon > t_seg {
        return Err(Error::config(format!(
            "segment of {t_seg} steps cannot fit history {history} + horizon {horizon}"
        )));
    }
    let s = segment.sensors();
    let n = t_seg - history - horizon + 1;

    let mut inputs = Vec::with_capacity(n * s * history);
    let mut targets = Vec::with_capacity(n * s * horizon);
    for w in 0..n {
        for sensor in 0..s {
            let row = segment.values.row(sensor);
            inputs.extend_from_slice(&row[w..w + history]);
            targets.extend_from_slice(&row[w + history..w + history + horizon]);
        }
    }
    let inputs_raw = Tensor::new(vec![n, s, history], inputs)?;
    let targets_raw = Tensor::new(vec![n, s, horizon], targets)?;
    Ok(WindowedDataset {
        inputs: normalize(&inputs_raw, stats),
        targets_norm: normalize(&targets_raw, stats),
        targets_raw,
        history,
        horizon,
        stats: stats.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series(rows: &[&[f64]]) -> FlowSeries {
        FlowSeries::new(
            Tensor::matrix(rows).unwrap(),
            5,
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn csv_zero_file() {
        let fs = parse_matrix_csv("a,b\n0,0\n0,0\n0,0\n0,0\n").unwrap();
        assert_eq!(fs.values.shape(), &[2, 4]);
        assert!(fs.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_transposes_rows_to_sensor_major() {
        let fs = parse_matrix_csv("s1,s2\n1,2\n3,4\n").unwrap();
        assert_eq!(fs.values.shape(), &[2, 2]);
        assert_eq!(fs.values.row(0), &[1.0, 3.0]);
        assert_eq!(fs.values.row(1), &[2.0, 4.0]);
        assert_eq!(fs.sensor_ids, vec!["s1", "s2"]);
    }

    #[test]
    fn csv_parse_error_names_row_and_column() {
        let err = parse_matrix_csv("s1,s2\n1,x\n").unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 1);
                assert_eq!(col, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(parse_matrix_csv("s1,s2\n1,2\n3\n").is_err());
    }

    #[test]
    fn csv_skips_comment_lines() {
        let fs = parse_matrix_csv("# generator: test\n# seed=1\ns1\n5\n6\n").unwrap();
        assert_eq!(fs.values.shape(), &[1, 2]);
        assert_eq!(fs.values.row(0), &[5.0, 6.0]);
    }

    #[test]
    fn split_lengths_and_order() {
        let s = series(&[&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]]);
        let (tr, va, te) = split_series(&s, 6, 2, 2).unwrap();
        assert_eq!(tr.steps(), 6);
        assert_eq!(va.steps(), 2);
        assert_eq!(te.steps(), 2);
        assert_eq!(tr.values.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(va.values.row(0), &[6.0, 7.0]);
        assert_eq!(te.values.row(0), &[8.0, 9.0]);
    }

    #[test]
    fn split_rejects_oversized_request() {
        let s = series(&[&[0.0; 10]]);
        assert!(split_series(&s, 8, 2, 2).is_err());
    }

    #[test]
    fn pems04_style_split() {
        // 44 train days + 5 validation days + 10 test days of 288 steps.
        let t = 12_672 + 1_440 + 2_880;
        let fs = FlowSeries::new(Tensor::zeros(vec![1, t]), 5, vec!["s0".into()]).unwrap();
        let (tr, va, te) = split_series(&fs, 12_672, 1_440, 2_880).unwrap();
        assert_eq!((tr.steps(), va.steps(), te.steps()), (12_672, 1_440, 2_880));
    }

    #[test]
    fn window_count_and_adjacency() {
        let s = series(&[&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]]);
        let stats = NormStats { mean: vec![0.0], std: vec![1.0] };
        let ds = make_windows(&s, 3, 2, &stats).unwrap();
        assert_eq!(ds.len(), 6); // N = 10 - 3 - 2 + 1

        // Last input step + 1 == first target step, for every window.
        for w in 0..ds.len() {
            let last_in = ds.inputs.at3(w, 0, 2);
            let first_tgt = ds.targets_raw.at3(w, 0, 0);
            assert_eq!(last_in + 1.0, first_tgt);
        }
    }

    #[test]
    fn window_boundaries() {
        let s = series(&[&[1.0, 2.0, 3.0, 4.0, 5.0]]);
        let stats = NormStats { mean: vec![0.0], std: vec![1.0] };
        assert_eq!(make_windows(&s, 3, 2, &stats).unwrap().len(), 1);
        assert!(make_windows(&s, 3, 3, &stats).is_err());
    }

    #[test]
    fn stats_hand_cases() {
        let s = series(&[&[1.0, 3.0], &[7.0, 7.0], &[0.0, 0.0]]);
        let st = normalize_stats(&s);
        assert_abs_diff_eq!(st.mean[0], 2.0);
        assert_abs_diff_eq!(st.std[0], 1.0);
        // Constant sensor: std replaced by 1.
        assert_eq!(st.mean[1], 7.0);
        assert_eq!(st.std[1], 1.0);
        assert_eq!((st.mean[2], st.std[2]), (0.0, 1.0));
    }

    #[test]
    fn denormalize_hand_cases() {
        let stats = NormStats { mean: vec![2.0], std: vec![3.0] };
        let x = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let d = denormalize(&x, &stats);
        assert_eq!(d.data(), &[2.0, 5.0]);
    }

    #[test]
    fn sensor_subset_selection() {
        let s = series(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let sub = s.select_sensors(&[2, 0]).unwrap();
        assert_eq!(sub.values.row(0), &[5.0, 6.0]);
        assert_eq!(sub.values.row(1), &[1.0, 2.0]);
        assert_eq!(sub.sensor_ids, vec!["s2", "s0"]);
        assert!(s.select_sensors(&[3]).is_err());
        assert!(s.select_sensors(&[]).is_err());
    }
}
