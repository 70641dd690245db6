//! Supervised sample construction, chronological splitting, the
//! (history × horizon) RMSE sweep, and CSV/SVG output of the result.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::lstm::{self, LstmError, Sample, TrainConfig};
use crate::par::{self, Execution};
use crate::window::{build_features, TelemetryFeature, Window};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error(
        "degenerate split for (history={history}, horizon={horizon}): \
         {train_samples} train and {test_samples} test samples"
    )]
    DegenerateSplit {
        history: usize,
        horizon: usize,
        train_samples: usize,
        test_samples: usize,
    },
    #[error(transparent)]
    Model(#[from] LstmError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Number of samples `make_samples` yields for a sequence of length `len`.
pub fn sample_count(len: usize, history: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(history + horizon)
}

/// One sample per `t` in `[history-1, len-1-horizon]`: inputs are
/// `features[t+1-history..=t]`, target is `cpu[t+horizon]`.
pub fn make_samples(
    features: &[Vec<f64>],
    cpu: &[f64],
    history: usize,
    horizon: usize,
) -> Vec<Sample> {
    assert_eq!(
        features.len(),
        cpu.len(),
        "features and cpu must be aligned"
    );
    assert!(
        history >= 1 && horizon >= 1,
        "history and horizon must be at least 1"
    );
    let n = sample_count(features.len(), history, horizon);
    (0..n)
        .map(|s| {
            let t = s + history - 1;
            Sample {
                inputs: features[s..=t].to_vec(),
                target: cpu[t + horizon],
            }
        })
        .collect()
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// Chronological train/test split of the windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    pub fn new(len: usize, train_fraction: f64) -> Result<Self, EvalError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(EvalError::BadFraction(train_fraction));
        }
        let cut = ((len as f64) * train_fraction).floor() as usize;
        Ok(Split {
            train: 0..cut,
            test: cut..len,
        })
    }

    /// Fails when either segment has no sample for `(history, horizon)`.
    pub fn check(&self, history: usize, horizon: usize) -> Result<(), EvalError> {
        let train_samples = sample_count(self.train.len(), history, horizon);
        let test_samples = sample_count(self.test.len(), history, horizon);
        if train_samples == 0 || test_samples == 0 {
            return Err(EvalError::DegenerateSplit {
                history,
                horizon,
                train_samples,
                test_samples,
            });
        }
        Ok(())
    }
}

/// Splits on window index, then validates the segments for `(history, horizon)`.
pub fn chrono_split(
    len: usize,
    train_fraction: f64,
    history: usize,
    horizon: usize,
) -> Result<Split, EvalError> {
    let split = Split::new(len, train_fraction)?;
    split.check(history, horizon)?;
    Ok(split)
}

/// RMSE of `ŷ(t+horizon) = cpu(t)` over exactly the indices `make_samples`
/// would target.
pub fn baseline_persistence(cpu: &[f64], history: usize, horizon: usize) -> Result<f64, EvalError> {
    let n = sample_count(cpu.len(), history, horizon);
    let (preds, targets): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|s| {
            let t = s + history - 1;
            (cpu[t], cpu[t + horizon])
        })
        .unzip();
    rmse(&preds, &targets)
}

/// Outcome of training and testing one (history, horizon) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub history: usize,
    pub horizon: usize,
    pub rmse: f64,
    pub baseline_rmse: f64,
    pub test_samples: usize,
    pub loss_history: Vec<f64>,
    pub params: lstm::LstmParams,
}

/// Trains on the train segment and scores on the test segment.
/// `config.history` and `config.horizon` select the cell.
pub fn evaluate_cell(
    features: &[Vec<f64>],
    cpu: &[f64],
    split: &Split,
    config: &TrainConfig,
    exec: Execution,
) -> Result<CellResult, EvalError> {
    let (h, i) = (config.history, config.horizon);
    split.check(h, i)?;
    let train = make_samples(
        &features[split.train.clone()],
        &cpu[split.train.clone()],
        h,
        i,
    );
    let test_cpu = &cpu[split.test.clone()];
    let test = make_samples(&features[split.test.clone()], test_cpu, h, i);

    let model = lstm::train(&train, config)?;
    let preds = par::map(exec, &test, |s| lstm::predict(&model.params, &s.inputs))
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()?;
    let targets: Vec<f64> = test.iter().map(|s| s.target).collect();
    Ok(CellResult {
        history: h,
        horizon: i,
        rmse: rmse(&preds, &targets)?,
        baseline_rmse: baseline_persistence(test_cpu, h, i)?,
        test_samples: test.len(),
        loss_history: model.loss_history,
        params: model.params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub histories: Vec<usize>,
    pub horizons: Vec<usize>,
    /// `rmse[r][c]` for `histories[r]`, `horizons[c]`.
    pub rmse: Vec<Vec<f64>>,
    pub baseline_rmse: Vec<Vec<f64>>,
    pub sample_counts: Vec<Vec<usize>>,
}

impl EvalGrid {
    pub fn cell(&self, history: usize, horizon: usize) -> Option<(f64, f64, usize)> {
        let r = self.histories.iter().position(|&h| h == history)?;
        let c = self.horizons.iter().position(|&i| i == horizon)?;
        Some((
            self.rmse[r][c],
            self.baseline_rmse[r][c],
            self.sample_counts[r][c],
        ))
    }
}

/// Trains one model per (history, horizon) cell with the same seed and
/// evaluates each on the held-out tail. Cells run under `exec`.
pub fn grid_eval(
    windows: &[Window],
    table: &EmbeddingTable,
    telemetry: &[TelemetryFeature],
    horizons: &[usize],
    histories: &[usize],
    train_fraction: f64,
    config: &TrainConfig,
    exec: Execution,
) -> Result<EvalGrid, EvalError> {
    if horizons.is_empty() || histories.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let split = Split::new(windows.len(), train_fraction)?;
    let cells: Vec<(usize, usize)> = histories
        .iter()
        .flat_map(|&h| horizons.iter().map(move |&i| (h, i)))
        .collect();
    // Report the first bad cell before spending time on training.
    for &(h, i) in &cells {
        split.check(h, i)?;
    }

    let features = build_features(windows, table, telemetry);
    let cpu: Vec<f64> = windows.iter().map(|w| w.cpu_util).collect();
    let results = par::map(exec, &cells, |&(h, i)| {
        let cfg = TrainConfig {
            history: h,
            horizon: i,
            ..config.clone()
        };
        evaluate_cell(&features, &cpu, &split, &cfg, Execution::Sequential)
    });

    let cols = horizons.len();
    let mut grid = EvalGrid {
        histories: histories.to_vec(),
        horizons: horizons.to_vec(),
        rmse: vec![vec![0.0; cols]; histories.len()],
        baseline_rmse: vec![vec![0.0; cols]; histories.len()],
        sample_counts: vec![vec![0; cols]; histories.len()],
    };
    for (k, res) in results.into_iter().enumerate() {
        let res = res?;
        let (r, c) = (k / cols, k % cols);
        grid.rmse[r][c] = res.rmse;
        grid.baseline_rmse[r][c] = res.baseline_rmse;
        grid.sample_counts[r][c] = res.test_samples;
    }
    Ok(grid)
}

pub fn grid_csv(grid: &EvalGrid) -> String {
    let mut out = String::from("history,horizon,rmse,baseline_rmse,n\n");
    for (r, h) in grid.histories.iter().enumerate() {
        for (c, i) in grid.horizons.iter().enumerate() {
            let _ = writeln!(
                out,
                "{h},{i},{},{},{}",
                grid.rmse[r][c], grid.baseline_rmse[r][c], grid.sample_counts[r][c]
            );
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart of RMSE against horizon, one polyline per history length.
pub fn grid_svg(grid: &EvalGrid) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let x_min = *grid.horizons.iter().min().unwrap_or(&0) as f64;
    let x_max = *grid.horizons.iter().max().unwrap_or(&1) as f64;
    let y_max = grid
        .rmse
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };

    let px = |x: f64| {
        if x_max > x_min {
            LEFT + (x - x_min) / (x_max - x_min) * plot_w
        } else {
            LEFT + plot_w / 2.0
        }
    };
    let py = |y: f64| TOP + plot_h - (y / y_max) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    );
    let (x0, y0, x1, y1) = (LEFT, TOP + plot_h, LEFT + plot_w, TOP);
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );

    for &i in &grid.horizons {
        let x = px(i as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{i}</text>"#,
            y0 + 18.0
        );
    }
    for k in 0..=4 {
        let v = y_max * f64::from(k) / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">horizon (windows ahead)</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">RMSE</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (r, h) in grid.histories.iter().enumerate() {
        let color = PALETTE[r % PALETTE.len()];
        let points: Vec<String> = grid
            .horizons
            .iter()
            .enumerate()
            .map(|(c, &i)| format!("{:.2},{:.2}", px(i as f64), py(grid.rmse[r][c])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * r as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">history {h}</text>"#,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `grid.csv` and `grid.svg` into `out_dir`.
pub fn emit_outputs(grid: &EvalGrid, out_dir: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let csv_path = out_dir.join("grid.csv");
    let svg_path = out_dir.join("grid.svg");
    fs::write(&csv_path, grid_csv(grid)).map_err(io(&csv_path))?;
    fs::write(&svg_path, grid_svg(grid)).map_err(io(&svg_path))?;
    Ok((csv_path, svg_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_grid() -> EvalGrid {
        EvalGrid {
            histories: vec![1, 5],
            horizons: vec![1, 2, 3],
            rmse: vec![vec![0.1, 0.2, 0.3], vec![0.1, 0.15, 0.2]],
            baseline_rmse: vec![vec![0.2; 3]; 2],
            sample_counts: vec![vec![10, 9, 8], vec![6, 5, 4]],
        }
    }

    #[test]
    fn sample_counts() {
        let f: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let cpu: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(make_samples(&f, &cpu, 3, 2).len(), 6);
        assert_eq!(make_samples(&f[..3], &cpu[..3], 3, 1).len(), 0);
        let s = make_samples(&f, &cpu, 2, 1);
        assert_eq!(s[0].inputs, vec![vec![0.0], vec![1.0]]);
        assert_eq!(s[0].target, cpu[2]);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(rmse(&[], &[]), Err(EvalError::EmptyInput)));
        assert!(matches!(
            rmse(&[1.0], &[]),
            Err(EvalError::LengthMismatch(1, 0))
        ));
    }

    #[test]
    fn split_examples() {
        let s = Split::new(100, 0.8).unwrap();
        assert_eq!((s.train, s.test.clone()), (0..80, 80..100));
        assert_eq!(sample_count(s.test.len(), 10, 5), 6);
        assert!(matches!(
            chrono_split(20, 0.99, 10, 5),
            Err(EvalError::DegenerateSplit {
                history: 10,
                horizon: 5,
                ..
            })
        ));
        assert!(matches!(
            Split::new(10, 1.0),
            Err(EvalError::BadFraction(_))
        ));
    }

    #[test]
    fn persistence_examples() {
        assert_eq!(baseline_persistence(&[0.4; 20], 3, 2).unwrap(), 0.0);
        let alt: Vec<f64> = (0..21).map(|k| (k % 2) as f64).collect();
        assert_eq!(baseline_persistence(&alt, 4, 3).unwrap(), 1.0);
    }

    #[test]
    fn csv_shape() {
        let csv = grid_csv(&toy_grid());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "history,horizon,rmse,baseline_rmse,n");
        assert_eq!(lines[1], "1,1,0.1,0.2,10");
        assert_eq!(lines[6], "5,3,0.2,0.2,4");
    }

    #[test]
    fn svg_has_one_polyline_per_history() {
        let svg = grid_svg(&toy_grid());
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("history 1"));
        assert!(svg.contains("history 5"));
    }

    #[test]
    fn emit_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let grid = toy_grid();
        let (c1, s1) = emit_outputs(&grid, dir.path()).unwrap();
        let a = (fs::read(&c1).unwrap(), fs::read(&s1).unwrap());
        emit_outputs(&grid, dir.path()).unwrap();
        let b = (fs::read(&c1).unwrap(), fs::read(&s1).unwrap());
        assert_eq!(a, b);
    }
}
