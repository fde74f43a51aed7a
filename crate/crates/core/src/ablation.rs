//! Ablation sweeps over `τ`, `(N_f, N_r)`, the boundary weight and the
//! soft-pool row range.

use std::fmt::Write as _;

use crate::cloud::DistanceReport;
use crate::config::RunConfig;
use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::losses;
use crate::metrics::align;
use crate::model::{ModelParams, Sample};
use crate::train::{mean_chamfer, predict_all, train};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Tau,
    Regions,
    BoundaryWeight,
    RowRange,
}

pub const TAU_VALUES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const REGION_GRID: [(usize, usize); 5] = [(2, 128), (4, 64), (8, 32), (16, 16), (32, 8)];
pub const BOUNDARY_WEIGHTS: [f64; 3] = [1.0, 2.0, 10.0];
pub const ROW_RANGES: [(usize, usize); 5] = [(1, 2), (1, 4), (1, 8), (1, 16), (1, 32)];

impl Sweep {
    pub const ALL: [Sweep; 4] = [Sweep::Tau, Sweep::Regions, Sweep::BoundaryWeight, Sweep::RowRange];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Tau => "tau",
            Sweep::Regions => "regions",
            Sweep::BoundaryWeight => "boundary-weight",
            Sweep::RowRange => "row-range",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::input(format!("unknown sweep {s:?} (expected tau, regions, boundary-weight or row-range)")))
    }

    /// Cell labels in table order.
    pub fn labels(self) -> Vec<String> {
        match self {
            Sweep::Tau => TAU_VALUES.iter().map(|t| format!("{t}")).collect(),
            Sweep::Regions => REGION_GRID.iter().map(|(f, r)| format!("({f}, {r})")).collect(),
            Sweep::BoundaryWeight => BOUNDARY_WEIGHTS.iter().map(|w| format!("{w} ×")).collect(),
            Sweep::RowRange => ROW_RANGES.iter().map(|(a, b)| format!("[{a}:{b}]")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    /// Raw mean holdout Chamfer distance.
    pub chamfer: f64,
    /// Mean holdout `L_inter`, reported for the regions sweep.
    pub inter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub sweep: Sweep,
    pub cells: Vec<AblationCell>,
}

fn scaled(c: f64) -> String {
    format!("{:.3}", DistanceReport::chamfer(c).scaled())
}

impl AblationTable {
    /// Text table: the `τ`, regions and row-range sweeps lay cells out as
    /// columns, the boundary-weight sweep as rows.
    pub fn to_table(&self) -> String {
        let head = |name: &str| -> Vec<String> {
            std::iter::once(name.to_string())
                .chain(self.cells.iter().map(|c| c.label.clone()))
                .collect()
        };
        let row = |name: &str, f: &dyn Fn(&AblationCell) -> String| -> Vec<String> {
            std::iter::once(name.to_string()).chain(self.cells.iter().map(f)).collect()
        };
        let chamfer = |c: &AblationCell| scaled(c.chamfer);
        match self.sweep {
            Sweep::Tau => align(&[head("τ"), row("Chamfer (x1e3)", &chamfer)]),
            Sweep::RowRange => align(&[head("Rows of F′"), row("Chamfer (x1e3)", &chamfer)]),
            Sweep::Regions => align(&[
                head("(N_f, N_r)"),
                row("Chamfer (x1e3)", &chamfer),
                row("L_inter", &|c| c.inter.map_or("-".into(), |v| format!("{v:.3}"))),
            ]),
            Sweep::BoundaryWeight => {
                let mut rows = vec![vec!["L_boundary weight".to_string(), "Chamfer (x1e3)".to_string()]];
                rows.extend(self.cells.iter().map(|c| vec![c.label.clone(), scaled(c.chamfer)]));
                align(&rows)
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,cell,chamfer_x1e3,inter\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},\"{}\",{},{}",
                self.sweep.name(),
                c.label,
                DistanceReport::chamfer(c.chamfer).scaled(),
                c.inter.map_or(String::new(), |v| v.to_string())
            );
        }
        out
    }

    pub fn cell(&self, label: &str) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// For the regions sweep: neither extreme cell beats `(8, 32)`.
    pub fn extremes_not_better(&self) -> Option<bool> {
        let mid = self.cell("(8, 32)")?.chamfer;
        Some(self.cell("(2, 128)")?.chamfer >= mid && self.cell("(32, 8)")?.chamfer >= mid)
    }
}

fn mean_inter(cfg: &RunConfig, params: &ModelParams, test: &[&Sample]) -> Result<f64> {
    let preds = predict_all(&cfg.model(), params, test, cfg.seed)?;
    let features: Vec<FeatureMatrix> = preds.into_iter().map(|p| p.features).collect();
    losses::loss_inter(&features)
}

fn train_cell(cfg: &RunConfig, train_set: &[Sample], test: &[&Sample], with_inter: bool) -> Result<(ModelParams, f64, Option<f64>)> {
    let params = ModelParams::init(&cfg.model(), cfg.seed)?;
    let (params, _) = train(cfg, params, train_set, None, |_, _| {})?;
    let chamfer = mean_chamfer(&cfg.model(), &params, test, cfg.seed)?;
    let inter = if with_inter { Some(mean_inter(cfg, &params, test)?) } else { None };
    Ok((params, chamfer, inter))
}

/// Runs every cell of `sweep` from `base`. Each cell trains a fresh model
/// from the same seed, except the row-range sweep, which trains once with
/// `base` and varies only the rows read from `F′`.
pub fn run_ablation(
    sweep: Sweep,
    base: &RunConfig,
    train_set: &[Sample],
    test: &[Sample],
    mut on_cell: impl FnMut(&AblationCell),
) -> Result<AblationTable> {
    base.validate()?;
    let test: Vec<&Sample> = test.iter().collect();
    let labels = sweep.labels();
    let mut cells = Vec::with_capacity(labels.len());
    let mut push = |cells: &mut Vec<AblationCell>, label: &str, chamfer: f64, inter: Option<f64>| {
        let cell = AblationCell {
            label: label.to_string(),
            chamfer,
            inter,
        };
        on_cell(&cell);
        cells.push(cell);
    };
    match sweep {
        Sweep::Tau => {
            for (tau, label) in TAU_VALUES.iter().zip(&labels) {
                let cfg = RunConfig { tau: *tau, ..base.clone() };
                let (_, c, _) = train_cell(&cfg, train_set, &test, false)?;
                push(&mut cells, label, c, None);
            }
        }
        Sweep::Regions => {
            for (&(n_f, n_r), label) in REGION_GRID.iter().zip(&labels) {
                let cfg = RunConfig { n_f, n_r, ..base.clone() };
                let (_, c, i) = train_cell(&cfg, train_set, &test, true)?;
                push(&mut cells, label, c, i);
            }
        }
        Sweep::BoundaryWeight => {
            for (&w, label) in BOUNDARY_WEIGHTS.iter().zip(&labels) {
                let mut cfg = base.clone();
                cfg.weights.boundary = w;
                let (_, c, _) = train_cell(&cfg, train_set, &test, false)?;
                push(&mut cells, label, c, None);
            }
        }
        Sweep::RowRange => {
            let (params, _, _) = train_cell(base, train_set, &test, false)?;
            for (&(lo, hi), label) in ROW_RANGES.iter().zip(&labels) {
                let cfg = RunConfig {
                    row_offset: lo - 1,
                    n_r: hi - lo + 1,
                    ..base.clone()
                };
                cfg.validate()?;
                let c = mean_chamfer(&cfg.model(), &params, &test, cfg.seed)?;
                push(&mut cells, label, c, None);
            }
        }
    }
    Ok(AblationTable { sweep, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pairs, DatasetSpec, ShapeClass};

    #[test]
    fn grids_match_the_published_layouts() {
        assert_eq!(Sweep::Tau.labels().len(), 9);
        assert_eq!(Sweep::Regions.labels(), ["(2, 128)", "(4, 64)", "(8, 32)", "(16, 16)", "(32, 8)"]);
        assert_eq!(Sweep::BoundaryWeight.labels(), ["1 ×", "2 ×", "10 ×"]);
        assert_eq!(Sweep::RowRange.labels()[4], "[1:32]");
        assert!(Sweep::parse("bogus").is_err());
    }

    #[test]
    fn row_range_sweep_runs() {
        let base = RunConfig {
            n_in: 64,
            hidden: vec![8],
            n_p: 4,
            upsample: 2,
            epochs: 1,
            preserve_samples: 16,
            ..RunConfig::desk()
        };
        let data: Vec<Sample> = generate_pairs(&DatasetSpec::new(vec![ShapeClass::Box], 4, 64, 128, 0))
            .unwrap()
            .iter()
            .map(|p| p.sample())
            .collect();
        let mut seen = 0;
        let t = run_ablation(Sweep::RowRange, &base, &data[..2], &data[2..], |_| seen += 1).unwrap();
        assert_eq!((t.cells.len(), seen), (5, 5));
        let text = t.to_table();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("Rows of F′"));
        assert_eq!(t.to_csv().lines().count(), 6);
    }
}
