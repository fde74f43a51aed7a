//! Completion and scan-sequence metrics, and the evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cloud::{self, seeded_subset, DistanceReport, PointCloud};
use crate::error::{Error, Result};
use crate::par;

/// Mean distance from each input point to its nearest output point.
pub fn fidelity(input: &PointCloud, output: &PointCloud) -> Result<f64> {
    let near = cloud::nearest_indexed(input.rows(), output.rows());
    Ok(near.iter().fold(0.0, |s, m| s + m.1) / near.len() as f64)
}

/// Smallest Chamfer distance from `output` to any reference.
pub fn mmd(output: &PointCloud, references: &[PointCloud]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::input("mmd needs at least one reference"));
    }
    let d = par::map_range(references.len(), |i| cloud::chamfer_accelerated(output, &references[i]));
    d.into_iter()
        .try_fold(f64::INFINITY, |best, v| Ok(best.min(v?)))
}

/// Mean Chamfer distance between consecutive outputs.
pub fn consistency(outputs: &[PointCloud]) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::input("consistency needs at least two outputs"));
    }
    let d = par::map_range(outputs.len() - 1, |i| cloud::chamfer_accelerated(&outputs[i], &outputs[i + 1]));
    let mut sum = 0.0;
    for v in d {
        sum += v?;
    }
    Ok(sum / (outputs.len() - 1) as f64)
}

/// Earth-mover distance between seeded subsamples of `samples` points
/// (or all points when fewer).
pub fn emd_subsampled(a: &PointCloud, b: &PointCloud, samples: usize, seed: u64) -> Result<f64> {
    let count = samples.min(a.len()).min(b.len());
    let pick = |p: &PointCloud| -> Vec<f64> {
        seeded_subset(p.rows(), count, seed)
            .into_iter()
            .flat_map(|i| p.points()[i])
            .collect()
    };
    let (sa, sb) = (pick(a), pick(b));
    cloud::earth_mover(cloud::Rows::new(&sa, 3)?, cloud::Rows::new(&sb, 3)?)
}

/// Raw (unscaled) per-class completion errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: String,
    pub count: usize,
    pub chamfer: f64,
    pub emd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub method: String,
    pub classes: Vec<ClassScore>,
    pub fidelity: Option<f64>,
    pub mmd: Option<f64>,
    pub consistency: Option<f64>,
    pub accuracy: Option<f64>,
}

/// One evaluated completion.
#[derive(Debug, Clone)]
pub struct CompletionCase<'a> {
    pub class: &'a str,
    pub output: &'a PointCloud,
    pub truth: &'a PointCloud,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// Per-class Chamfer and EMD over `cases`, classes in name order.
    pub fn from_cases(method: &str, cases: &[CompletionCase<'_>], emd_samples: usize, seed: u64) -> Result<Self> {
        let scores = par::map_range(cases.len(), |i| -> Result<(f64, f64)> {
            let c = &cases[i];
            Ok((
                cloud::chamfer_accelerated(c.output, c.truth)?,
                emd_subsampled(c.output, c.truth, emd_samples, seed)?,
            ))
        });
        let mut by_class: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for (c, s) in cases.iter().zip(scores) {
            by_class.entry(c.class).or_default().push(s?);
        }
        Ok(EvalReport {
            method: method.to_string(),
            classes: by_class
                .into_iter()
                .map(|(class, v)| ClassScore {
                    class: class.to_string(),
                    count: v.len(),
                    chamfer: mean(v.iter().map(|s| s.0)),
                    emd: mean(v.iter().map(|s| s.1)),
                })
                .collect(),
            ..EvalReport::default()
        })
    }

    /// Mean of the per-class Chamfer values.
    pub fn avg_chamfer(&self) -> f64 {
        mean(self.classes.iter().map(|c| c.chamfer))
    }

    pub fn avg_emd(&self) -> f64 {
        mean(self.classes.iter().map(|c| c.emd))
    }

    /// Long-form CSV: `method,metric,class,value`, values at report scale.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,class,value\n");
        let m = &self.method;
        for c in &self.classes {
            let _ = writeln!(out, "{m},chamfer_x1e3,{},{}", c.class, DistanceReport::chamfer(c.chamfer).scaled());
            let _ = writeln!(out, "{m},emd_x1e2,{},{}", c.class, DistanceReport::earth_mover(c.emd).scaled());
        }
        if !self.classes.is_empty() {
            let _ = writeln!(out, "{m},chamfer_x1e3,avg,{}", DistanceReport::chamfer(self.avg_chamfer()).scaled());
            let _ = writeln!(out, "{m},emd_x1e2,avg,{}", DistanceReport::earth_mover(self.avg_emd()).scaled());
        }
        for (name, v) in self.extras() {
            let _ = writeln!(out, "{m},{name},all,{v}");
        }
        out
    }

    fn extras(&self) -> Vec<(&'static str, f64)> {
        [
            ("fidelity", self.fidelity),
            ("mmd", self.mmd),
            ("consistency", self.consistency),
            ("accuracy", self.accuracy),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }

    /// Aligned text: one table per distance with a method column, one column
    /// per class and an `Avg` column, then the scalar metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if !self.classes.is_empty() {
            let per: [(&str, fn(&ClassScore) -> f64, f64, f64); 2] = [
                ("Chamfer (x1e3)", |c| c.chamfer, DistanceReport::CHAMFER_SCALE, self.avg_chamfer()),
                ("EMD (x1e2)", |c| c.emd, DistanceReport::EMD_SCALE, self.avg_emd()),
            ];
            for (title, get, scale, avg) in per {
                let mut header = vec!["Method".to_string()];
                header.extend(self.classes.iter().map(|c| c.class.clone()));
                header.push("Avg".into());
                let mut row = vec![self.method.clone()];
                row.extend(self.classes.iter().map(|c| format!("{:.3}", get(c) * scale)));
                row.push(format!("{:.3}", avg * scale));
                let _ = writeln!(out, "{title}");
                out.push_str(&align(&[header, row]));
                out.push('\n');
            }
        }
        let extras = self.extras();
        if !extras.is_empty() {
            let header: Vec<String> = std::iter::once("Method".to_string())
                .chain(extras.iter().map(|e| e.0.to_string()))
                .collect();
            let row: Vec<String> = std::iter::once(self.method.clone())
                .chain(extras.iter().map(|e| format!("{:.5}", e.1)))
                .collect();
            out.push_str(&align(&[header, row]));
        }
        out
    }
}

/// Left-aligned columns separated by two spaces, with a rule under the header.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = width[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = cloud(&mut rng, 30);
        let b = cloud(&mut rng, 40);
        let mut union = a.points().to_vec();
        union.extend_from_slice(b.points());
        assert_eq!(fidelity(&a, &PointCloud::new(union).unwrap()).unwrap(), 0.0);
        let o = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert_eq!(fidelity(&o, &PointCloud::new(vec![[0.0, 0.0, 1.0]]).unwrap()).unwrap(), 1.0);
        let brute: f64 = a
            .points()
            .iter()
            .map(|p| b.points().iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / 30.0;
        assert!((fidelity(&a, &b).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn mmd_and_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs: Vec<PointCloud> = (0..5).map(|_| cloud(&mut rng, 20)).collect();
        let out = cloud(&mut rng, 20);
        assert_eq!(mmd(&refs[3], &refs).unwrap(), 0.0);
        let each: Vec<f64> = refs.iter().map(|r| cloud::chamfer(&out, r).unwrap()).collect();
        let best = each.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((mmd(&out, &refs).unwrap() - best).abs() < 1e-12);
        assert!((mmd(&out, &refs[..1]).unwrap() - each[0]).abs() < 1e-12);
        assert!(mmd(&out, &[]).is_err());

        assert_eq!(consistency(&[out.clone(), out.clone(), out.clone()]).unwrap(), 0.0);
        assert!((consistency(&refs[..2]).unwrap() - cloud::chamfer(&refs[0], &refs[1]).unwrap()).abs() < 1e-12);
        let pairwise: f64 = (0..4).map(|i| cloud::chamfer(&refs[i], &refs[i + 1]).unwrap()).sum::<f64>() / 4.0;
        assert!((consistency(&refs).unwrap() - pairwise).abs() < 1e-12);
        assert!(consistency(&refs[..1]).is_err());
    }

    #[test]
    fn report_averages_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clouds: Vec<PointCloud> = (0..6).map(|_| cloud(&mut rng, 50)).collect();
        let cases: Vec<CompletionCase<'_>> = (0..3)
            .map(|i| CompletionCase {
                class: ["box", "sphere", "box"][i],
                output: &clouds[2 * i],
                truth: &clouds[2 * i + 1],
            })
            .collect();
        let mut r = EvalReport::from_cases("SoftPool", &cases, 512, 0).unwrap();
        assert_eq!(r.classes.iter().map(|c| c.class.as_str()).collect::<Vec<_>>(), ["box", "sphere"]);
        let box_cd = (cloud::chamfer(&clouds[0], &clouds[1]).unwrap() + cloud::chamfer(&clouds[4], &clouds[5]).unwrap()) / 2.0;
        assert!((r.classes[0].chamfer - box_cd).abs() < 1e-12);
        assert!((r.avg_chamfer() - (r.classes[0].chamfer + r.classes[1].chamfer) / 2.0).abs() < 1e-12);
        r.accuracy = Some(0.9);
        let csv = r.to_csv();
        assert!(csv.starts_with("method,metric,class,value\n"));
        assert!(csv.contains(&format!("SoftPool,chamfer_x1e3,avg,{}", r.avg_chamfer() * 1e3)));
        let table = r.to_table();
        assert!(table.contains("Method"));
        assert!(table.lines().any(|l| l.starts_with("Method") && l.trim_end().ends_with("Avg")));
    }
}
