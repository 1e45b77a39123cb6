//! CSV writers for trajectories, benchmark records and ratio tables.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use slowfast_core::SampledSolution;

use crate::bench::{BenchRow, RatioRow};
use crate::config::RunConfig;

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "cell", "var", "value"];

pub const BENCHMARK_HEADER: [&str; 14] = [
    "suite",
    "model",
    "N",
    "coupling",
    "epsilon",
    "tol_or_h",
    "order",
    "strategy",
    "error",
    "cpu_seconds",
    "steps",
    "rejections",
    "newton_iters",
    "seed",
];

pub const RATIO_HEADER: [&str; 4] = ["sweep_value", "order", "R_E", "R_T"];

/// Name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "config.resolved.ini";

const VARS: [&str; 3] = ["x", "y", "z"];

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

/// One row per grid time, cell and variable. States are variable-blocked:
/// entry `v * n_cells + i` is variable `v` of cell `i`.
pub fn write_trajectory<W: Write>(out: W, sol: &SampledSolution, n_cells: usize) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for (t, u) in sol.grid.iter().zip(&sol.values) {
        let t = t.to_string();
        for cell in 0..n_cells {
            let cell_s = cell.to_string();
            for (v, name) in VARS.iter().enumerate().take(u.len() / n_cells.max(1)) {
                let value = u[v * n_cells + cell].to_string();
                w.write_record([t.as_str(), cell_s.as_str(), name, value.as_str()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()
}

pub fn write_benchmark<W: Write>(out: W, rows: &[BenchRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCHMARK_HEADER).map_err(csv_err)?;
    for r in rows {
        let rec = &r.record;
        w.write_record([
            r.suite.to_string(),
            r.model.to_string(),
            r.point.n.to_string(),
            r.point.coupling.to_string(),
            r.point.eps.to_string(),
            r.tol_or_h.to_string(),
            rec.method.order().to_string(),
            rec.strategy.to_string(),
            rec.error.to_string(),
            rec.cpu_seconds.to_string(),
            rec.stats.steps.to_string(),
            rec.stats.rejections.to_string(),
            rec.stats.newton_iterations.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_ratios<W: Write>(out: W, rows: &[RatioRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATIO_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_value.clone(),
            r.method.order().to_string(),
            r.r_e.to_string(),
            r.r_t.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Creates the output directory and writes the resolved configuration into
/// it, so every output can be reproduced from the directory alone.
pub fn prepare_dir(dir: &Path, cfg: &RunConfig) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_string())
}

/// Opens `dir/name` for buffered writing.
pub fn create(dir: &Path, name: &str) -> io::Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    Ok((path, BufWriter::new(f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{Mode, Point};
    use crate::config::Suite;
    use slowfast_core::{BenchmarkRecord, CouplingKind, Method, ModelKind, RunStats, Strategy};

    fn text(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_tables_have_headers_only() {
        assert_eq!(
            text(|b| write_benchmark(b, &[])),
            "suite,model,N,coupling,epsilon,tol_or_h,order,strategy,error,cpu_seconds,steps,rejections,newton_iters,seed\n"
        );
        assert_eq!(
            text(|b| write_ratios(b, &[])),
            "sweep_value,order,R_E,R_T\n"
        );
    }

    #[test]
    fn single_record_is_written_verbatim() {
        let row = BenchRow {
            suite: Suite::ToleranceSweep,
            model: ModelKind::Fn,
            point: Point {
                n: 100,
                coupling: CouplingKind::Lattice,
                eps: 0.05,
                mode: Mode::Adaptive { tol: 1e-4 },
            },
            tol_or_h: 1e-4,
            record: BenchmarkRecord {
                method: Method::Esdirk3,
                strategy: Strategy::Economical,
                error: 1.25e-3,
                cpu_seconds: 0.5,
                stats: RunStats {
                    steps: 40,
                    rejections: 2,
                    newton_iterations: 300,
                    ..RunStats::default()
                },
            },
            seed: 7,
        };
        let out = text(|b| write_benchmark(b, &[row]));
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            "tolerance_sweep,fn,100,lattice,0.05,0.0001,3,economical,0.00125,0.5,40,2,300,7"
        );
    }

    #[test]
    fn trajectory_rows_cover_cells_and_variables() {
        let sol = SampledSolution {
            grid: vec![0.0, 1.0],
            values: vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]],
        };
        let out = text(|b| write_trajectory(b, &sol, 2));
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "t,cell,var,value");
        assert_eq!(lines.len(), 1 + 2 * 2 * 2);
        assert_eq!(lines[1], "0,0,x,1");
        assert_eq!(lines[2], "0,0,y,3");
        assert_eq!(lines[3], "0,1,x,2");
        assert_eq!(lines[8], "1,1,y,8");
    }
}
