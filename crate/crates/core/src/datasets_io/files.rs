use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use ndarray::{Array2, ArrayView2, Axis};

use crate::costs::PointCloud;
use crate::entropic_gw::SolveReport;
use crate::lr_dykstra::LowRankCoupling;
use crate::sinkhorn::Coupling;
use crate::{Error, Result};

pub const REPORT_HEADER: [&str; 5] = ["iter", "loss", "delta", "inner_iters", "elapsed_ms"];

/// Shortest text that parses back to the same bits.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            detail: format!("row has {len} fields, expected {expected_len}"),
        },
        other => Error::Parse {
            line,
            detail: format!("{other:?}"),
        },
    }
}

fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut w = WriterBuilder::new()
        .has_headers(false)
        .terminator(Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_error)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|&x| fmt_f64(x))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = ReaderBuilder::new().has_headers(false).flexible(false).from_path(path).map_err(csv_error)?;
    let mut values = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 1);
        cols = record.len();
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                detail: format!("'{field}' is not a decimal number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Input(format!("{} contains no rows", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Input(e.to_string()))
}

pub fn save_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_matrix(path.as_ref(), cloud.points())
}

/// Reads a headerless CSV, one point per row.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    PointCloud::new(read_matrix(path.as_ref())?)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// Paths `<prefix>.Q.csv`, `<prefix>.R.csv`, `<prefix>.g.csv`.
pub fn low_rank_paths(prefix: impl AsRef<Path>) -> [PathBuf; 3] {
    let p = prefix.as_ref();
    [with_suffix(p, ".Q.csv"), with_suffix(p, ".R.csv"), with_suffix(p, ".g.csv")]
}

pub fn save_low_rank(prefix: impl AsRef<Path>, triple: &LowRankCoupling) -> Result<()> {
    let [q, r, g] = low_rank_paths(prefix);
    write_matrix(&q, triple.q.view())?;
    write_matrix(&r, triple.r.view())?;
    write_matrix(&g, triple.g.view().insert_axis(Axis(1)))
}

/// Loads a triple and checks `Q^T 1 = R^T 1 = g`, `Σ g = 1` within `tol`,
/// `g >= alpha` and nonnegativity.
pub fn load_low_rank(prefix: impl AsRef<Path>, alpha: f64, tol: f64) -> Result<LowRankCoupling> {
    let [qp, rp, gp] = low_rank_paths(prefix);
    let q = read_matrix(&qp)?;
    let r = read_matrix(&rp)?;
    let g = read_matrix(&gp)?;
    if g.ncols() != 1 || q.ncols() != g.nrows() || r.ncols() != g.nrows() {
        return Err(Error::dim(
            "load_low_rank",
            format!("Q n x r, R m x r, g r x 1 with r = {}", g.nrows()),
            format!("Q {:?}, R {:?}, g {:?}", q.dim(), r.dim(), g.dim()),
        ));
    }
    let triple = LowRankCoupling {
        q,
        r,
        g: g.column(0).to_owned(),
    };
    let (a, b) = triple.marginals();
    let res = triple.residuals(a.view(), b.view(), alpha);
    if !res.within(tol) {
        return Err(Error::Validation(format!("low-rank coupling violates its constraints: {res}")));
    }
    Ok(triple)
}

pub fn save_coupling(path: impl AsRef<Path>, plan: ArrayView2<f64>) -> Result<()> {
    write_matrix(path.as_ref(), plan)
}

/// Loads a dense plan; entries must be nonnegative and sum to 1 within `tol`.
pub fn load_coupling(path: impl AsRef<Path>, tol: f64) -> Result<Coupling> {
    let plan = read_matrix(path.as_ref())?;
    let min = plan.iter().copied().fold(f64::INFINITY, f64::min);
    let mass = plan.sum();
    if !(min >= 0.0) || !((mass - 1.0).abs() <= tol) {
        return Err(Error::Validation(format!("coupling has min entry {min:.3e} and mass {mass:.12}")));
    }
    Ok(Coupling::from_plan(plan))
}

/// Report rows `iter,loss,delta,inner_iters,elapsed_ms`, iterations from 1.
pub fn write_report<W: Write>(out: W, report: &SolveReport) -> Result<()> {
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_error)?;
    for (i, loss) in report.losses.iter().enumerate() {
        let delta = report.deltas.get(i).map(|&d| fmt_f64(d)).unwrap_or_default();
        let inner = report.inner_iterations.get(i).copied().unwrap_or(0);
        let ms = report.elapsed_ms.get(i).copied().unwrap_or(0.0);
        w.write_record([(i + 1).to_string(), fmt_f64(*loss), delta, inner.to_string(), format!("{ms:.3}")])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_report(path: impl AsRef<Path>, report: &SolveReport) -> Result<()> {
    write_report(BufWriter::new(File::create(path)?), report)
}

/// Column `j` of a report CSV as floats; empty cells become `None`.
#[cfg(test)]
fn report_column(text: &str, j: usize) -> Vec<Option<f64>> {
    text.lines().skip(1).map(|l| l.split(',').nth(j).and_then(|c| c.parse().ok())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropic_gw::StopReason;
    use crate::linalg::uniform;
    use crate::lr_dykstra::random_feasible_triple;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::fs;

    #[test]
    fn point_cloud_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Array2::from_shape_fn((30, 4), |_| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-20..20)));
        m[[0, 0]] = 1e-300;
        m[[0, 1]] = -0.0;
        m[[0, 2]] = f64::MAX;
        let cloud = PointCloud::new(m).unwrap();
        let path = dir.path().join("x.csv");
        save_point_cloud(&path, &cloud).unwrap();
        let back = load_point_cloud(&path).unwrap();
        assert!(cloud.points().iter().zip(back.points().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 30);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,2\n3,4\n5\n").unwrap();
        match load_point_cloud(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        fs::write(&path, "1,2\n3,x\n").unwrap();
        assert!(matches!(load_point_cloud(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_file_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "").unwrap();
        assert!(matches!(load_point_cloud(&path), Err(Error::Input(_))));
        assert!(matches!(load_point_cloud(dir.path().join("missing.csv")), Err(Error::Io(_))));
    }

    #[test]
    fn low_rank_round_trip_and_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("run");
        let t = random_feasible_triple(uniform(7).view(), uniform(5).view(), 3, 1).unwrap();
        save_low_rank(&prefix, &t).unwrap();
        let back = load_low_rank(&prefix, 1e-10, 1e-9).unwrap();
        assert_eq!(back, t);
        let (a, b) = back.marginals();
        assert!(back.residuals(a.view(), b.view(), 1e-10).within(1e-9));

        let gpath = &low_rank_paths(&prefix)[2];
        let mut g = t.g.clone();
        g[0] = 1e-12;
        fs::write(gpath, g.iter().map(|v| format!("{v:?}\n")).collect::<String>()).unwrap();
        let err = load_low_rank(&prefix, 1e-10, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("floor")), "{err}");
    }

    #[test]
    fn coupling_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let plan = array![[0.25, 0.25], [0.125, 0.375]];
        save_coupling(&path, plan.view()).unwrap();
        let c = load_coupling(&path, 1e-12).unwrap();
        assert_eq!(c.plan, plan);
        assert_eq!(c.a, array![0.5, 0.5]);
        save_coupling(&path, array![[0.5, -0.1], [0.3, 0.3]].view()).unwrap();
        assert!(matches!(load_coupling(&path, 1e-12), Err(Error::Validation(_))));
    }

    #[test]
    fn report_has_one_row_per_iteration() {
        let report = SolveReport {
            losses: vec![3.0, 2.0, 1.5],
            deltas: vec![0.1, 0.01, 0.001],
            inner_iterations: vec![10, 8, 7],
            elapsed_ms: vec![1.0, 2.0004, 3.25],
            initial_loss: 4.0,
            initial_gap: 2.5,
            stop_reason: StopReason::MaxIter,
            init_fallback: false,
        };
        let mut buf = Vec::new();
        write_report(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,loss,delta,inner_iters,elapsed_ms");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "2,2.0,0.01,8,2.000");
        assert_eq!(report_column(&text, 2), vec![Some(0.1), Some(0.01), Some(0.001)]);

        let no_delta = SolveReport { deltas: vec![], ..report };
        let mut buf = Vec::new();
        write_report(&mut buf, &no_delta).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(report_column(&text, 2), vec![None, None, None]);
        assert!(text.lines().nth(1).unwrap().starts_with("1,3.0,,10,"));
    }
}
