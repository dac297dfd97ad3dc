//! Central finite-difference check of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mask, Matrix, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_param: Vec<f64>,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub coordinates: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` at `params` against central differences.
///
/// `f` must be deterministic and build a scalar from the supplied leaves.
pub fn grad_check<F>(f: F, params: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_steps(f, params, &[eps])
}

/// Like [`grad_check`], but each coordinate is compared at every step in
/// `steps` and keeps its smallest error. Small steps lose accuracy to
/// rounding where the true derivative is near zero; large steps lose it
/// where the perturbation crosses a kink. A wrong gradient fails at every
/// step.
pub fn grad_check_steps<F>(f: F, params: &[Matrix], steps: &[f64]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(!steps.is_empty(), "at least one finite-difference step");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).get(0, 0))
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: vec![0.0; params.len()],
        worst: None,
        worst_values: None,
        coordinates: 0,
    };
    for pi in 0..params.len() {
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            let exact = analytic[pi].data()[k];
            let mut best = (f64::INFINITY, 0.0);
            for &eps in steps {
                work[pi].data_mut()[k] = orig + eps;
                let up = eval(&work)?;
                work[pi].data_mut()[k] = orig - eps;
                let down = eval(&work)?;
                work[pi].data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let err = relative_error(exact, numeric);
                if err < best.0 {
                    best = (err, numeric);
                }
            }
            let (err, numeric) = best;
            report.coordinates += 1;
            report.per_param[pi] = report.per_param[pi].max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((pi, k));
                report.worst_values = Some((exact, numeric));
            }
        }
    }
    Ok(report)
}

/// Default finite-difference step used by the built-in suites.
pub const DEFAULT_EPS: f64 = 1e-6;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

/// Gradient checks of every tape primitive on random small tensors drawn from `seed`.
///
/// Each primitive is wrapped in a random linear read-out so that every
/// output coordinate contributes to the checked scalar.
pub fn primitive_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..5);
    let cols = rng.random_range(1..5);
    let inner = rng.random_range(1..5);
    let a = random_matrix(&mut rng, rows, cols, -1.0, 1.0);
    let b = random_matrix(&mut rng, rows, cols, -1.0, 1.0);
    let row = random_matrix(&mut rng, 1, cols, -1.0, 1.0);
    let right = random_matrix(&mut rng, cols, inner, -1.0, 1.0);
    let pos = random_matrix(&mut rng, rows, cols, 0.5, 2.0);
    let col_a = random_matrix(&mut rng, rows, 1, -1.0, 1.0);
    let col_b = random_matrix(&mut rng, inner, 1, -1.0, 1.0);
    let square = random_matrix(&mut rng, rows, rows, -2.0, 2.0);
    let mut mask = Mask::from_fn(rows, rows, |_, _| rng.random_bool(0.5));
    mask.allow_diagonal();
    let idx: Vec<usize> = (0..rows + 2).map(|_| rng.random_range(0..rows)).collect();
    let weights = |rng: &mut ChaCha8Rng, r: usize, c: usize| random_matrix(rng, r, c, -1.0, 1.0);
    let w_rc = weights(&mut rng, rows, cols);
    let w_ri = weights(&mut rng, rows, inner);
    let w_r2c = weights(&mut rng, rows, 2 * cols);
    let w_2rc = weights(&mut rng, 2 * rows, cols);
    let w_rr = weights(&mut rng, rows, rows);
    let w_gc = weights(&mut rng, idx.len(), cols);
    let w_1c = weights(&mut rng, 1, cols);
    let w_r1 = weights(&mut rng, rows, 1);

    // Σ w ⊙ x
    fn readout(t: &mut Tape, x: Var, w: &Matrix) -> Result<Var> {
        let w = t.constant(w.clone());
        let p = t.mul(x, w)?;
        Ok(t.sum(p))
    }

    let eps = DEFAULT_EPS;
    let mut out = Vec::new();
    out.push((
        "matmul",
        grad_check(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                readout(t, y, &w_ri)
            },
            &[a.clone(), right.clone()],
            eps,
        )?,
    ));
    out.push((
        "add",
        grad_check(
            |t, v| {
                let y = t.add(v[0], v[1])?;
                readout(t, y, &w_rc)
            },
            &[a.clone(), b.clone()],
            eps,
        )?,
    ));
    out.push((
        "add_broadcast",
        grad_check(
            |t, v| {
                let y = t.add(v[0], v[1])?;
                readout(t, y, &w_rc)
            },
            &[a.clone(), row.clone()],
            eps,
        )?,
    ));
    out.push((
        "mul",
        grad_check(
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                readout(t, y, &w_rc)
            },
            &[a.clone(), b.clone()],
            eps,
        )?,
    ));
    out.push((
        "scale",
        grad_check(
            |t, v| {
                let y = t.affine(v[0], -1.7, 0.3);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "concat_cols",
        grad_check(
            |t, v| {
                let y = t.concat_cols(&[v[0], v[1]])?;
                readout(t, y, &w_r2c)
            },
            &[a.clone(), b.clone()],
            eps,
        )?,
    ));
    out.push((
        "concat_rows",
        grad_check(
            |t, v| {
                let y = t.concat_rows(&[v[0], v[1]])?;
                readout(t, y, &w_2rc)
            },
            &[a.clone(), b.clone()],
            eps,
        )?,
    ));
    out.push((
        "slice_rows",
        grad_check(
            |t, v| {
                let y = t.slice_rows(v[0], 0, 1)?;
                readout(t, y, &w_1c)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "gather_rows",
        grad_check(
            |t, v| {
                let y = t.gather_rows(v[0], &idx)?;
                readout(t, y, &w_gc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "pairwise_sum",
        grad_check(
            |t, v| {
                let y = t.pairwise_sum(v[0], v[1])?;
                readout(t, y, &w_ri)
            },
            &[col_a.clone(), col_b.clone()],
            eps,
        )?,
    ));
    out.push((
        "row_softmax_masked",
        grad_check(
            |t, v| {
                let y = t.row_softmax_masked(v[0], &mask)?;
                readout(t, y, &w_rr)
            },
            std::slice::from_ref(&square),
            eps,
        )?,
    ));
    out.push((
        "leaky_relu",
        grad_check(
            |t, v| {
                let y = t.leaky_relu(v[0], 0.2);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "elu",
        grad_check(
            |t, v| {
                let y = t.elu(v[0]);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "sigmoid",
        grad_check(
            |t, v| {
                let y = t.sigmoid(v[0]);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "exp",
        grad_check(
            |t, v| {
                let y = t.exp(v[0]);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "log",
        grad_check(
            |t, v| {
                let y = t.log(v[0]);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&pos),
            eps,
        )?,
    ));
    out.push((
        "clamp",
        grad_check(
            |t, v| {
                let y = t.clamp(v[0], -10.0, 10.0);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "mean_rows",
        grad_check(
            |t, v| {
                let y = t.mean_rows(v[0]);
                readout(t, y, &w_1c)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "sum",
        grad_check(
            |t, v| {
                let y = t.mul(v[0], v[0])?;
                Ok(t.sum(y))
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "cosine_sim",
        grad_check(
            |t, v| {
                let y = t.cosine_sim(v[0], v[1])?;
                readout(t, y, &w_r1)
            },
            &[a.clone(), row.clone()],
            eps,
        )?,
    ));
    // Dropout with a fixed mask: re-seed the same RNG on every evaluation.
    out.push((
        "dropout",
        grad_check(
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
                let y = t.dropout(v[0], 0.3, true, &mut r);
                readout(t, y, &w_rc)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    Ok(out)
}
