//! Central finite-difference verification of the autodiff engine, run in `f64`.

use super::param::{ParamKind, ParamStore, Session};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name (or `input`) and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self { max_rel_error: 0.0, worst: None, coordinates: 0 }
    }

    fn observe(&mut self, name: &str, index: usize, ad: f64, fd: f64) {
        let e = relative_error(ad, fd);
        self.coordinates += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((name.to_string(), index));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.coordinates += other.coordinates;
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// `|a - b| / max(1, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1.0)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::contract(format!("gradient check needs a scalar output, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Checks `f` at `point` against `(f(x + h) - f(x - h)) / 2h` for every coordinate.
pub fn gradient_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |x: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x, false);
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let out = f(&mut tape, x)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let ad = tape.grad(x).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; point.len()]);

    let mut report = GradCheckReport::empty();
    for (i, &g) in ad.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        report.observe("input", i, g, fd);
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every trainable weight in
/// `store`. Parameters with more than `max_coords` entries are probed on an
/// evenly strided subset of coordinates.
pub fn gradient_check_params<F>(store: &ParamStore<f64>, f: F, h: f64, max_coords: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut sess = Session::new(store, true);
        let out = f(&mut sess)?;
        scalar_of(&sess.tape, out)?;
        sess.tape.backward(out)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; store.len()];
        for (id, g) in sess.grads() {
            grads[id.index()] = Some(g.data().to_vec());
        }
        grads
    };

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut sess = Session::new(s, true);
        let out = f(&mut sess)?;
        scalar_of(&sess.tape, out)
    };

    let mut work = store.clone();
    let mut report = GradCheckReport::empty();
    for id in store.ids() {
        let p = store.get(id);
        if p.kind != ParamKind::Weight || p.frozen {
            continue;
        }
        let len = p.value.len();
        let step = len.div_ceil(max_coords.max(1)).max(1);
        for i in (0..len).step_by(step) {
            let orig = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let ad = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
            report.observe(&p.name, i, ad, (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}
