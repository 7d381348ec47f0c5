use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::Scalar;

use super::params::ParamStore;

/// Two-gate recurrent cell (update and reset gates plus a tanh candidate).
/// Parameters live in the store under the cell's name prefix.
#[derive(Debug, Clone)]
pub struct GruCell {
    prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

/// Per-step activations needed for backpropagation through time.
#[derive(Debug, Clone)]
pub struct GruStepCache<S> {
    x: Matrix<S>,
    h_prev: Matrix<S>,
    z: Matrix<S>,
    r: Matrix<S>,
    hc: Matrix<S>,
    rh: Matrix<S>,
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

impl GruCell {
    pub fn init<S: Scalar>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        for gate in ["z", "r", "h"] {
            ps.register_init(&format!("{prefix}.w{gate}"), hidden, in_dim, in_dim, rng)?;
            ps.register_init(&format!("{prefix}.u{gate}"), hidden, hidden, hidden, rng)?;
            ps.register_init(&format!("{prefix}.b{gate}"), 1, hidden, in_dim, rng)?;
        }
        Ok(GruCell {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
        })
    }

    /// Handle over already-registered parameters (e.g. from a checkpoint).
    pub fn descriptor(prefix: &str, in_dim: usize, hidden: usize) -> Self {
        GruCell {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
        }
    }

    fn p(&self, name: &str) -> String {
        format!("{}.{}", self.prefix, name)
    }

    pub fn initial_state<S: Scalar>(&self) -> Matrix<S> {
        Matrix::zeros(1, self.hidden)
    }

    fn gate_pre<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        gate: &str,
        x: &Matrix<S>,
        h: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let mut a = x.matmul_nt(ps.value(&self.p(&format!("w{gate}")))?)?;
        a.add_assign(&h.matmul_nt(ps.value(&self.p(&format!("u{gate}")))?)?)?;
        a.add_row_broadcast(ps.value(&self.p(&format!("b{gate}")))?)?;
        Ok(a)
    }

    /// One step: x is 1×in, h_prev is 1×hidden. Returns the new state and the
    /// cache for backward.
    pub fn step<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Matrix<S>,
        h_prev: &Matrix<S>,
    ) -> Result<(Matrix<S>, GruStepCache<S>)> {
        if x.cols() != self.in_dim || h_prev.cols() != self.hidden {
            return Err(Error::Shape(format!(
                "cell '{}' got input {}x{}, state {}x{}",
                self.prefix,
                x.rows(),
                x.cols(),
                h_prev.rows(),
                h_prev.cols()
            )));
        }
        let z = self.gate_pre(ps, "z", x, h_prev)?.map(sigmoid);
        let r = self.gate_pre(ps, "r", x, h_prev)?.map(sigmoid);
        let mut rh = h_prev.clone();
        for (v, &g) in rh.data_mut().iter_mut().zip(r.data()) {
            *v *= g;
        }
        let hc = self.gate_pre(ps, "h", x, &rh)?.map(|v| v.tanh());
        let mut h = Matrix::zeros(1, self.hidden);
        for j in 0..self.hidden {
            let zj = z.get(0, j);
            h.set(0, j, (S::one() - zj) * h_prev.get(0, j) + zj * hc.get(0, j));
        }
        let cache = GruStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            hc,
            rh,
        };
        Ok((h, cache))
    }

    /// Backward for one step: accumulates parameter gradients, returns
    /// (dx, dh_prev).
    pub fn backward_step<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        cache: &GruStepCache<S>,
        dh: &Matrix<S>,
    ) -> Result<(Matrix<S>, Matrix<S>)> {
        let h = self.hidden;
        let mut dhc = Matrix::zeros(1, h);
        let mut dz = Matrix::zeros(1, h);
        let mut dh_prev = Matrix::zeros(1, h);
        for j in 0..h {
            let d = dh.get(0, j);
            let zj = cache.z.get(0, j);
            dhc.set(0, j, d * zj);
            dz.set(0, j, d * (cache.hc.get(0, j) - cache.h_prev.get(0, j)));
            dh_prev.set(0, j, d * (S::one() - zj));
        }

        // candidate branch
        let mut dah = Matrix::zeros(1, h);
        for j in 0..h {
            let c = cache.hc.get(0, j);
            dah.set(0, j, dhc.get(0, j) * (S::one() - c * c));
        }
        ps.add_grad(&self.p("wh"), &dah.matmul_tn(&cache.x)?)?;
        ps.add_grad(&self.p("uh"), &dah.matmul_tn(&cache.rh)?)?;
        ps.add_grad(&self.p("bh"), &dah)?;
        let mut dx = dah.matmul(ps.value(&self.p("wh"))?)?;
        let drh = dah.matmul(ps.value(&self.p("uh"))?)?;
        let mut dr = Matrix::zeros(1, h);
        for j in 0..h {
            dr.set(0, j, drh.get(0, j) * cache.h_prev.get(0, j));
            let v = dh_prev.get(0, j) + drh.get(0, j) * cache.r.get(0, j);
            dh_prev.set(0, j, v);
        }

        // reset gate
        let mut dar = Matrix::zeros(1, h);
        for j in 0..h {
            let rj = cache.r.get(0, j);
            dar.set(0, j, dr.get(0, j) * rj * (S::one() - rj));
        }
        ps.add_grad(&self.p("wr"), &dar.matmul_tn(&cache.x)?)?;
        ps.add_grad(&self.p("ur"), &dar.matmul_tn(&cache.h_prev)?)?;
        ps.add_grad(&self.p("br"), &dar)?;
        dx.add_assign(&dar.matmul(ps.value(&self.p("wr"))?)?)?;
        dh_prev.add_assign(&dar.matmul(ps.value(&self.p("ur"))?)?)?;

        // update gate
        let mut daz = Matrix::zeros(1, h);
        for j in 0..h {
            let zj = cache.z.get(0, j);
            daz.set(0, j, dz.get(0, j) * zj * (S::one() - zj));
        }
        ps.add_grad(&self.p("wz"), &daz.matmul_tn(&cache.x)?)?;
        ps.add_grad(&self.p("uz"), &daz.matmul_tn(&cache.h_prev)?)?;
        ps.add_grad(&self.p("bz"), &daz)?;
        dx.add_assign(&daz.matmul(ps.value(&self.p("wz"))?)?)?;
        dh_prev.add_assign(&daz.matmul(ps.value(&self.p("uz"))?)?)?;

        Ok((dx, dh_prev))
    }

    /// Unrolls the cell over a T×in sequence from a zero initial state.
    pub fn run_sequence<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Matrix<S>,
    ) -> Result<(Matrix<S>, Vec<GruStepCache<S>>)> {
        if x.rows() == 0 {
            return Err(Error::Shape("recurrent layer needs T >= 1".into()));
        }
        let mut h = self.initial_state();
        let mut out = Matrix::zeros(x.rows(), self.hidden);
        let mut caches = Vec::with_capacity(x.rows());
        for t in 0..x.rows() {
            let (h_new, cache) = self.step(ps, &x.row_matrix(t), &h)?;
            out.row_mut(t).copy_from_slice(h_new.row(0));
            caches.push(cache);
            h = h_new;
        }
        Ok((out, caches))
    }

    /// BPTT over a cached unroll; accumulates parameter gradients and returns
    /// dX (T×in).
    pub fn backward_sequence<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        caches: &[GruStepCache<S>],
        dout: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let t_len = caches.len();
        let mut dx = Matrix::zeros(t_len, self.in_dim);
        let mut dh = Matrix::zeros(1, self.hidden);
        for t in (0..t_len).rev() {
            let mut dh_t = dout.row_matrix(t);
            dh_t.add_assign(&dh)?;
            let (dxt, dh_prev) = self.backward_step(ps, &caches[t], &dh_t)?;
            dx.row_mut(t).copy_from_slice(dxt.row(0));
            dh = dh_prev;
        }
        Ok(dx)
    }
}

/// Bidirectional recurrent layer: two independent cells, output is the
/// per-frame concatenation of both directions (width 2·hidden).
#[derive(Debug, Clone)]
pub struct BiGruLayer {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

pub struct BiGruCache<S> {
    fwd: Vec<GruStepCache<S>>,
    bwd: Vec<GruStepCache<S>>,
}

impl BiGruLayer {
    pub fn init<S: Scalar>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(BiGruLayer {
            fwd: GruCell::init(ps, &format!("{prefix}.fwd"), in_dim, hidden, rng)?,
            bwd: GruCell::init(ps, &format!("{prefix}.bwd"), in_dim, hidden, rng)?,
        })
    }

    pub fn descriptor(prefix: &str, in_dim: usize, hidden: usize) -> Self {
        BiGruLayer {
            fwd: GruCell::descriptor(&format!("{prefix}.fwd"), in_dim, hidden),
            bwd: GruCell::descriptor(&format!("{prefix}.bwd"), in_dim, hidden),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.hidden * 2
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Matrix<S>,
    ) -> Result<(Matrix<S>, BiGruCache<S>)> {
        let (hf, cf) = self.fwd.run_sequence(ps, x)?;
        let (hb_rev, cb) = self.bwd.run_sequence(ps, &x.reverse_rows())?;
        let hb = hb_rev.reverse_rows();
        Ok((hf.concat_cols(&hb)?, BiGruCache { fwd: cf, bwd: cb }))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        cache: &BiGruCache<S>,
        dout: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let h = self.fwd.hidden;
        let t_len = cache.fwd.len();
        let mut df = Matrix::zeros(t_len, h);
        let mut db = Matrix::zeros(t_len, h);
        for t in 0..t_len {
            df.row_mut(t).copy_from_slice(&dout.row(t)[..h]);
            db.row_mut(t).copy_from_slice(&dout.row(t)[h..]);
        }
        let mut dx = self.fwd.backward_sequence(ps, &cache.fwd, &df)?;
        let dxb_rev = self
            .bwd
            .backward_sequence(ps, &cache.bwd, &db.reverse_rows())?;
        dx.add_assign(&dxb_rev.reverse_rows())?;
        Ok(dx)
    }
}
