//! Dense primal-dual interior-point method for small conic quadratic programs
//!
//! ```text
//! minimize    ½ xᵀP x + cᵀx
//! subject to  A x = b
//!             G x + s = h,   s ∈ K = R₊^l × Q^{m1} × .. × Q^{mk}
//! ```
//!
//! Nesterov-Todd scaling with a Mehrotra predictor-corrector. Redundant equality rows
//! are removed up front with an SVD so the reduced KKT system stays nonsingular.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Default)]
pub struct Cones {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl Cones {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree.
    fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    fn soc_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.soc.iter().scan(self.nonneg, |start, &m| {
            let s = *start;
            *start += m;
            Some((s, m))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConicQp {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: Cones,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol_feas: 1e-10,
            tol_gap: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Solved,
    MaxIterations,
    /// Equality constraints are inconsistent.
    InconsistentEqualities,
    /// Step length collapsed before convergence.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
}

/// Nesterov-Todd scaling, one entry per cone block.
struct Scaling {
    nonneg: Vec<f64>,
    soc: Vec<(f64, DVector<f64>)>,
}

fn soc_det(u: &[f64]) -> f64 {
    let tail: f64 = u[1..].iter().map(|x| x * x).sum();
    u[0] * u[0] - tail
}

/// Distance-like measure of interiority: min over blocks of the smallest "eigenvalue".
fn min_eig(u: &DVector<f64>, cones: &Cones) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..cones.nonneg {
        m = m.min(u[i]);
    }
    for (start, len) in cones.soc_blocks() {
        let tail = u.rows(start + 1, len - 1).norm();
        m = m.min(u[start] - tail);
    }
    m
}

fn add_identity(u: &mut DVector<f64>, alpha: f64, cones: &Cones) {
    for i in 0..cones.nonneg {
        u[i] += alpha;
    }
    for (start, _) in cones.soc_blocks() {
        u[start] += alpha;
    }
}

impl Scaling {
    fn new(s: &DVector<f64>, z: &DVector<f64>, cones: &Cones) -> Self {
        let nonneg = (0..cones.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
        let soc = cones
            .soc_blocks()
            .map(|(start, len)| {
                let sb = s.rows(start, len);
                let zb = z.rows(start, len);
                let sd = soc_det(sb.as_slice()).max(f64::MIN_POSITIVE).sqrt();
                let zd = soc_det(zb.as_slice()).max(f64::MIN_POSITIVE).sqrt();
                let sn = sb / sd;
                let zn = zb / zd;
                let gamma = ((1.0 + sn.dot(&zn)) / 2.0).sqrt();
                let mut wbar = DVector::zeros(len);
                wbar[0] = (sn[0] + zn[0]) / (2.0 * gamma);
                for k in 1..len {
                    wbar[k] = (sn[k] - zn[k]) / (2.0 * gamma);
                }
                let eta = (sd / zd).sqrt();
                (eta, wbar)
            })
            .collect();
        Self { nonneg, soc }
    }

    /// `W x` (inverse = false) or `W⁻¹ x`.
    fn apply(&self, x: &DVector<f64>, cones: &Cones, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for i in 0..cones.nonneg {
            out[i] = if inverse {
                x[i] / self.nonneg[i]
            } else {
                x[i] * self.nonneg[i]
            };
        }
        for ((start, len), (eta, w)) in cones.soc_blocks().zip(&self.soc) {
            let xb = x.rows(start, len);
            let w1 = w.rows(1, len - 1);
            let x1 = xb.rows(1, len - 1);
            let w1x1 = w1.dot(&x1);
            let sign = if inverse { -1.0 } else { 1.0 };
            let scale = if inverse { 1.0 / eta } else { *eta };
            out[start] = scale * (w[0] * xb[0] + sign * w1x1);
            let coef = sign * xb[0] + w1x1 / (1.0 + w[0]);
            for k in 1..len {
                out[start + k] = scale * (xb[k] + coef * w[k]);
            }
        }
        out
    }

    fn apply_rows(&self, g: &DMatrix<f64>, cones: &Cones, inverse: bool) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            let col = self.apply(&g.column(j).into_owned(), cones, inverse);
            out.set_column(j, &col);
        }
        out
    }
}

/// Jordan product `u ∘ v`.
fn jordan(u: &DVector<f64>, v: &DVector<f64>, cones: &Cones) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for i in 0..cones.nonneg {
        out[i] = u[i] * v[i];
    }
    for (start, len) in cones.soc_blocks() {
        out[start] = u.rows(start, len).dot(&v.rows(start, len));
        for k in 1..len {
            out[start + k] = u[start] * v[start + k] + v[start] * u[start + k];
        }
    }
    out
}

/// Solve `λ ∘ x = r` for `x`.
fn jordan_div(lambda: &DVector<f64>, r: &DVector<f64>, cones: &Cones) -> DVector<f64> {
    let mut out = DVector::zeros(r.len());
    for i in 0..cones.nonneg {
        out[i] = r[i] / lambda[i];
    }
    for (start, len) in cones.soc_blocks() {
        let l = lambda.rows(start, len);
        let rb = r.rows(start, len);
        let l1 = l.rows(1, len - 1);
        let r1 = rb.rows(1, len - 1);
        let det = soc_det(l.as_slice());
        let x0 = (l[0] * rb[0] - l1.dot(&r1)) / det;
        out[start] = x0;
        for k in 1..len {
            out[start + k] = (rb[k] - x0 * l[k]) / l[0];
        }
    }
    out
}

/// Largest step `α` keeping `u + α d` in the cone (capped at `cap`).
fn max_step(u: &DVector<f64>, d: &DVector<f64>, cones: &Cones, cap: f64) -> f64 {
    let mut alpha = cap;
    for i in 0..cones.nonneg {
        if d[i] < 0.0 {
            alpha = alpha.min(-u[i] / d[i]);
        }
    }
    for (start, len) in cones.soc_blocks() {
        let ub = u.rows(start, len);
        let db = d.rows(start, len);
        let (u0, d0) = (ub[0], db[0]);
        let u1 = ub.rows(1, len - 1);
        let d1 = db.rows(1, len - 1);
        // det(u + α d) = a α² + 2 b α + c; the first positive root is where the ray leaves.
        let (u1n, d1n) = (u1.norm(), d1.norm());
        let a = (d0 - d1n) * (d0 + d1n);
        let b = u0 * d0 - u1.dot(&d1);
        let c = ((u0 - u1n) * (u0 + u1n)).max(0.0);
        let disc = (b * b - a * c).max(0.0).sqrt();
        let q = -(b + b.signum() * disc);
        let mut root = f64::INFINITY;
        for r in [q / a, c / q] {
            if r.is_finite() && r > 0.0 {
                root = root.min(r);
            }
        }
        if c == 0.0 && b < 0.0 {
            root = 0.0;
        }
        alpha = alpha.min(root);
    }
    alpha
}

/// Replace `A x = b` by an equivalent system with orthonormal rows.
fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Some((DMatrix::zeros(0, n), DVector::zeros(0)));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > smax * 1e-10)
        .collect();
    let mut ar = DMatrix::zeros(keep.len(), n);
    let mut br = DVector::zeros(keep.len());
    let mut projected = DVector::zeros(b.len());
    for (r, &i) in keep.iter().enumerate() {
        let ui = u.column(i);
        let coef = ui.dot(b);
        projected += ui * coef;
        ar.set_row(r, &vt.row(i));
        br[r] = coef / svd.singular_values[i];
    }
    let inconsistency = (b - projected).amax();
    (inconsistency <= 1e-9 * b.amax().max(1.0)).then_some((ar, br))
}

pub fn solve(qp: &ConicQp, settings: &IpmSettings) -> IpmSolution {
    let n = qp.c.len();
    let m = qp.h.len();
    let cones = &qp.cones;
    debug_assert_eq!(cones.dim(), m);

    let Some((a, b)) = reduce_equalities(&qp.a, &qp.b) else {
        return IpmSolution {
            x: DVector::zeros(n),
            s: DVector::zeros(m),
            z: DVector::zeros(m),
            status: IpmStatus::InconsistentEqualities,
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            gap: f64::INFINITY,
            objective: f64::NAN,
        };
    };
    let p_eq = a.nrows();
    let g = &qp.g;

    let solve_kkt = |h_mat: &DMatrix<f64>, rx: &DVector<f64>, ry: &DVector<f64>| {
        let mut k = DMatrix::zeros(n + p_eq, n + p_eq);
        k.view_mut((0, 0), (n, n)).copy_from(h_mat);
        k.view_mut((0, n), (n, p_eq)).copy_from(&a.transpose());
        k.view_mut((n, 0), (p_eq, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + p_eq);
        rhs.rows_mut(0, n).copy_from(rx);
        rhs.rows_mut(n, p_eq).copy_from(ry);
        let lu = k.clone().full_piv_lu();
        let mut sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + p_eq));
        // One step of iterative refinement.
        let resid = &rhs - &k * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        (sol.rows(0, n).into_owned(), sol.rows(n, p_eq).into_owned())
    };

    // Initial point from the W = I system.
    let h0 = &qp.p + g.transpose() * g;
    let (mut x, mut y) = solve_kkt(&h0, &(-&qp.c + g.transpose() * &qp.h), &b);
    let mut s = &qp.h - g * &x;
    let mut z = -s.clone();
    for u in [&mut s, &mut z] {
        let e = min_eig(u, cones);
        if e <= 0.0 || !e.is_finite() {
            add_identity(u, 1.0 - e.min(0.0), cones);
        }
    }

    let deg = cones.degree().max(1) as f64;
    let bnorm = b.amax().max(qp.h.amax()).max(1.0);
    let cnorm = qp.c.amax().max(1.0);
    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let (mut pres, mut dres, mut gap);

    loop {
        let rx = &qp.p * &x + &qp.c + a.transpose() * &y + g.transpose() * &z;
        let ry = &a * &x - &b;
        let rz = g * &x + &s - &qp.h;
        pres = ry.amax().max(rz.amax()) / bnorm;
        dres = rx.amax() / cnorm;
        gap = s.dot(&z);
        let pobj = 0.5 * x.dot(&(&qp.p * &x)) + qp.c.dot(&x);
        if pres <= settings.tol_feas
            && dres <= settings.tol_feas
            && (gap <= settings.tol_gap || gap <= settings.tol_gap * pobj.abs())
        {
            status = IpmStatus::Solved;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let mu = gap / deg;
        let scaling = Scaling::new(&s, &z, cones);
        let lambda = scaling.apply(&z, cones, false);
        let gs = scaling.apply_rows(g, cones, true);
        let h_mat = &qp.p + gs.transpose() * &gs;
        let winv_rz = scaling.apply(&rz, cones, true);

        let direction = |rc: &DVector<f64>| {
            let ldiv = jordan_div(&lambda, rc, cones);
            let rhs_x = -&rx - gs.transpose() * (&ldiv + &winv_rz);
            let (dx, dy) = solve_kkt(&h_mat, &rhs_x, &(-&ry));
            // dz = W⁻¹(Gs dx + λ\rc + W⁻¹rz); the sign of rz follows from G dx + ds = −rz.
            let dz_scaled = &gs * &dx + &ldiv + &winv_rz;
            let dz = scaling.apply(&dz_scaled, cones, true);
            // Taking ds from the linear constraint keeps primal feasibility exact as W degenerates.
            let ds = -&rz - g * &dx;
            let ds_scaled = scaling.apply(&ds, cones, true);
            (dx, dy, dz, ds, ds_scaled, dz_scaled)
        };

        // Predictor.
        let rc_aff = -jordan(&lambda, &lambda, cones);
        let (_, _, dz_a, ds_a, dss_a, dzs_a) = direction(&rc_aff);
        let alpha_a = max_step(&s, &ds_a, cones, 1.0).min(max_step(&z, &dz_a, cones, 1.0));
        let sigma = {
            let s_a = &s + &ds_a * alpha_a;
            let z_a = &z + &dz_a * alpha_a;
            (s_a.dot(&z_a) / gap).clamp(0.0, 1.0).powi(3)
        };

        // Corrector.
        let mut rc = rc_aff - jordan(&dss_a, &dzs_a, cones);
        add_identity(&mut rc, sigma * mu, cones);
        let (dx, dy, dz, ds, _, _) = direction(&rc);
        let alpha_max =
            max_step(&s, &ds, cones, f64::INFINITY).min(max_step(&z, &dz, cones, f64::INFINITY));
        let alpha = (0.99 * alpha_max).min(1.0);
        if !(alpha > 1e-14)
            || !dx
                .iter()
                .chain(dz.iter())
                .chain(ds.iter())
                .all(|v| v.is_finite())
        {
            status = IpmStatus::Stalled;
            break;
        }
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
    }

    let objective = 0.5 * x.dot(&(&qp.p * &x)) + qp.c.dot(&x);
    IpmSolution {
        x,
        s,
        z,
        status,
        iterations,
        primal_residual: pres,
        dual_residual: dres,
        gap,
        objective,
    }
}
