//! Radial kernels and dense system assembly.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::geometry::{dist, PointSet};
use crate::{Error, Result};

/// Default cap on `N` for the dense oracle path.
pub const DENSE_CAP: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    /// Regularized logarithm, kernel (i).
    Log,
    /// Regularized 3D Laplace `1/r`, kernel (ii).
    Laplace3d,
    /// Regularized biharmonic `r^2 log r`, kernel (iii).
    Biharmonic,
    BesselY0,
    InverseQuadric,
    InverseMultiquadric,
    /// `a cos(r) / (r cos(a))` outside `a`.
    Helmholtz3d,
    Gaussian,
    Multiquadric,
}

impl KernelKind {
    pub const ALL: [KernelKind; 9] = [
        KernelKind::Log,
        KernelKind::Laplace3d,
        KernelKind::Biharmonic,
        KernelKind::BesselY0,
        KernelKind::InverseQuadric,
        KernelKind::InverseMultiquadric,
        KernelKind::Helmholtz3d,
        KernelKind::Gaussian,
        KernelKind::Multiquadric,
    ];

    pub fn id(self) -> &'static str {
        match self {
            KernelKind::Log => "log",
            KernelKind::Laplace3d => "laplace3d",
            KernelKind::Biharmonic => "biharmonic",
            KernelKind::BesselY0 => "bessel-y0",
            KernelKind::InverseQuadric => "inverse-quadric",
            KernelKind::InverseMultiquadric => "inverse-multiquadric",
            KernelKind::Helmholtz3d => "helmholtz3d",
            KernelKind::Gaussian => "gaussian",
            KernelKind::Multiquadric => "multiquadric",
        }
    }

    /// Kernels with an `r < a` / `r >= a` split.
    pub fn is_regularized(self) -> bool {
        !matches!(self, KernelKind::Gaussian | KernelKind::Multiquadric)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .iter()
            .copied()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownKernel(s.to_string()))
    }
}

/// `exp(-345) ≈ 1e-150`.
const GAUSSIAN_CUTOFF: f64 = 345.0;

/// A kernel together with its regularization radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub a: f64,
    // outer-branch normalizers, cached
    c0: f64,
    c1: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius a = {a} must be positive")));
        }
        let la = a.ln();
        let (c0, c1) = match kind {
            KernelKind::Log => (1.0 / (a * (la - 1.0)), 1.0 / la),
            KernelKind::Laplace3d | KernelKind::Helmholtz3d => (1.0 / a, a),
            KernelKind::Biharmonic => (1.0 / (a.powi(3) * (3.0 * la - 1.0)), 1.0 / (a * a * la)),
            KernelKind::BesselY0 => {
                let y = bessel_y0(a);
                (1.0 + y, 1.0 / y)
            }
            KernelKind::InverseQuadric => (1.0 / a.atan(), 1.0 + a * a),
            KernelKind::InverseMultiquadric => (1.0 / a.asinh(), 1.0 + a * a),
            KernelKind::Gaussian | KernelKind::Multiquadric => (0.0, 0.0),
        };
        Ok(Kernel { kind, a, c0, c1 })
    }

    pub fn from_id(id: &str, a: f64) -> Result<Self> {
        Self::new(id.parse()?, a)
    }

    /// Checked evaluation.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeDistance(r));
        }
        Ok(self.eval(r))
    }

    /// Unchecked evaluation for `r >= 0`.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        let a = self.a;
        match self.kind {
            KernelKind::Log => {
                if r < a {
                    if r == 0.0 {
                        0.0
                    } else {
                        r * (r.ln() - 1.0) * self.c0
                    }
                } else {
                    r.ln() * self.c1
                }
            }
            KernelKind::Laplace3d => {
                if r < a {
                    r * self.c0
                } else {
                    self.c1 / r
                }
            }
            KernelKind::Biharmonic => {
                if r < a {
                    if r == 0.0 {
                        0.0
                    } else {
                        r * r * r * (3.0 * r.ln() - 1.0) * self.c0
                    }
                } else {
                    r * r * r.ln() * self.c1
                }
            }
            KernelKind::BesselY0 => {
                if r < a {
                    if r == 0.0 {
                        0.0
                    } else {
                        self.c0 / (1.0 + bessel_y0(r))
                    }
                } else {
                    bessel_y0(r) * self.c1
                }
            }
            KernelKind::InverseQuadric => {
                if r < a {
                    r.atan() * self.c0
                } else {
                    self.c1 / (1.0 + r * r)
                }
            }
            KernelKind::InverseMultiquadric => {
                if r < a {
                    r.asinh() * self.c0
                } else {
                    (self.c1 / (1.0 + r * r)).sqrt()
                }
            }
            KernelKind::Helmholtz3d => {
                if r < a {
                    r * self.c0
                } else {
                    a * r.cos() / (r * a.cos())
                }
            }
            KernelKind::Gaussian => {
                // tails this small only feed subnormal arithmetic downstream
                let e = r * r / a;
                if e > GAUSSIAN_CUTOFF {
                    0.0
                } else {
                    (-e).exp()
                }
            }
            KernelKind::Multiquadric => (1.0 + r * r / (a * a)).sqrt(),
        }
    }

    /// `K(‖x_i - y_j‖)` for flat coordinate lists.
    pub fn block(&self, dim: usize, xs: &[f64], ys: &[f64]) -> Mat<f64> {
        let m = xs.len() / dim;
        let n = ys.len() / dim;
        Mat::from_fn(m, n, |i, j| self.eval(dist(&xs[i * dim..(i + 1) * dim], &ys[j * dim..(j + 1) * dim])))
    }

    /// Like [`Kernel::block`] but with unit diagonal, for a cluster with itself.
    pub fn self_block(&self, dim: usize, xs: &[f64]) -> Mat<f64> {
        let mut b = self.block(dim, xs, xs);
        for i in 0..b.nrows() {
            b.write(i, i, 1.0);
        }
        b
    }
}

/// `A_ii = 1`, `A_ij = K(‖r_i - r_j‖)`.
pub fn assemble_dense(kernel: &Kernel, ps: &PointSet) -> Result<Mat<f64>> {
    assemble_dense_capped(kernel, ps, DENSE_CAP)
}

pub fn assemble_dense_capped(kernel: &Kernel, ps: &PointSet, cap: usize) -> Result<Mat<f64>> {
    if ps.len() > cap {
        return Err(Error::SizeCap { size: ps.len(), cap });
    }
    Ok(kernel.self_block(ps.dim(), ps.coords()))
}

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Bessel function of the second kind, order zero, for `x > 0`.
pub fn bessel_y0(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x <= 2.0 {
        y0_series(x)
    } else if x < 25.0 {
        y0_neumann(x)
    } else {
        y0_asymptotic(x)
    }
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 2.0 {
        j0_series(x)
    } else if x < 25.0 {
        miller(x).0
    } else {
        let (p, q) = hankel_pq(x);
        let chi = x - std::f64::consts::FRAC_PI_4;
        (FRAC_2_PI / x).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

fn j0_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= -q / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

fn y0_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut s = 0.0;
    for k in 1..40 {
        term *= -q / (k * k) as f64;
        harmonic += 1.0 / k as f64;
        let t = -term * harmonic;
        s += t;
        if t.abs() < 1e-18 * s.abs().max(1e-300) {
            break;
        }
    }
    FRAC_2_PI * (((x / 2.0).ln() + EULER_GAMMA) * j0_series(x) + s)
}

/// Backward recurrence for `J_0` and the Neumann sum `Σ_k (-1)^k J_{2k}/k`.
fn miller(x: f64) -> (f64, f64) {
    let start = 2 * ((x as usize + 30) / 2 + 10);
    let mut jp1 = 0.0;
    let mut j = 1e-30;
    let mut norm = 0.0;
    let mut neumann = 0.0;
    let mut j0 = 0.0;
    for k in (1..=start).rev() {
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        let n = k - 1;
        if n == 0 {
            j0 = j;
            norm += j;
        } else if n % 2 == 0 {
            norm += 2.0 * j;
            let m = n / 2;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            neumann += sign * j / m as f64;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            neumann *= 1e-250;
        }
    }
    (j0 / norm, neumann / norm)
}

fn y0_neumann(x: f64) -> f64 {
    let (j0, s) = miller(x);
    FRAC_2_PI * (((x / 2.0).ln() + EULER_GAMMA) * j0 - 2.0 * s)
}

fn hankel_pq(x: f64) -> (f64, f64) {
    // asymptotic series in 1/(8x), mu = 0
    let z = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut k = 1;
    loop {
        let m = (2 * k - 1) as f64;
        term *= -m * m / (k as f64 * z);
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
        if term.abs() < 1e-17 || k > 60 {
            break;
        }
        k += 1;
    }
    (p, q)
}

fn y0_asymptotic(x: f64) -> f64 {
    let (p, q) = hankel_pq(x);
    let chi = x - std::f64::consts::FRAC_PI_4;
    (FRAC_2_PI / x).sqrt() * (p * chi.sin() + q * chi.cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_a() {
        for kind in KernelKind::ALL.into_iter().filter(|k| k.is_regularized()) {
            let k = Kernel::new(kind, 0.01).unwrap();
            assert!((k.eval(0.01) - 1.0).abs() < 1e-14, "{kind}");
        }
    }

    #[test]
    fn spot_values() {
        let a = 1e-3;
        let lap = Kernel::new(KernelKind::Laplace3d, a).unwrap();
        assert_eq!(lap.eval(0.0), 0.0);
        assert!((lap.eval(0.5) - 0.002).abs() < 1e-18);
        let log = Kernel::new(KernelKind::Log, a).unwrap();
        // a² lies on the inner branch
        let want = a * (2.0 * a.ln() - 1.0) / (a.ln() - 1.0);
        assert!((log.eval(a * a) - want).abs() < 1e-15);
        assert!((log.eval(0.5) - 0.5f64.ln() / a.ln()).abs() < 1e-15);
        assert!(log.evaluate(-1.0).is_err());
        for kind in KernelKind::ALL {
            assert!(Kernel::new(kind, a).unwrap().eval(0.0).is_finite());
        }
    }

    #[test]
    fn ids_roundtrip() {
        for kind in KernelKind::ALL {
            assert_eq!(kind.id().parse::<KernelKind>().unwrap(), kind);
        }
        assert!("hankel".parse::<KernelKind>().is_err());
    }

    // scipy.special.y0 / j0
    #[test]
    fn bessel_reference_values() {
        let y = [
            (1e-6, -8.869031481659443),
            (0.001, -4.471416611375923),
            (0.5, -0.4445187335067066),
            (1.0, 0.08825696421567697),
            (2.0, 0.5103756726497451),
            (3.7, 0.10607431532035433),
            (10.0, 0.05567116728359961),
            (24.0, -0.15283402879758776),
            (30.0, -0.11729573168666398),
            (100.0, -0.0772443133650831),
        ];
        for (x, want) in y {
            let got = bessel_y0(x);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-2), "y0({x}) = {got}, want {want}");
        }
        let j = [(0.5, 0.938469807240813), (5.0, -0.1775967713143383), (40.0, 0.007366890584236951)];
        for (x, want) in j {
            assert!((bessel_j0(x) - want).abs() < 1e-13, "j0({x})");
        }
    }

    #[test]
    fn dense_contract() {
        let ps = PointSet::from_points(2, &[vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let k = Kernel::new(KernelKind::Laplace3d, 1e-3).unwrap();
        let a = assemble_dense(&k, &ps).unwrap();
        assert_eq!(a.read(0, 0), 1.0);
        assert!((a.read(0, 1) - 0.002).abs() < 1e-18);
        let one = PointSet::from_points(2, &[vec![0.1, 0.2]]).unwrap();
        assert_eq!(assemble_dense(&k, &one).unwrap().read(0, 0), 1.0);
        assert!(matches!(assemble_dense_capped(&k, &ps, 1), Err(Error::SizeCap { .. })));
    }
}
