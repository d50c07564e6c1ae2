//! Small synthetic models. These are the workhorses of the test and bench
//! suites: closed-form dynamics whose behavior is known exactly.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::layout::{Layout, PartitionedState};
use crate::model::Model;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// g(y) = y^2 - 4. One algebraic unknown, closed-form roots at +-2.
pub struct ScalarQuadratic;

impl Model for ScalarQuadratic {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| Layout::new(vec![], vec![], vec![], vec!["fix.y".into()]).unwrap())
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
    fn fast_rhs(&self, _s: &PartitionedState, _out: &mut [f64]) {}
    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
        let y = s.algebraic()[0];
        out[0] = y * y - 4.0;
    }
}

/// f = -x + y, g = -2y + z_c. Fast equilibrium is x = y = z_c / 2.
pub struct LinearFastAlgebraic;

impl Model for LinearFastAlgebraic {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| {
            Layout::new(
                vec!["fix.z".into()],
                vec![],
                vec!["fix.x".into()],
                vec!["fix.y".into()],
            )
            .unwrap()
        })
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -s.fast()[0] + s.algebraic()[0];
    }
    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -2.0 * s.algebraic()[0] + s.slow()[0];
    }
}

/// f = -x (x^2 - 1): equilibria at -1 (stable), 0 (unstable), +1 (stable).
/// The basin of +1 is exactly (0, inf).
pub struct CubicFixture;

impl Model for CubicFixture {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| Layout::new(vec![], vec![], vec!["fix.x".into()], vec![]).unwrap())
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        let x = s.fast()[0];
        out[0] = -x * (x * x - 1.0);
    }
    fn algebraic_residual(&self, _s: &PartitionedState, _out: &mut [f64]) {}
}

/// The two-timescale pair `z' = -z + x`, `eps x' = -x + z`.
///
/// The quantity z + eps x is conserved, so trajectories converge to the
/// shared constant c = (z0 + eps x0) / (1 + eps). The slow-manifold reduction
/// keeps z constant. `eps` enters through the simulation config's
/// `epsilon_scale`, not through this struct.
pub struct TwoTimescale;

impl TwoTimescale {
    /// Closed-form slow solution of the full model for z(0)=z0, x(0)=x0 and
    /// time-constant scale `eps` (the oracle for gap measurements).
    pub fn exact_slow(z0: f64, x0: f64, eps: f64, t: f64) -> f64 {
        let c = (z0 + eps * x0) / (1.0 + eps);
        let rate = 1.0 + 1.0 / eps;
        c + (z0 - c) * (-rate * t).exp()
    }
}

impl Model for TwoTimescale {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| {
            Layout::new(vec!["fix.z".into()], vec![], vec!["fix.x".into()], vec![]).unwrap()
        })
    }
    fn slow_rhs(&self, _t: f64, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -s.slow()[0] + s.fast()[0];
    }
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -s.fast()[0] + s.slow()[0];
    }
    fn algebraic_residual(&self, _s: &PartitionedState, _out: &mut [f64]) {}
}

/// Slow drift through an algebraic singularity.
///
/// `z' = 1`, `f = -x + z`, `g = (z_star - z)(y - level)`. The solution branch
/// y = level is smooth, but d g / d y = z_star - z changes sign when the
/// sweep passes z_star, which is where the fast/algebraic block matrix loses
/// rank.
pub struct SingularSweep {
    pub z_star: f64,
    pub level: f64,
}

impl Model for SingularSweep {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| {
            Layout::new(
                vec!["fix.z".into()],
                vec![],
                vec!["fix.x".into()],
                vec!["fix.y".into()],
            )
            .unwrap()
        })
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -s.fast()[0] + s.slow()[0];
    }
    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = (self.z_star - s.slow()[0]) * (s.algebraic()[0] - self.level);
    }
}

/// Van der Pol oscillator as a pure fast model; every nonzero start is
/// trapped on the limit cycle.
pub struct VanDerPol {
    pub mu: f64,
}

impl Model for VanDerPol {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| {
            Layout::new(
                vec![],
                vec![],
                vec!["fix.x1".into(), "fix.x2".into()],
                vec![],
            )
            .unwrap()
        })
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        let [x1, x2] = [s.fast()[0], s.fast()[1]];
        out[0] = x2;
        out[1] = self.mu * (1.0 - x1 * x1) * x2 - x1;
    }
    fn algebraic_residual(&self, _s: &PartitionedState, _out: &mut [f64]) {}
}

/// General linear DAE: f = A x + B y, g = C x + D y, no slow dynamics.
///
/// Used by the randomized equivalence suites: the reduced Jacobian of this
/// model is exactly A - B D^{-1} C.
pub struct LinearDae {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    layout: Layout,
}

impl LinearDae {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        let m = a.nrows();
        let n = d.nrows();
        assert_eq!(a.ncols(), m);
        assert_eq!(b.nrows(), m);
        assert_eq!(b.ncols(), n);
        assert_eq!(c.nrows(), n);
        assert_eq!(c.ncols(), m);
        assert_eq!(d.ncols(), n);
        let layout = Layout::new(vec![], vec![], names("fix.x", m), names("fix.y", n)).unwrap();
        Self { a, b, c, d, layout }
    }

    /// Direct elimination of the algebraic variables: A - B D^{-1} C.
    pub fn eliminated(&self) -> Option<DMatrix<f64>> {
        if self.d.nrows() == 0 {
            return Some(self.a.clone());
        }
        let solved = self.d.clone().lu().solve(&self.c)?;
        Some(&self.a - &self.b * solved)
    }
}

impl Model for LinearDae {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        let x = nalgebra::DVector::from_column_slice(s.fast());
        let y = nalgebra::DVector::from_column_slice(s.algebraic());
        let r = &self.a * x + &self.b * y;
        out.copy_from_slice(r.as_slice());
    }
    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
        let x = nalgebra::DVector::from_column_slice(s.fast());
        let y = nalgebra::DVector::from_column_slice(s.algebraic());
        let r = &self.c * x + &self.d * y;
        out.copy_from_slice(r.as_slice());
    }
}

/// Deterministic xorshift generator for reproducible random fixtures.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-1, 1).
    pub fn next_signed(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| self.next_signed())
    }
}
